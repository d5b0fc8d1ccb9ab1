//! Synthetic dynamic scenes with exact ground truth.
//!
//! Scenes are JSON specs: a frame count, a background color, a list of
//! Gaussian blobs each with a trajectory, a camera set (>= 2 training
//! views + 1 held-out view), and a high-dynamic crop rectangle used by
//! evaluation. Ground-truth frames are rendered by the same splat
//! renderer used for training, so perfect reconstruction is achievable
//! in principle and quality deltas isolate the partitioning method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::image::Image;
use crate::render::{render_params, OrthoCamera, RenderOptions};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(rename = "T")]
    pub t_frames: u32,
    pub background: [f64; 3],
    pub blobs: Vec<BlobSpec>,
    pub cameras: Vec<CameraSpec>,
    pub crop: CropRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub params: BlobParams,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub mu: [f64; 3],
    #[serde(default = "identity_quat")]
    pub rot: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn unit_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Stationary,
    /// mu + direction * amplitude * sin(2 pi * frequency * t / T).
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default = "unit_x")]
        direction: [f64; 3],
    },
    /// Linear out-and-back: reaches mu + direction * amplitude at
    /// `reversal_frame`, where the velocity flips sign abruptly.
    Reversal {
        amplitude: f64,
        reversal_frame: u32,
        #[serde(default = "unit_x")]
        direction: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraRole {
    Train,
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    /// Row-major 3x3 view rotation; validated orthonormal.
    pub view_rot: [[f64; 3]; 3],
    pub view_trans: [f64; 3],
    pub pixels_per_unit: f64,
    pub width: usize,
    pub height: usize,
    pub role: CameraRole,
}

impl CameraSpec {
    pub fn to_camera(&self) -> OrthoCamera {
        OrthoCamera {
            view_rot: Mat3::from_rows(&[
                self.view_rot[0].into(),
                self.view_rot[1].into(),
                self.view_rot[2].into(),
            ]),
            view_trans: Vec3::from_row_slice(&self.view_trans),
            pixels_per_unit: self.pixels_per_unit,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_frames < 2 {
            return Err(Error::Config("scene needs at least 2 frames".into()));
        }
        if self.blobs.is_empty() {
            return Err(Error::Config("scene has no blobs".into()));
        }
        let train = self.train_camera_indices();
        if train.len() < 2 {
            return Err(Error::Config("scene needs at least 2 training views".into()));
        }
        let held = self.held_out_camera_index();
        let Some(held) = held else {
            return Err(Error::Config("scene needs a held-out view".into()));
        };
        for (i, cam) in self.cameras.iter().enumerate() {
            cam.to_camera()
                .validate()
                .map_err(|e| Error::Config(format!("camera {i}: {e}")))?;
        }
        let hc = &self.cameras[held];
        if self.crop.width == 0
            || self.crop.height == 0
            || self.crop.x + self.crop.width > hc.width
            || self.crop.y + self.crop.height > hc.height
        {
            return Err(Error::Config("crop outside held-out view bounds".into()));
        }
        for (i, blob) in self.blobs.iter().enumerate() {
            let finite = blob.params.mu.iter().all(|v| v.is_finite())
                && blob.params.log_scale.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Config(format!("blob {i} has non-finite params")));
            }
            if let TrajectorySpec::Reversal { reversal_frame, .. } = blob.trajectory {
                if reversal_frame == 0 || reversal_frame >= self.t_frames {
                    return Err(Error::Config(format!(
                        "blob {i}: reversal_frame {reversal_frame} outside (0, T)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn train_camera_indices(&self) -> Vec<usize> {
        self.cameras
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == CameraRole::Train)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn held_out_camera_index(&self) -> Option<usize> {
        self.cameras.iter().position(|c| c.role == CameraRole::HeldOut)
    }

    pub fn camera(&self, index: usize) -> OrthoCamera {
        self.cameras[index].to_camera()
    }

    pub fn background(&self) -> Vec3 {
        Vec3::from_row_slice(&self.background)
    }
}

fn normalized(v: [f64; 3]) -> Vec3 {
    let d = Vec3::from_row_slice(&v);
    let n = d.norm();
    if n < 1e-12 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        d / n
    }
}

/// Blob position at frame t.
pub fn position_at(blob: &BlobSpec, t: u32, t_frames: u32) -> Vec3 {
    let base = Vec3::from_row_slice(&blob.params.mu);
    match &blob.trajectory {
        TrajectorySpec::Stationary => base,
        TrajectorySpec::Sinusoid {
            amplitude,
            frequency,
            direction,
        } => {
            let phase = 2.0 * std::f64::consts::PI * frequency * t as f64 / t_frames as f64;
            base + normalized(*direction) * (amplitude * phase.sin())
        }
        TrajectorySpec::Reversal {
            amplitude,
            reversal_frame,
            direction,
        } => {
            let rev = *reversal_frame as f64;
            let tau = t as f64;
            let factor = if tau <= rev {
                tau / rev
            } else {
                ((2.0 * rev - tau) / rev).max(0.0)
            };
            base + normalized(*direction) * (amplitude * factor)
        }
    }
}

/// Per-frame ground-truth parameters for every blob; lineage ids are the
/// blob indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<Vec<GaussianParams>>,
}

pub fn gen_scene(spec: &SceneSpec) -> GroundTruth {
    let frames = (0..spec.t_frames)
        .map(|t| {
            spec.blobs
                .iter()
                .enumerate()
                .map(|(i, blob)| GaussianParams {
                    mu: position_at(blob, t, spec.t_frames),
                    rot: blob.params.rot,
                    log_scale: Vec3::from_row_slice(&blob.params.log_scale),
                    opacity_logit: blob.params.opacity_logit,
                    color: Vec3::from_row_slice(&blob.params.color),
                    lineage_id: i as u64,
                })
                .collect()
        })
        .collect();
    GroundTruth { frames }
}

/// Ground-truth frame rendered through the production splat renderer.
pub fn gt_frame(spec: &SceneSpec, gt: &GroundTruth, t: u32, camera_index: usize) -> Result<Image> {
    if t >= spec.t_frames {
        return Err(Error::TimestampOutOfRange {
            t: t as f64,
            t_end: spec.t_frames as f64,
        });
    }
    render_params(
        &gt.frames[t as usize],
        &spec.camera(camera_index),
        spec.background(),
        &RenderOptions::default(),
    )
}

fn yaw_camera(theta: f64, scene_depth: f64, ppu: f64, width: usize, height: usize, role: CameraRole) -> CameraSpec {
    let (s, c) = theta.sin_cos();
    CameraSpec {
        view_rot: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        // Keep the scene center (0, 0, scene_depth) on the image center.
        view_trans: [-s * scene_depth, 0.0, 0.0],
        pixels_per_unit: ppu,
        width,
        height,
        role,
    }
}

/// Blob index of the designated slow blob in the reference scene.
pub const REFERENCE_SLOW_BLOB: usize = 48;
/// Blob index of the designated fast (reversing) blob.
pub const REFERENCE_FAST_BLOB: usize = 49;

/// The reference scene: 48 stationary background blobs, one slow
/// sinusoidal blob, and a cluster of six fast blobs with conflicting
/// motions inside the high-dynamic crop — the designated fast blob
/// reverses direction abruptly at T/2. The stationary majority keeps the
/// percentile-ranked dynamic scores of the movers in the top decile.
pub fn reference_scene() -> SceneSpec {
    let mut blobs = Vec::new();
    let palette = [
        [0.85, 0.35, 0.25],
        [0.30, 0.55, 0.85],
        [0.80, 0.75, 0.30],
        [0.45, 0.80, 0.45],
        [0.70, 0.40, 0.75],
        [0.35, 0.75, 0.75],
        [0.60, 0.60, 0.90],
        [0.75, 0.55, 0.35],
    ];
    // 8 x 6 grid above the crop band.
    let xs = [-2.1, -1.5, -0.9, -0.3, 0.3, 0.9, 1.5, 2.1];
    let ys = [-2.1, -1.5, -0.9, -0.3, 0.3, 0.9];
    for (i, (&y, &x)) in ys
        .iter()
        .flat_map(|y| xs.iter().map(move |x| (y, x)))
        .enumerate()
    {
        blobs.push(BlobSpec {
            params: BlobParams {
                mu: [x, y, 3.0 + 0.03 * i as f64],
                rot: if i % 3 == 0 {
                    [0.96, 0.0, 0.0, 0.28] // mild roll for texture
                } else {
                    identity_quat()
                },
                log_scale: [
                    (0.26 + 0.02 * (i % 4) as f64).ln(),
                    (0.22 + 0.015 * (i % 3) as f64).ln(),
                    (0.24f64).ln(),
                ],
                opacity_logit: 1.5,
                color: palette[i % palette.len()],
            },
            trajectory: TrajectorySpec::Stationary,
        });
    }

    // Slow sinusoidal blob, mid-frame, outside the crop.
    blobs.push(BlobSpec {
        params: BlobParams {
            mu: [1.6, -1.2, 2.8],
            rot: identity_quat(),
            log_scale: [(0.30f64).ln(), (0.30f64).ln(), (0.30f64).ln()],
            opacity_logit: 1.8,
            color: [0.25, 0.85, 0.35],
        },
        trajectory: TrajectorySpec::Sinusoid {
            amplitude: 0.25,
            frequency: 1.0,
            direction: [0.0, 1.0, 0.0],
        },
    });

    // The high-dynamic cluster. The designated fast blob reverses at
    // T/2; its companions move on conflicting directions, phases, and
    // frequencies so a single shared network has to average them.
    let cluster: [(BlobParams, TrajectorySpec); 6] = [
        (
            BlobParams {
                mu: [-0.5, 1.55, 2.60],
                rot: identity_quat(),
                log_scale: [(0.33f64).ln(), (0.33f64).ln(), (0.33f64).ln()],
                opacity_logit: 2.0,
                color: [0.95, 0.20, 0.15],
            },
            TrajectorySpec::Reversal {
                amplitude: 0.9,
                reversal_frame: 60,
                direction: [1.0, 0.0, 0.0],
            },
        ),
        (
            BlobParams {
                mu: [0.7, 1.35, 2.50],
                rot: identity_quat(),
                log_scale: [(0.28f64).ln(), (0.28f64).ln(), (0.28f64).ln()],
                opacity_logit: 1.8,
                color: [0.95, 0.60, 0.15],
            },
            TrajectorySpec::Reversal {
                amplitude: 0.55,
                reversal_frame: 45,
                direction: [-1.0, 0.0, 0.0],
            },
        ),
        (
            BlobParams {
                mu: [-0.9, 1.80, 2.70],
                rot: identity_quat(),
                log_scale: [(0.27f64).ln(), (0.27f64).ln(), (0.27f64).ln()],
                opacity_logit: 1.8,
                color: [0.20, 0.85, 0.90],
            },
            TrajectorySpec::Sinusoid {
                amplitude: 0.42,
                frequency: 3.0,
                direction: [1.0, 0.0, 0.0],
            },
        ),
        (
            BlobParams {
                mu: [0.2, 1.85, 2.40],
                rot: identity_quat(),
                log_scale: [(0.26f64).ln(), (0.26f64).ln(), (0.26f64).ln()],
                opacity_logit: 1.8,
                color: [0.90, 0.90, 0.25],
            },
            TrajectorySpec::Sinusoid {
                amplitude: 0.40,
                frequency: 4.0,
                direction: [0.0, 1.0, 0.0],
            },
        ),
        (
            BlobParams {
                mu: [0.95, 1.55, 2.55],
                rot: identity_quat(),
                log_scale: [(0.27f64).ln(), (0.27f64).ln(), (0.27f64).ln()],
                opacity_logit: 1.8,
                color: [0.80, 0.30, 0.85],
            },
            TrajectorySpec::Sinusoid {
                amplitude: 0.38,
                frequency: 2.0,
                direction: [-0.7071067811865476, 0.7071067811865476, 0.0],
            },
        ),
        (
            BlobParams {
                mu: [-1.15, 1.25, 2.65],
                rot: identity_quat(),
                log_scale: [(0.29f64).ln(), (0.29f64).ln(), (0.29f64).ln()],
                opacity_logit: 1.8,
                color: [0.35, 0.60, 0.95],
            },
            TrajectorySpec::Reversal {
                amplitude: 0.7,
                reversal_frame: 80,
                direction: [1.0, 0.0, 0.0],
            },
        ),
    ];
    for (params, trajectory) in cluster {
        blobs.push(BlobSpec { params, trajectory });
    }

    SceneSpec {
        t_frames: 120,
        background: [0.05, 0.05, 0.08],
        blobs,
        cameras: vec![
            yaw_camera(0.35, 3.5, 12.0, 64, 64, CameraRole::Train),
            yaw_camera(-0.35, 3.5, 12.0, 64, 64, CameraRole::Train),
            yaw_camera(0.0, 3.5, 12.0, 64, 64, CameraRole::HeldOut),
        ],
        crop: CropRect {
            x: 10,
            y: 42,
            width: 44,
            height: 20,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{max_displacement, variance, PositionHistory};
    use approx::assert_relative_eq;

    #[test]
    fn reference_scene_validates() {
        let spec = reference_scene();
        spec.validate().unwrap();
        assert_eq!(spec.blobs.len(), 55);
        assert_eq!(spec.train_camera_indices(), vec![0, 1]);
        assert_eq!(spec.held_out_camera_index(), Some(2));
    }

    #[test]
    fn scene_json_round_trip_rejects_unknown_keys() {
        let spec = reference_scene();
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);

        let mut val: serde_json::Value = serde_json::from_str(&json).unwrap();
        val["unexpected_key"] = serde_json::json!(1);
        let err = serde_json::from_value::<SceneSpec>(val).unwrap_err();
        assert!(err.to_string().contains("unexpected_key"));
    }

    #[test]
    fn stationary_blob_is_identical_at_all_frames() {
        let spec = reference_scene();
        let gt = gen_scene(&spec);
        for t in 1..spec.t_frames as usize {
            assert_eq!(gt.frames[t][0], gt.frames[0][0]);
        }
    }

    #[test]
    fn slow_blob_displacement_matches_amplitude() {
        let spec = reference_scene();
        let slow = &spec.blobs[REFERENCE_SLOW_BLOB];
        let TrajectorySpec::Sinusoid { amplitude, .. } = slow.trajectory else {
            panic!("blob 12 should be the sinusoid");
        };
        // Quarter period: sin reaches 1.
        let p0 = position_at(slow, 0, spec.t_frames);
        let p30 = position_at(slow, 30, spec.t_frames);
        assert_relative_eq!((p30 - p0).norm(), amplitude, epsilon = 1e-12);
    }

    #[test]
    fn reversal_blob_turns_at_reversal_frame() {
        let spec = reference_scene();
        let fast = &spec.blobs[REFERENCE_FAST_BLOB];
        let p59 = position_at(fast, 59, spec.t_frames);
        let p60 = position_at(fast, 60, spec.t_frames);
        let p61 = position_at(fast, 61, spec.t_frames);
        let v_in = p60 - p59;
        let v_out = p61 - p60;
        assert!(v_in.x > 0.0 && v_out.x < 0.0, "velocity must flip sign");
        assert_relative_eq!(p60.x - (-0.5), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn gt_trajectory_scores_rank_fast_slow_stationary() {
        let spec = reference_scene();
        let gt = gen_scene(&spec);
        let n = spec.blobs.len();
        let mut histories: Vec<PositionHistory> = (0..n)
            .map(|_| PositionHistory::new(spec.t_frames as usize))
            .collect();
        for (t, frame) in gt.frames.iter().enumerate() {
            for (i, p) in frame.iter().enumerate() {
                histories[i].record(p.mu, t as u64);
            }
        }
        let fast_r = max_displacement(&histories[REFERENCE_FAST_BLOB]);
        let slow_r = max_displacement(&histories[REFERENCE_SLOW_BLOB]);
        let fast_v = variance(&histories[REFERENCE_FAST_BLOB]);
        let slow_v = variance(&histories[REFERENCE_SLOW_BLOB]);
        assert!(fast_r > slow_r, "{fast_r} vs {slow_r}");
        assert!(fast_v > slow_v, "{fast_v} vs {slow_v}");
        for i in 0..REFERENCE_SLOW_BLOB {
            assert_eq!(max_displacement(&histories[i]), 0.0);
            assert!(slow_r > 0.0);
        }

        // Full score pipeline on the GT trajectories: strict ranking.
        let refs: Vec<(usize, &PositionHistory)> =
            histories.iter().enumerate().map(|(i, h)| (i, h)).collect();
        let batch = crate::score::score_batch(&refs, crate::score::ScoreMode::Full);
        let score_of = |i: usize| batch.entries[i].score;
        assert!(score_of(REFERENCE_FAST_BLOB) > score_of(REFERENCE_SLOW_BLOB));
        for i in 0..REFERENCE_SLOW_BLOB {
            assert!(score_of(REFERENCE_SLOW_BLOB) > score_of(i));
        }
    }

    #[test]
    fn gt_frame_is_pure_and_definitional() {
        let spec = reference_scene();
        let gt = gen_scene(&spec);
        let a = gt_frame(&spec, &gt, 17, 2).unwrap();
        let b = gt_frame(&spec, &gt, 17, 2).unwrap();
        assert_eq!(a, b);

        // Definitional oracle: render(project(activate(params))).
        let direct = render_params(
            &gt.frames[17],
            &spec.camera(2),
            spec.background(),
            &RenderOptions::default(),
        )
        .unwrap();
        assert_eq!(a, direct);
    }

    #[test]
    fn stationary_only_scene_gt_is_constant() {
        let mut spec = reference_scene();
        spec.blobs.truncate(REFERENCE_SLOW_BLOB); // stationary only
        let gt = gen_scene(&spec);
        let f0 = gt_frame(&spec, &gt, 0, 2).unwrap();
        let f77 = gt_frame(&spec, &gt, 77, 2).unwrap();
        assert_eq!(f0, f77);
    }

    #[test]
    fn fast_blob_lives_inside_the_crop() {
        let spec = reference_scene();
        let cam = spec.camera(spec.held_out_camera_index().unwrap());
        let fast = &spec.blobs[REFERENCE_FAST_BLOB];
        for t in 0..spec.t_frames {
            let p = position_at(fast, t, spec.t_frames);
            let px = cam.pixels_per_unit * p.x + cam.width as f64 / 2.0;
            let py = cam.pixels_per_unit * p.y + cam.height as f64 / 2.0;
            assert!(
                px >= spec.crop.x as f64
                    && px < (spec.crop.x + spec.crop.width) as f64
                    && py >= spec.crop.y as f64
                    && py < (spec.crop.y + spec.crop.height) as f64,
                "frame {t}: ({px}, {py}) outside crop"
            );
        }
    }
}
