//! Toy trajectory-fitting demo: one learnable point plus a small MLP per
//! temporal segment, fit to a 3D curve with a discontinuity at t = 0.5.
//!
//! Three modes mirror the full pipeline in one dimension: a single model
//! over [0, 1); two models split at the midpoint (half-open); and the
//! split pair with a consistency penalty near the boundary that ties the
//! two models to each other and the off-segment model to the target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mlp::Mlp;
use crate::optim::{Adam, AdamHyper};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCurveSpec {
    pub sample_count: usize,
    /// With the kink: position jump of 0.5 in x and a velocity reversal
    /// in z at t = 0.5. Without: the first branch everywhere.
    pub kinked: bool,
}

impl Default for ToyCurveSpec {
    fn default() -> Self {
        Self {
            sample_count: 200,
            kinked: true,
        }
    }
}

/// The target curve p(t) on [0, 1).
pub fn target_position(t: f64, kinked: bool) -> Vec3 {
    let phase = 2.0 * std::f64::consts::PI * t;
    if kinked && t >= 0.5 {
        Vec3::new(phase.sin() + 0.5, phase.cos(), 2.0 - 2.0 * t)
    } else {
        Vec3::new(phase.sin(), phase.cos(), 2.0 * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyMode {
    Single,
    Partitioned,
    PartitionedWithConsistency,
}

/// Half-open boundary-window radius, in units of the sample spacing.
const BOUNDARY_SAMPLES: f64 = 5.0;
const HIDDEN: usize = 64;
const LR: f64 = 5e-3;

struct ToyModel {
    point: Vec3,
    mlp: Mlp,
    opt_point: Adam,
    opt_layers: Vec<(Adam, Adam)>,
}

impl ToyModel {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mlp = Mlp::new(&[1, HIDDEN, HIDDEN, 3], rng);
        let hyper = AdamHyper::with_lr(LR);
        let opt_layers = mlp
            .layers
            .iter()
            .map(|l| {
                (
                    Adam::new(hyper, l.weight.len()),
                    Adam::new(hyper, l.bias.len()),
                )
            })
            .collect();
        Self {
            point: Vec3::zeros(),
            mlp,
            opt_point: Adam::new(hyper, 3),
            opt_layers,
        }
    }

    fn eval(&self, t: f64) -> Vec3 {
        let out = self.mlp.forward(&[t]);
        self.point + Vec3::new(out[0], out[1], out[2])
    }

    /// Accumulate gradients for a batch of (t, cotangent-on-output) and
    /// apply one optimizer step.
    fn step(&mut self, batch: &[(f64, Vec3)]) {
        let mut d_point = Vec3::zeros();
        let mut grad = crate::mlp::MlpGrad::zeros_like(&self.mlp);
        for (t, d_out) in batch {
            d_point += d_out;
            let (_, cache) = self.mlp.forward_cached(&[*t]);
            let (_, g) = self.mlp.backward(&cache, d_out.as_slice());
            grad.add_assign(&g);
        }
        self.opt_point.step(self.point.as_mut_slice(), d_point.as_slice());
        for (li, layer) in self.mlp.layers.iter_mut().enumerate() {
            self.opt_layers[li].0.step(&mut layer.weight, &grad.layers[li].0);
            self.opt_layers[li].1.step(&mut layer.bias, &grad.layers[li].1);
        }
    }
}

/// One row of the toy CSV: evaluation-grid time, target, prediction, and
/// which model produced it.
#[derive(Debug, Clone)]
pub struct ToyRow {
    pub t: f64,
    pub target: Vec3,
    pub prediction: Vec3,
    pub model: usize,
}

#[derive(Debug, Clone)]
pub struct ToyFitResult {
    /// Mean squared trajectory error on a dense evaluation grid.
    pub mse: f64,
    /// |left(0.5) - right(0.5)| for the two-model modes.
    pub boundary_gap: Option<f64>,
    pub rows: Vec<ToyRow>,
}

pub fn toy_fit(
    spec: &ToyCurveSpec,
    mode: ToyMode,
    iterations: u64,
    seed: u64,
) -> ToyFitResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.sample_count;
    let samples: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let targets: Vec<Vec3> = samples
        .iter()
        .map(|&t| target_position(t, spec.kinked))
        .collect();

    match mode {
        ToyMode::Single => {
            let mut model = ToyModel::new(&mut rng);
            for _ in 0..iterations {
                let scale = 2.0 / n as f64;
                let batch: Vec<(f64, Vec3)> = samples
                    .iter()
                    .zip(&targets)
                    .map(|(&t, y)| (t, (model.eval(t) - y) * scale))
                    .collect();
                model.step(&batch);
            }
            finish(spec, &[model], None)
        }
        ToyMode::Partitioned | ToyMode::PartitionedWithConsistency => {
            let mut left = ToyModel::new(&mut rng);
            let mut right = ToyModel::new(&mut rng);
            let consistency = mode == ToyMode::PartitionedWithConsistency;
            let radius = BOUNDARY_SAMPLES / n as f64;
            let owns_left = |t: f64| t < 0.5;
            let n_left = samples.iter().filter(|&&t| owns_left(t)).count().max(1);
            let n_right = (n - n_left).max(1);
            for _ in 0..iterations {
                let mut batch_left: Vec<(f64, Vec3)> = Vec::new();
                let mut batch_right: Vec<(f64, Vec3)> = Vec::new();
                for (&t, y) in samples.iter().zip(&targets) {
                    if owns_left(t) {
                        batch_left.push((t, (left.eval(t) - y) * (2.0 / n_left as f64)));
                    } else {
                        batch_right.push((t, (right.eval(t) - y) * (2.0 / n_right as f64)));
                    }
                    if consistency && (t - 0.5).abs() <= radius {
                        // 0.5 * |L - R|^2 ties the two models; |neighbor - y|^2
                        // anchors the off-segment model to the target.
                        let diff = left.eval(t) - right.eval(t);
                        batch_left.push((t, diff * (2.0 * 0.5)));
                        batch_right.push((t, -diff * (2.0 * 0.5)));
                        if owns_left(t) {
                            batch_right.push((t, (right.eval(t) - y) * 2.0));
                        } else {
                            batch_left.push((t, (left.eval(t) - y) * 2.0));
                        }
                    }
                }
                left.step(&batch_left);
                right.step(&batch_right);
            }
            let gap = (left.eval(0.5) - right.eval(0.5)).norm();
            finish(spec, &[left, right], Some(gap))
        }
    }
}

fn finish(spec: &ToyCurveSpec, models: &[ToyModel], gap: Option<f64>) -> ToyFitResult {
    let grid = 1000;
    let mut rows = Vec::with_capacity(grid);
    let mut mse = 0.0;
    for i in 0..grid {
        let t = i as f64 / grid as f64;
        let target = target_position(t, spec.kinked);
        let model_idx = if models.len() == 1 || t < 0.5 { 0 } else { 1 };
        let prediction = models[model_idx].eval(t);
        mse += (prediction - target).norm_squared();
        rows.push(ToyRow {
            t,
            target,
            prediction,
            model: model_idx,
        });
    }
    ToyFitResult {
        mse: mse / grid as f64,
        boundary_gap: gap,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_has_the_stated_discontinuity() {
        let before = target_position(0.4999999, true);
        let after = target_position(0.5, true);
        assert!((after - before).norm() > 0.49, "jump at t = 0.5");
        let cont_b = target_position(0.4999999, false);
        let cont_a = target_position(0.5, false);
        assert!((cont_a - cont_b).norm() < 1e-4);
    }

    #[test]
    fn continuous_curve_single_mode_fits_well() {
        let spec = ToyCurveSpec {
            sample_count: 200,
            kinked: false,
        };
        let result = toy_fit(&spec, ToyMode::Single, 4000, 1);
        assert!(result.mse < 1e-3, "mse = {}", result.mse);
        assert!(result.boundary_gap.is_none());
    }

    #[test]
    fn partitioned_beats_single_on_the_kinked_curve() {
        let spec = ToyCurveSpec::default();
        let single = toy_fit(&spec, ToyMode::Single, 1500, 3);
        let split = toy_fit(&spec, ToyMode::Partitioned, 1500, 3);
        assert!(
            split.mse < single.mse,
            "partitioned {} vs single {}",
            split.mse,
            single.mse
        );
    }

    #[test]
    fn consistency_shrinks_the_boundary_gap() {
        let spec = ToyCurveSpec::default();
        let split = toy_fit(&spec, ToyMode::Partitioned, 1500, 4);
        let cons = toy_fit(&spec, ToyMode::PartitionedWithConsistency, 1500, 4);
        let g_split = split.boundary_gap.unwrap();
        let g_cons = cons.boundary_gap.unwrap();
        assert!(g_cons < g_split, "gap {} vs {}", g_cons, g_split);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ToyCurveSpec::default();
        let a = toy_fit(&spec, ToyMode::Partitioned, 50, 9);
        let b = toy_fit(&spec, ToyMode::Partitioned, 50, 9);
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.boundary_gap, b.boundary_gap);
    }
}
