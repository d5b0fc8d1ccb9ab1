//! Embedding-based coarse/fine deformation for one temporal segment.
//!
//! Every Gaussian carries a learnable embedding z_g; every timestamp maps
//! to a coarse embedding (linear interpolation between uniformly spaced
//! knots, for low-frequency motion) and a fine embedding (one table row
//! per frame). Two MLPs predict per-attribute deltas from (z_g, z_t) and
//! the final deformation is the sum of the coarse and fine predictions,
//! unpacked as 14 = 3 dmu + 4 dq + 3 ds + 1 dalpha + 3 dcolor.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::mlp::{Mlp, MlpCache, MlpGrad};
use crate::partition::FrameRange;
use crate::Vec3;

/// Output width of a deformation network.
pub const DELTA_DIM: usize = 14;

/// Embedding and network sizing. The defaults are deliberately small;
/// everything is configurable.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub gaussian_dim: usize,
    pub coarse_dim: usize,
    pub fine_dim: usize,
    pub hidden_dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            gaussian_dim: 16,
            coarse_dim: 8,
            fine_dim: 8,
            hidden_dim: 64,
        }
    }
}

/// Flat row-major table of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Table {
    pub fn random<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            data: (0..rows * cols).map(|_| rng.random_range(-0.1..0.1)).collect(),
            rows,
            cols,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Number of coarse knots for a sequence of `n_frames`.
pub fn coarse_knot_count(n_frames: usize) -> usize {
    (n_frames / 10).max(2)
}

/// Coarse and fine temporal embedding tables over the full sequence
/// [0, T). Knots sit at k * T / (N_coarse - 1) so the grid spans [0, T];
/// replicated fields deep-copy the tables, keeping knot times fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEmbeddings {
    pub coarse: Table,
    pub fine: Table,
    pub t_total: f64,
}

impl TemporalEmbeddings {
    pub fn random<R: Rng>(n_frames: usize, cfg: &EmbeddingConfig, rng: &mut R) -> Self {
        Self {
            coarse: Table::random(coarse_knot_count(n_frames), cfg.coarse_dim, rng),
            fine: Table::random(n_frames, cfg.fine_dim, rng),
            t_total: n_frames as f64,
        }
    }
}

/// Interpolation footprint of one coarse lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseInterp {
    pub knot_lo: usize,
    pub knot_hi: usize,
    /// Weight of the high knot; the low knot gets 1 - w_hi.
    pub w_hi: f64,
}

/// Temporal embedding lookup: fine row at the frame index of t, coarse
/// row interpolated between the two bracketing knots.
pub fn temporal_embed(t: f64, emb: &TemporalEmbeddings) -> Result<(Vec<f64>, Vec<f64>)> {
    let (z_tc, z_tf, _, _) = temporal_embed_detailed(t, emb)?;
    Ok((z_tc, z_tf))
}

pub fn temporal_embed_detailed(
    t: f64,
    emb: &TemporalEmbeddings,
) -> Result<(Vec<f64>, Vec<f64>, CoarseInterp, usize)> {
    if !(t >= 0.0 && t < emb.t_total) {
        return Err(Error::TimestampOutOfRange {
            t,
            t_end: emb.t_total,
        });
    }
    let spacing = emb.t_total / (emb.coarse.rows - 1) as f64;
    let cell = t / spacing;
    let knot_lo = (cell.floor() as usize).min(emb.coarse.rows - 2);
    let w_hi = cell - knot_lo as f64;
    let interp = CoarseInterp {
        knot_lo,
        knot_hi: knot_lo + 1,
        w_hi,
    };

    let lo = emb.coarse.row(interp.knot_lo);
    let hi = emb.coarse.row(interp.knot_hi);
    let z_tc: Vec<f64> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (1.0 - w_hi) * a + w_hi * b)
        .collect();

    let frame = t.floor() as usize;
    let z_tf = emb.fine.row(frame).to_vec();
    Ok((z_tc, z_tf, interp, frame))
}

/// The coarse/fine network pair owning one temporal segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformNet {
    pub coarse: Mlp,
    pub fine: Mlp,
    pub network_id: u32,
    pub segment: FrameRange,
}

impl DeformNet {
    pub fn new<R: Rng>(
        cfg: &EmbeddingConfig,
        network_id: u32,
        segment: FrameRange,
        rng: &mut R,
    ) -> Self {
        let mut coarse = Mlp::new(
            &[
                cfg.gaussian_dim + cfg.coarse_dim,
                cfg.hidden_dim,
                cfg.hidden_dim,
                DELTA_DIM,
            ],
            rng,
        );
        let mut fine = Mlp::new(
            &[
                cfg.gaussian_dim + cfg.fine_dim,
                cfg.hidden_dim,
                cfg.hidden_dim,
                DELTA_DIM,
            ],
            rng,
        );
        // Zero heads: training starts from the identity deformation.
        coarse.zero_output_head();
        fine.zero_output_head();
        Self {
            coarse,
            fine,
            network_id,
            segment,
        }
    }
}

/// One segment's deformation state: the network pair plus its temporal
/// embedding tables. Per-Gaussian embeddings live with the instances and
/// are passed into `deform` explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub net: DeformNet,
    pub temporal: TemporalEmbeddings,
}

impl DeformationField {
    pub fn new<R: Rng>(
        cfg: &EmbeddingConfig,
        n_frames: usize,
        network_id: u32,
        segment: FrameRange,
        rng: &mut R,
    ) -> Self {
        Self {
            net: DeformNet::new(cfg, network_id, segment, rng),
            temporal: TemporalEmbeddings::random(n_frames, cfg, rng),
        }
    }

    /// Deep copy under a new id/segment; parameters are bitwise equal.
    pub fn replicate(&self, network_id: u32, segment: FrameRange) -> Self {
        let mut child = self.clone();
        child.net.network_id = network_id;
        child.net.segment = segment;
        child
    }
}

/// Per-attribute deformation deltas, added to the raw parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeformationDelta {
    pub d_mu: Vec3,
    pub d_rot: [f64; 4],
    pub d_log_scale: Vec3,
    pub d_opacity_logit: f64,
    pub d_color: Vec3,
}

impl DeformationDelta {
    pub fn from_raw(raw: &[f64]) -> Self {
        debug_assert_eq!(raw.len(), DELTA_DIM);
        Self {
            d_mu: Vec3::new(raw[0], raw[1], raw[2]),
            d_rot: [raw[3], raw[4], raw[5], raw[6]],
            d_log_scale: Vec3::new(raw[7], raw[8], raw[9]),
            d_opacity_logit: raw[10],
            d_color: Vec3::new(raw[11], raw[12], raw[13]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mu.iter().all(|v| v.is_finite())
            && self.d_rot.iter().all(|v| v.is_finite())
            && self.d_log_scale.iter().all(|v| v.is_finite())
            && self.d_opacity_logit.is_finite()
            && self.d_color.iter().all(|v| v.is_finite())
    }
}

fn check_dims(z_g: &[f64], z_tc: &[f64], z_tf: &[f64], net: &DeformNet) -> Result<()> {
    if z_g.len() + z_tc.len() != net.coarse.in_dim()
        || z_g.len() + z_tf.len() != net.fine.in_dim()
    {
        return Err(Error::DimensionMismatch(format!(
            "deform inputs ({}, {}, {}) vs nets ({}, {})",
            z_g.len(),
            z_tc.len(),
            z_tf.len(),
            net.coarse.in_dim(),
            net.fine.in_dim()
        )));
    }
    Ok(())
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Sum of the coarse and fine network predictions.
pub fn deform(z_g: &[f64], z_tc: &[f64], z_tf: &[f64], net: &DeformNet) -> Result<DeformationDelta> {
    check_dims(z_g, z_tc, z_tf, net)?;
    let coarse = net.coarse.forward(&concat(z_g, z_tc));
    let fine = net.fine.forward(&concat(z_g, z_tf));
    let raw: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a + b).collect();
    Ok(DeformationDelta::from_raw(&raw))
}

/// Component-wise additive update; the quaternion is renormalized at
/// activation time and `lineage_id` never changes.
pub fn apply_delta(params: &GaussianParams, delta: &DeformationDelta) -> GaussianParams {
    GaussianParams {
        mu: params.mu + delta.d_mu,
        rot: std::array::from_fn(|i| params.rot[i] + delta.d_rot[i]),
        log_scale: params.log_scale + delta.d_log_scale,
        opacity_logit: params.opacity_logit + delta.d_opacity_logit,
        color: params.color + delta.d_color,
        lineage_id: params.lineage_id,
    }
}

/// Forward evaluation with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct DeformEval {
    pub delta: DeformationDelta,
    pub coarse_cache: MlpCache,
    pub fine_cache: MlpCache,
    pub interp: CoarseInterp,
    pub fine_row: usize,
}

/// Evaluate a field's deformation for one Gaussian at time t.
pub fn deform_eval(field: &DeformationField, z_g: &[f64], t: f64) -> Result<DeformEval> {
    let (z_tc, z_tf, interp, fine_row) = temporal_embed_detailed(t, &field.temporal)?;
    check_dims(z_g, &z_tc, &z_tf, &field.net)?;
    let (coarse_out, coarse_cache) = field.net.coarse.forward_cached(&concat(z_g, &z_tc));
    let (fine_out, fine_cache) = field.net.fine.forward_cached(&concat(z_g, &z_tf));
    let raw: Vec<f64> = coarse_out.iter().zip(&fine_out).map(|(a, b)| a + b).collect();
    Ok(DeformEval {
        delta: DeformationDelta::from_raw(&raw),
        coarse_cache,
        fine_cache,
        interp,
        fine_row,
    })
}

/// Gradients produced by one deformation backward pass.
#[derive(Debug, Clone)]
pub struct DeformGrads {
    pub z_g: Vec<f64>,
    /// (knot row, gradient) for the two bracketing coarse knots.
    pub coarse_rows: [(usize, Vec<f64>); 2],
    pub fine_row: (usize, Vec<f64>),
    pub coarse_net: MlpGrad,
    pub fine_net: MlpGrad,
}

/// Exact reverse-mode gradients for one Gaussian's deformation. Coarse
/// table gradients are split across the bracketing knots by the
/// interpolation weights.
pub fn deform_backward(
    field: &DeformationField,
    z_g_len: usize,
    eval: &DeformEval,
    d_delta: &[f64; DELTA_DIM],
) -> DeformGrads {
    let (d_in_coarse, coarse_net) = field.net.coarse.backward(&eval.coarse_cache, d_delta);
    let (d_in_fine, fine_net) = field.net.fine.backward(&eval.fine_cache, d_delta);

    let mut z_g = vec![0.0; z_g_len];
    for (slot, v) in z_g.iter_mut().zip(&d_in_coarse[..z_g_len]) {
        *slot += v;
    }
    for (slot, v) in z_g.iter_mut().zip(&d_in_fine[..z_g_len]) {
        *slot += v;
    }

    let d_z_tc = &d_in_coarse[z_g_len..];
    let w = eval.interp.w_hi;
    let lo: Vec<f64> = d_z_tc.iter().map(|v| v * (1.0 - w)).collect();
    let hi: Vec<f64> = d_z_tc.iter().map(|v| v * w).collect();

    DeformGrads {
        z_g,
        coarse_rows: [(eval.interp.knot_lo, lo), (eval.interp.knot_hi, hi)],
        fine_row: (eval.fine_row, d_in_fine[z_g_len..].to_vec()),
        coarse_net,
        fine_net,
    }
}
