//! Per-Gaussian dynamic scores from recorded position history.
//!
//! During training each Gaussian's post-deformation position is recorded
//! every K iterations into a fixed-capacity ring buffer. A batch pass
//! derives two motion statistics per Gaussian — the AABB-diagonal maximum
//! displacement r and the position variance v — maps both to [0, 1] by
//! percentile rank, and fuses them with a harmonic mean, which is high
//! only when both inputs are high.

use std::collections::VecDeque;

use crate::Vec3;

/// Numerical-stability term in the harmonic mean.
pub const SCORE_EPSILON: f64 = 1e-6;

/// Default ring-buffer capacity.
pub const DEFAULT_HISTORY_CAPACITY: usize = 16;

/// Which statistics feed the score. `MaxDisplacementOnly` is the ablation
/// variant; `Full` fuses displacement and variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    MaxDisplacementOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HistoryEntry {
    iteration: u64,
    position: Vec3,
}

/// Ring buffer of recorded positions for one Gaussian instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionHistory {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl PositionHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "history needs at least two slots");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    /// Append a position, evicting the oldest entry when full. The
    /// recording cadence is the trainer's responsibility.
    pub fn record(&mut self, position: Vec3, iteration: u64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(HistoryEntry {
            iteration,
            position,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> {
        self.entries.iter().map(|e| &e.position)
    }

    pub fn iterations(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.iteration)
    }
}

/// Maximum displacement: the diagonal of the axis-aligned bounding box of
/// the recorded positions. Zero by convention for fewer than two entries.
pub fn max_displacement(history: &PositionHistory) -> f64 {
    if history.len() < 2 {
        return 0.0;
    }
    let mut lo = Vec3::from_element(f64::INFINITY);
    let mut hi = Vec3::from_element(f64::NEG_INFINITY);
    for p in history.positions() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Mean squared distance to the mean position, divided by the number of
/// recorded entries.
pub fn variance(history: &PositionHistory) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let m = history.len() as f64;
    let mean: Vec3 = history.positions().sum::<Vec3>() / m;
    history
        .positions()
        .map(|p| (p - mean).norm_squared())
        .sum::<f64>()
        / m
}

/// Percentile-rank normalization into [0, 1].
///
/// q(k) for k = 1..100 is computed by the nearest-rank method on the
/// ascending sort (element at index ceil(k*N/100) - 1); the normalized
/// value counts the percentiles it reaches: (1/100) * sum_k 1(v >= q(k)).
pub fn percentile_normalize(values: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty(), "percentile_normalize on empty input");
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..=100)
        .map(|k| {
            let idx = (k * n).div_ceil(100) - 1;
            sorted[idx]
        })
        .collect();
    values
        .iter()
        .map(|&v| thresholds.iter().filter(|&&q| v >= q).count() as f64 / 100.0)
        .collect()
}

/// Harmonic-mean fusion of the normalized ranks.
pub fn dynamic_score(r_tilde: f64, v_tilde: f64) -> f64 {
    2.0 / (1.0 / (r_tilde + SCORE_EPSILON) + 1.0 / (v_tilde + SCORE_EPSILON))
}

/// One Gaussian's scored statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredGaussian {
    /// Caller-side index (instance slot in the cloud).
    pub index: usize,
    pub r: f64,
    pub v: f64,
    pub r_tilde: f64,
    pub v_tilde: f64,
    pub score: f64,
    /// Full buffer: the instance may be split or baked static this round.
    /// Partial buffers still participate in the percentile population.
    pub eligible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreBatch {
    pub entries: Vec<ScoredGaussian>,
}

/// Score a batch of histories. Callers pass every instance with at least
/// two recorded positions; percentile ranks are computed within this
/// population, while acting on a score (splitting, static baking)
/// additionally requires a full buffer and is gated on the instance's
/// static flag by the partition engine.
pub fn score_batch(histories: &[(usize, &PositionHistory)], mode: ScoreMode) -> ScoreBatch {
    if histories.is_empty() {
        return ScoreBatch::default();
    }
    let rs: Vec<f64> = histories.iter().map(|(_, h)| max_displacement(h)).collect();
    let vs: Vec<f64> = histories.iter().map(|(_, h)| variance(h)).collect();
    let r_tilde = percentile_normalize(&rs);
    let v_tilde = percentile_normalize(&vs);
    let entries = histories
        .iter()
        .enumerate()
        .map(|(i, (index, h))| {
            let score = match mode {
                ScoreMode::MaxDisplacementOnly => r_tilde[i],
                ScoreMode::Full => dynamic_score(r_tilde[i], v_tilde[i]),
            };
            ScoredGaussian {
                index: *index,
                r: rs[i],
                v: vs[i],
                r_tilde: r_tilde[i],
                v_tilde: v_tilde[i],
                score,
                eligible: h.is_full(),
            }
        })
        .collect();
    ScoreBatch { entries }
}

/// One row of the score CSV dump.
#[derive(Debug, Clone)]
pub struct ScoreCsvRow {
    pub lineage_id: u64,
    pub segment_start: u32,
    pub segment_end: u32,
    pub level: u32,
    pub scored: ScoredGaussian,
}

pub fn write_score_csv<W: std::io::Write>(mut w: W, rows: &[ScoreCsvRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "lineage_id,segment_start,segment_end,level,r,v,r_tilde,v_tilde,S"
    )?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            row.lineage_id,
            row.segment_start,
            row.segment_end,
            row.level,
            row.scored.r,
            row.scored.v,
            row.scored.r_tilde,
            row.scored.v_tilde,
            row.scored.score
        )?;
    }
    Ok(())
}
