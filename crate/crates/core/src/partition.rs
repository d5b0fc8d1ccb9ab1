//! Hierarchical temporal partitioning of the Gaussian cloud.
//!
//! Every instance owns a half-open frame range [t_start, t_end) at some
//! partition level. A high-dynamic instance is split at the temporal
//! midpoint: the original keeps the left half, a bitwise replica takes
//! the right half, both advance one level, and the owning deformation
//! field is replicated into two child fields — lazily, so all lineages
//! splitting out of the same parent segment share the same child pair.
//! Low-dynamic instances are baked static at a random timestep and never
//! touch a deformation network again.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::deform::{apply_delta, deform_eval, DeformationField};
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::score::{PositionHistory, ScoreBatch};

pub type NetworkId = u32;

/// Half-open frame interval [start, end).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub struct FrameRange {
    pub start: u32,
    pub end: u32,
}

impl FrameRange {
    pub fn new(start: u32, end: u32) -> Self {
        assert!(start < end, "empty frame range [{start}, {end})");
        Self { start, end }
    }

    #[inline]
    pub fn contains(&self, t: u32) -> bool {
        t >= self.start && t < self.end
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false // start < end is a construction invariant
    }

    /// Midpoint, rounded down to a frame boundary.
    pub fn midpoint(&self) -> u32 {
        (self.start + self.end) / 2
    }
}

/// An instance's position in the partition tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentNode {
    pub range: FrameRange,
    pub level: u32,
    pub network_id: NetworkId,
}

/// Thresholds and schedule for partition checks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    /// Per-level split thresholds; the last entry repeats for deeper levels.
    pub tau_levels: Vec<f64>,
    pub max_level: u32,
    pub tau_static: f64,
    /// Trainer iterations at which scoring and splitting run.
    pub check_iterations: Vec<u64>,
    /// Iteration at which static identification runs; defaults to the
    /// first split check. Late splits leave replicated networks too
    /// little training time, so a config may schedule static baking
    /// later without adding a split check.
    pub static_check_iteration: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            tau_levels: vec![0.9],
            max_level: 3,
            tau_static: 0.2,
            check_iterations: Vec::new(),
            static_check_iteration: None,
        }
    }
}

impl PartitionConfig {
    pub fn tau_for_level(&self, level: u32) -> f64 {
        let idx = (level as usize).min(self.tau_levels.len().saturating_sub(1));
        self.tau_levels.get(idx).copied().unwrap_or(0.9)
    }

    /// Default check schedule: 40%, 60%, 80% of the run.
    pub fn default_checks(total_iterations: u64) -> Vec<u64> {
        [0.4, 0.6, 0.8]
            .iter()
            .map(|f| ((total_iterations as f64) * f).floor() as u64)
            .filter(|&it| it > 0)
            .collect()
    }

    /// The iteration at which static identification runs.
    pub fn static_check_iteration(&self) -> Option<u64> {
        self.static_check_iteration
            .or_else(|| self.check_iterations.first().copied())
    }
}

/// One Gaussian instance: raw parameters, its learnable embedding, its
/// segment, and its scoring state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInstance {
    pub params: GaussianParams,
    /// Per-Gaussian embedding z_g; replicas copy it (independent after).
    pub embedding: Vec<f64>,
    pub segment: SegmentNode,
    pub is_static: bool,
    pub bake_timestamp: Option<u32>,
    pub history: PositionHistory,
    pub last_score: Option<f64>,
}

/// The full set of instances over the sequence [0, T).
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub instances: Vec<GaussianInstance>,
    pub t_total: u32,
}

/// One member of the active set G_t; static members carry no network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveMember {
    pub index: usize,
    pub network_id: Option<NetworkId>,
}

/// All instances whose segment contains t, in instance order.
pub fn active_set(cloud: &Cloud, t: u32) -> Result<Vec<ActiveMember>> {
    if t >= cloud.t_total {
        return Err(Error::TimestampOutOfRange {
            t: t as f64,
            t_end: cloud.t_total as f64,
        });
    }
    Ok(cloud
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.segment.range.contains(t))
        .map(|(index, inst)| ActiveMember {
            index,
            network_id: (!inst.is_static).then_some(inst.segment.network_id),
        })
        .collect())
}

/// Registry of deformation fields keyed by network id, with the
/// range-to-network map that makes child creation lazy and shared.
#[derive(Debug, Clone)]
pub struct NetworkRegistry {
    nets: BTreeMap<NetworkId, DeformationField>,
    range_to_net: BTreeMap<FrameRange, NetworkId>,
    next_id: NetworkId,
}

impl NetworkRegistry {
    pub fn new(root: DeformationField) -> Self {
        let root_id = root.net.network_id;
        let root_range = root.net.segment;
        let mut nets = BTreeMap::new();
        nets.insert(root_id, root);
        let mut range_to_net = BTreeMap::new();
        range_to_net.insert(root_range, root_id);
        Self {
            nets,
            range_to_net,
            next_id: root_id + 1,
        }
    }

    pub fn get(&self, id: NetworkId) -> &DeformationField {
        self.nets.get(&id).expect("unknown network id")
    }

    pub fn get_mut(&mut self, id: NetworkId) -> &mut DeformationField {
        self.nets.get_mut(&id).expect("unknown network id")
    }

    pub fn net_for_range(&self, range: FrameRange) -> Option<NetworkId> {
        self.range_to_net.get(&range).copied()
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NetworkId, &DeformationField)> {
        self.nets.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = NetworkId> + '_ {
        self.nets.keys().copied()
    }

    pub fn insert(&mut self, field: DeformationField) {
        let id = field.net.network_id;
        self.range_to_net.insert(field.net.segment, id);
        self.next_id = self.next_id.max(id + 1);
        self.nets.insert(id, field);
    }

    /// Child networks for a split of `parent_range`. The first split out
    /// of a parent deep-copies its field into the two halves; later
    /// splits reuse them. Returns (left, right, newly created ids).
    pub fn children_for_split(
        &mut self,
        parent_range: FrameRange,
    ) -> (NetworkId, NetworkId, Vec<NetworkId>) {
        let mid = parent_range.midpoint();
        let left_range = FrameRange::new(parent_range.start, mid);
        let right_range = FrameRange::new(mid, parent_range.end);
        let mut created = Vec::new();
        let left = match self.range_to_net.get(&left_range) {
            Some(&id) => id,
            None => {
                let id = self.replicate_into(parent_range, left_range);
                created.push(id);
                id
            }
        };
        let right = match self.range_to_net.get(&right_range) {
            Some(&id) => id,
            None => {
                let id = self.replicate_into(parent_range, right_range);
                created.push(id);
                id
            }
        };
        (left, right, created)
    }

    fn replicate_into(&mut self, parent_range: FrameRange, child_range: FrameRange) -> NetworkId {
        let parent_id = *self
            .range_to_net
            .get(&parent_range)
            .expect("split of an unregistered segment");
        let id = self.next_id;
        self.next_id += 1;
        let child = self.nets[&parent_id].replicate(id, child_range);
        self.range_to_net.insert(child_range, id);
        self.nets.insert(id, child);
        id
    }
}

/// One executed split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionEvent {
    pub lineage_id: u64,
    pub original_index: usize,
    pub replica_index: usize,
    pub parent_range: FrameRange,
    pub left: SegmentNode,
    pub right: SegmentNode,
}

#[derive(Debug, Clone, Default)]
pub struct SplitReport {
    pub events: Vec<PartitionEvent>,
    /// Splits refused because the instance already sits at max_level.
    pub skipped_max_level: usize,
    /// Newly created deformation networks (need fresh optimizer state).
    pub new_net_ids: Vec<NetworkId>,
}

/// Split every scored, non-static instance whose score exceeds its
/// level's threshold. Score entries are processed in the given order;
/// replicas are appended to the cloud and both instances' histories are
/// cleared.
pub fn check_and_split(
    cloud: &mut Cloud,
    scores: &ScoreBatch,
    cfg: &PartitionConfig,
    nets: &mut NetworkRegistry,
) -> SplitReport {
    let mut report = SplitReport::default();
    for scored in &scores.entries {
        let idx = scored.index;
        {
            let inst = &mut cloud.instances[idx];
            if inst.is_static {
                continue;
            }
            inst.last_score = Some(scored.score);
            if !scored.eligible {
                continue;
            }
            if scored.score <= cfg.tau_for_level(inst.segment.level) {
                continue;
            }
            if inst.segment.level >= cfg.max_level {
                report.skipped_max_level += 1;
                continue;
            }
            if inst.segment.range.len() < 2 {
                // One-frame segments cannot split further.
                report.skipped_max_level += 1;
                continue;
            }
        }

        let parent_range = cloud.instances[idx].segment.range;
        let parent_level = cloud.instances[idx].segment.level;
        let mid = parent_range.midpoint();
        let (left_id, right_id, created) = nets.children_for_split(parent_range);
        report.new_net_ids.extend(created);

        let left = SegmentNode {
            range: FrameRange::new(parent_range.start, mid),
            level: parent_level + 1,
            network_id: left_id,
        };
        let right = SegmentNode {
            range: FrameRange::new(mid, parent_range.end),
            level: parent_level + 1,
            network_id: right_id,
        };

        // Replica: identical attributes and embedding, same lineage.
        let mut replica = cloud.instances[idx].clone();
        replica.segment = right;
        replica.history.clear();

        let original = &mut cloud.instances[idx];
        original.segment = left;
        original.history.clear();

        let replica_index = cloud.instances.len();
        let lineage_id = cloud.instances[idx].params.lineage_id;
        cloud.instances.push(replica);

        report.events.push(PartitionEvent {
            lineage_id,
            original_index: idx,
            replica_index,
            parent_range,
            left,
            right,
        });
    }
    report
}

/// One baked instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BakeEvent {
    pub index: usize,
    pub t_bake: u32,
}

/// Flag every scored instance below tau_static as static, overwriting its
/// raw parameters with the deformation output at a timestep drawn
/// uniformly from its segment range. Baked instances are excluded from
/// deformation afterwards; their attributes remain optimizable.
pub fn identify_static<R: Rng>(
    cloud: &mut Cloud,
    scores: &ScoreBatch,
    cfg: &PartitionConfig,
    nets: &NetworkRegistry,
    rng: &mut R,
) -> Result<Vec<BakeEvent>> {
    let mut events = Vec::new();
    for scored in &scores.entries {
        let idx = scored.index;
        let inst = &cloud.instances[idx];
        if inst.is_static || !scored.eligible {
            continue;
        }
        if scored.score >= cfg.tau_static {
            continue;
        }
        let range = inst.segment.range;
        let t_bake = rng.random_range(range.start..range.end);
        let field = nets.get(inst.segment.network_id);
        let eval = deform_eval(field, &inst.embedding, t_bake as f64)?;

        let inst = &mut cloud.instances[idx];
        inst.params = apply_delta(&inst.params, &eval.delta);
        inst.is_static = true;
        inst.bake_timestamp = Some(t_bake);
        inst.last_score = Some(scored.score);
        events.push(BakeEvent { index: idx, t_bake });
    }
    Ok(events)
}

/// JSON dump row for the partition tree.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PartitionRow {
    pub lineage_id: u64,
    pub t_start: u32,
    pub t_end: u32,
    pub level: u32,
    pub network_id: NetworkId,
    pub is_static: bool,
    pub last_score: Option<f64>,
}

pub fn partition_rows(cloud: &Cloud) -> Vec<PartitionRow> {
    cloud
        .instances
        .iter()
        .map(|inst| PartitionRow {
            lineage_id: inst.params.lineage_id,
            t_start: inst.segment.range.start,
            t_end: inst.segment.range.end,
            level: inst.segment.level,
            network_id: inst.segment.network_id,
            is_static: inst.is_static,
            last_score: inst.last_score,
        })
        .collect()
}

pub fn write_partition_json<W: Write>(w: W, cloud: &Cloud) -> Result<()> {
    serde_json::to_writer_pretty(w, &partition_rows(cloud))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::EmbeddingConfig;
    use crate::score::{ScoreBatch, ScoredGaussian, DEFAULT_HISTORY_CAPACITY};
    use crate::Vec3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EmbeddingConfig {
        EmbeddingConfig {
            gaussian_dim: 4,
            coarse_dim: 3,
            fine_dim: 3,
            hidden_dim: 8,
        }
    }

    fn test_cloud(n: usize, t_total: u32, seed: u64) -> (Cloud, NetworkRegistry) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = DeformationField::new(
            &small_cfg(),
            t_total as usize,
            0,
            FrameRange::new(0, t_total),
            &mut rng,
        );
        let nets = NetworkRegistry::new(root);
        let instances = (0..n)
            .map(|i| GaussianInstance {
                params: GaussianParams {
                    mu: Vec3::new(i as f64, 0.0, 2.0),
                    rot: [1.0, 0.0, 0.0, 0.0],
                    log_scale: Vec3::zeros(),
                    opacity_logit: 0.5,
                    color: Vec3::new(0.5, 0.5, 0.5),
                    lineage_id: i as u64,
                },
                embedding: vec![0.1 * i as f64; 4],
                segment: SegmentNode {
                    range: FrameRange::new(0, t_total),
                    level: 0,
                    network_id: 0,
                },
                is_static: false,
                bake_timestamp: None,
                history: PositionHistory::new(DEFAULT_HISTORY_CAPACITY),
                last_score: None,
            })
            .collect();
        (
            Cloud {
                instances,
                t_total,
            },
            nets,
        )
    }

    fn scored(index: usize, score: f64) -> ScoredGaussian {
        ScoredGaussian {
            index,
            r: 0.0,
            v: 0.0,
            r_tilde: score,
            v_tilde: score,
            score,
            eligible: true,
        }
    }

    #[test]
    fn midpoint_split_of_level_zero() {
        let (mut cloud, mut nets) = test_cloud(1, 300, 1);
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95)],
        };
        let report = check_and_split(&mut cloud, &scores, &PartitionConfig::default(), &mut nets);
        assert_eq!(report.events.len(), 1);
        assert_eq!(cloud.instances.len(), 2);
        let left = &cloud.instances[0].segment;
        let right = &cloud.instances[1].segment;
        assert_eq!(left.range, FrameRange::new(0, 150));
        assert_eq!(right.range, FrameRange::new(150, 300));
        assert_eq!(left.level, 1);
        assert_eq!(right.level, 1);
        assert_ne!(left.network_id, right.network_id);
        assert_eq!(cloud.instances[1].params.lineage_id, 0);
    }

    #[test]
    fn below_threshold_is_a_no_op() {
        let (mut cloud, mut nets) = test_cloud(2, 300, 2);
        let before = cloud.clone();
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.9), scored(1, 0.3)],
        };
        let report = check_and_split(&mut cloud, &scores, &PartitionConfig::default(), &mut nets);
        assert!(report.events.is_empty());
        assert_eq!(cloud.instances.len(), 2);
        assert_eq!(cloud.instances[0].segment, before.instances[0].segment);
        // Scores are still recorded.
        assert_eq!(cloud.instances[0].last_score, Some(0.9));
    }

    #[test]
    fn two_successive_splits_tile_into_quarters() {
        let (mut cloud, mut nets) = test_cloud(1, 300, 3);
        let cfg = PartitionConfig::default();
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95)],
        };
        check_and_split(&mut cloud, &scores, &cfg, &mut nets);
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95), scored(1, 0.95)],
        };
        check_and_split(&mut cloud, &scores, &cfg, &mut nets);

        let mut ranges: Vec<(u32, u32)> = cloud
            .instances
            .iter()
            .map(|i| (i.segment.range.start, i.segment.range.end))
            .collect();
        ranges.sort_unstable();
        assert_eq!(ranges, vec![(0, 75), (75, 150), (150, 225), (225, 300)]);
        assert!(cloud.instances.iter().all(|i| i.segment.level == 2));

        // Each quarter is owned by a distinct network.
        let mut ids: Vec<NetworkId> =
            cloud.instances.iter().map(|i| i.segment.network_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn same_parent_splits_share_child_networks() {
        let (mut cloud, mut nets) = test_cloud(2, 100, 4);
        let cfg = PartitionConfig::default();
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95), scored(1, 0.99)],
        };
        let report = check_and_split(&mut cloud, &scores, &cfg, &mut nets);
        assert_eq!(report.events.len(), 2);
        // Only two child nets were created for both lineages.
        assert_eq!(report.new_net_ids.len(), 2);
        assert_eq!(
            cloud.instances[0].segment.network_id,
            cloud.instances[1].segment.network_id
        );
        assert_eq!(nets.len(), 3);
    }

    #[test]
    fn max_level_split_is_skipped_and_counted() {
        let (mut cloud, mut nets) = test_cloud(1, 64, 5);
        let cfg = PartitionConfig {
            max_level: 1,
            ..Default::default()
        };
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.99)],
        };
        check_and_split(&mut cloud, &scores, &cfg, &mut nets);
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.99), scored(1, 0.99)],
        };
        let report = check_and_split(&mut cloud, &scores, &cfg, &mut nets);
        assert!(report.events.is_empty());
        assert_eq!(report.skipped_max_level, 2);
    }

    #[test]
    fn replica_is_bitwise_equal_at_split_time() {
        let (mut cloud, mut nets) = test_cloud(1, 120, 6);
        cloud.instances[0].params.mu = Vec3::new(0.1234567890123, -2.5, 3.25);
        cloud.instances[0].embedding = vec![0.123456789, -0.987654321, 0.5, -0.25];
        let scores = ScoreBatch {
            entries: vec![scored(0, 1.0)],
        };
        check_and_split(&mut cloud, &scores, &PartitionConfig::default(), &mut nets);
        let a = &cloud.instances[0];
        let b = &cloud.instances[1];
        assert_eq!(a.params, b.params);
        assert_eq!(a.embedding, b.embedding);
        assert!(a.history.is_empty() && b.history.is_empty());
        // Child fields are bitwise copies of the parent's.
        let parent = nets.get(0).clone();
        let left = nets.get(a.segment.network_id);
        assert_eq!(parent.net.coarse, left.net.coarse);
        assert_eq!(parent.temporal, left.temporal);
    }

    #[test]
    fn active_set_unpartitioned_is_whole_cloud() {
        let (cloud, _) = test_cloud(5, 40, 7);
        for t in [0, 13, 39] {
            let members = active_set(&cloud, t).unwrap();
            assert_eq!(members.len(), 5);
            assert!(members.iter().all(|m| m.network_id == Some(0)));
        }
        assert!(matches!(
            active_set(&cloud, 40),
            Err(Error::TimestampOutOfRange { .. })
        ));
    }

    #[test]
    fn half_open_boundary_membership() {
        let (mut cloud, mut nets) = test_cloud(1, 120, 8);
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95)],
        };
        check_and_split(&mut cloud, &scores, &PartitionConfig::default(), &mut nets);
        // At t = 60 exactly, the right instance is active.
        let members = active_set(&cloud, 60).unwrap();
        assert_eq!(members.len(), 1);
        assert_eq!(members[0].index, 1);
        let members = active_set(&cloud, 59).unwrap();
        assert_eq!(members[0].index, 0);
    }

    #[test]
    fn static_identification_semantics() {
        let (mut cloud, mut nets) = test_cloud(3, 60, 9);
        let cfg = PartitionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let before = cloud.instances[1].params.clone();
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.5), scored(1, 0.05), scored(2, 0.21)],
        };
        let events = identify_static(&mut cloud, &scores, &cfg, &nets, &mut rng).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].index, 1);
        assert!(cloud.instances[1].is_static);
        assert!(!cloud.instances[0].is_static);
        assert!(!cloud.instances[2].is_static); // score >= tau_static

        // Zero-initialized heads: baking is the identity.
        assert_eq!(cloud.instances[1].params, before);

        // Static members carry no network in the active set.
        let members = active_set(&cloud, 10).unwrap();
        assert_eq!(members[1].network_id, None);
        assert_eq!(members[0].network_id, Some(0));

        // Re-running never un-flags.
        let scores = ScoreBatch {
            entries: vec![scored(1, 0.9)],
        };
        check_and_split(&mut cloud, &scores, &cfg, &mut nets);
        assert!(cloud.instances[1].is_static);
        assert_eq!(cloud.instances.len(), 3);
    }

    /// Random split sequences preserve the tiling, level/length, and
    /// one-active-instance-per-lineage invariants.
    fn random_split_rounds(seed: u64, n_lineages: usize, t_total: u32, rounds: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut cloud, mut nets) = test_cloud(n_lineages, t_total, seed);
        let cfg = PartitionConfig {
            max_level: 4,
            ..Default::default()
        };
        for _ in 0..rounds {
            let entries: Vec<ScoredGaussian> = (0..cloud.instances.len())
                .map(|i| scored(i, rng.random_range(0.0..1.2f64)))
                .collect();
            let batch = ScoreBatch { entries };
            check_and_split(&mut cloud, &batch, &cfg, &mut nets);
        }

        // Tiling per lineage: disjoint union of [0, T).
        for lineage in 0..n_lineages as u64 {
            let mut ranges: Vec<FrameRange> = cloud
                .instances
                .iter()
                .filter(|i| i.params.lineage_id == lineage)
                .map(|i| i.segment.range)
                .collect();
            ranges.sort_unstable();
            assert_eq!(ranges[0].start, 0);
            assert_eq!(ranges.last().unwrap().end, t_total);
            for w in ranges.windows(2) {
                assert_eq!(w[0].end, w[1].start, "gap or overlap in lineage tiling");
            }
        }

        // Exhaustive sweep: exactly one active instance per lineage per frame.
        for t in 0..t_total {
            let members = active_set(&cloud, t).unwrap();
            let mut seen = vec![0usize; n_lineages];
            for m in &members {
                seen[cloud.instances[m.index].params.lineage_id as usize] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "t = {t}: {seen:?}");
        }

        // Level/length consistency within one frame of T / 2^level.
        for inst in &cloud.instances {
            let expect = t_total as f64 / 2f64.powi(inst.segment.level as i32);
            let got = inst.segment.range.len() as f64;
            assert!(
                (got - expect).abs() <= 1.0,
                "level {} has length {got}, expected ~{expect}",
                inst.segment.level
            );
        }

        // Network keying: every in-use range maps to exactly one net, and
        // instances sharing a range share the net.
        for inst in &cloud.instances {
            assert_eq!(
                nets.net_for_range(inst.segment.range),
                Some(inst.segment.network_id)
            );
        }
    }

    #[test]
    fn random_split_sequences_hold_invariants() {
        for seed in 0..8 {
            random_split_rounds(seed, 4, 96, 5);
        }
        random_split_rounds(123, 3, 90, 6); // odd segment lengths
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn proptest_tiling_invariants(seed in 0u64..10_000, t_total in 16u32..200) {
            random_split_rounds(seed, 3, t_total, 4);
        }
    }

    #[test]
    fn partition_json_shape() {
        let (mut cloud, mut nets) = test_cloud(1, 80, 10);
        let scores = ScoreBatch {
            entries: vec![scored(0, 0.95)],
        };
        check_and_split(&mut cloud, &scores, &PartitionConfig::default(), &mut nets);
        let mut buf = Vec::new();
        write_partition_json(&mut buf, &cloud).unwrap();
        let rows: Vec<PartitionRow> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].t_end, 40);
        assert_eq!(rows[1].t_start, 40);
        assert_eq!(rows[0].last_score, Some(0.95));
    }
}
