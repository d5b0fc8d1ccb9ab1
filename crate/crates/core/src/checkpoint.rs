//! Full training checkpoint: a JSON manifest (iteration, rng state,
//! partition tree, scene) followed by flat parameter arrays and the
//! per-network deformation-field blobs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_io::{field_from_bytes, field_to_bytes};
use crate::gaussian::GaussianParams;
use crate::partition::{
    Cloud, FrameRange, GaussianInstance, NetworkRegistry, SegmentNode,
};
use crate::scene::SceneSpec;
use crate::score::PositionHistory;
use crate::trainer::Trainer;
use crate::Vec3;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAPOCKPT";
pub const CHECKPOINT_FORMAT: &str = "mapo-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: Vec<u8>,
    stream: u64,
    word_pos_lo: u64,
    word_pos_hi: u64,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos_lo: pos as u64,
            word_pos_hi: (pos >> 64) as u64,
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceMeta {
    lineage_id: u64,
    t_start: u32,
    t_end: u32,
    level: u32,
    network_id: u32,
    is_static: bool,
    bake_timestamp: Option<u32>,
    last_score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    iteration: u64,
    seed: u64,
    rng_main: RngState,
    rng_structural: RngState,
    scene: SceneSpec,
    history_capacity: usize,
    embedding_dim: usize,
    instances: Vec<InstanceMeta>,
    net_blob_lens: Vec<usize>,
}

/// A loaded checkpoint: everything needed to render and evaluate.
pub struct Checkpoint {
    pub iteration: u64,
    pub seed: u64,
    pub spec: SceneSpec,
    pub cloud: Cloud,
    pub nets: NetworkRegistry,
}

pub fn checkpoint_to_bytes(trainer: &Trainer) -> Vec<u8> {
    let (rng_main, rng_structural) = trainer.rng_snapshots();
    let embedding_dim = trainer.cfg.embedding.gaussian_dim;

    let instances: Vec<InstanceMeta> = trainer
        .cloud
        .instances
        .iter()
        .map(|inst| InstanceMeta {
            lineage_id: inst.params.lineage_id,
            t_start: inst.segment.range.start,
            t_end: inst.segment.range.end,
            level: inst.segment.level,
            network_id: inst.segment.network_id,
            is_static: inst.is_static,
            bake_timestamp: inst.bake_timestamp,
            last_score: inst.last_score,
        })
        .collect();

    let net_blobs: Vec<Vec<u8>> = trainer
        .nets
        .iter()
        .map(|(_, field)| field_to_bytes(field))
        .collect();

    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        iteration: trainer.cfg.total_iterations,
        seed: trainer.cfg.seed,
        rng_main: RngState::capture(rng_main),
        rng_structural: RngState::capture(rng_structural),
        scene: trainer.spec.clone(),
        history_capacity: trainer.cfg.history_capacity,
        embedding_dim,
        instances,
        net_blob_lens: net_blobs.iter().map(Vec::len).collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for inst in &trainer.cloud.instances {
        push_params(&mut out, &inst.params);
    }
    for inst in &trainer.cloud.instances {
        for v in &inst.embedding {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for blob in net_blobs {
        out.extend_from_slice(&blob);
    }
    out
}

fn push_params(out: &mut Vec<u8>, p: &GaussianParams) {
    for v in p
        .mu
        .iter()
        .chain(p.rot.iter())
        .chain(p.log_scale.iter())
        .chain(std::iter::once(&p.opacity_logit))
        .chain(p.color.iter())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(trainer))?;
    Ok(())
}

fn read_f64s(bytes: &[u8], pos: &mut usize, count: usize) -> Result<Vec<f64>> {
    let need = count * 8;
    if *pos + need > bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "truncated payload at byte {pos}"
        )));
    }
    let out = bytes[*pos..*pos + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    *pos += need;
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let header_len =
        u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if 16 + header_len > bytes.len() {
        return Err(Error::CorruptCheckpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::CorruptCheckpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    header
        .scene
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("bad scene: {e}")))?;
    // Recorded but unused here; restoring validates the encoding.
    header.rng_main.restore()?;
    header.rng_structural.restore()?;

    let n = header.instances.len();
    let mut pos = 16 + header_len;
    let params_flat = read_f64s(bytes, &mut pos, n * 14)?;
    let emb_flat = read_f64s(bytes, &mut pos, n * header.embedding_dim)?;

    let mut net_fields = Vec::new();
    for len in &header.net_blob_lens {
        if pos + len > bytes.len() {
            return Err(Error::CorruptCheckpoint("truncated network blob".into()));
        }
        net_fields.push(field_from_bytes(&bytes[pos..pos + len])?);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    if net_fields.is_empty() {
        return Err(Error::CorruptCheckpoint("no deformation networks".into()));
    }

    let mut fields = net_fields.into_iter();
    let mut nets = NetworkRegistry::new(fields.next().expect("non-empty"));
    for f in fields {
        nets.insert(f);
    }

    let t_total = header.scene.t_frames;
    let instances = header
        .instances
        .iter()
        .enumerate()
        .map(|(i, meta)| {
            if meta.t_start >= meta.t_end || meta.t_end > t_total {
                return Err(Error::CorruptCheckpoint(format!(
                    "instance {i}: segment [{}, {}) out of bounds",
                    meta.t_start, meta.t_end
                )));
            }
            let c = &params_flat[i * 14..(i + 1) * 14];
            Ok(GaussianInstance {
                params: GaussianParams {
                    mu: Vec3::new(c[0], c[1], c[2]),
                    rot: [c[3], c[4], c[5], c[6]],
                    log_scale: Vec3::new(c[7], c[8], c[9]),
                    opacity_logit: c[10],
                    color: Vec3::new(c[11], c[12], c[13]),
                    lineage_id: meta.lineage_id,
                },
                embedding: emb_flat
                    [i * header.embedding_dim..(i + 1) * header.embedding_dim]
                    .to_vec(),
                segment: SegmentNode {
                    range: FrameRange::new(meta.t_start, meta.t_end),
                    level: meta.level,
                    network_id: meta.network_id,
                },
                is_static: meta.is_static,
                bake_timestamp: meta.bake_timestamp,
                history: PositionHistory::new(header.history_capacity.max(2)),
                last_score: meta.last_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Checkpoint {
        iteration: header.iteration,
        seed: header.seed,
        spec: header.scene,
        cloud: Cloud {
            instances,
            t_total,
        },
        nets,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}

/// Render one frame of a checkpoint from one of its scene cameras.
pub fn render_checkpoint_frame(ckpt: &Checkpoint, t: u32, view: usize) -> Result<crate::image::Image> {
    if view >= ckpt.spec.cameras.len() {
        return Err(Error::Config(format!(
            "view {view} out of range ({} cameras)",
            ckpt.spec.cameras.len()
        )));
    }
    let members = crate::partition::active_set(&ckpt.cloud, t)?;
    crate::pipeline::render_members_at(
        &ckpt.cloud,
        &ckpt.nets,
        &members,
        t,
        &ckpt.spec.camera(view),
        ckpt.spec.background(),
        &crate::render::RenderOptions::default(),
    )
}
