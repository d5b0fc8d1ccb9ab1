//! Deformation-field checkpoint format.
//!
//! Layout: an 8-byte little-endian header length, a JSON header listing
//! array names/shapes plus network_id and segment_range, then the arrays
//! as flat 64-bit little-endian floats in header order.

use serde::{Deserialize, Serialize};

use crate::deform::{DeformNet, DeformationField, Table, TemporalEmbeddings, DELTA_DIM};
use crate::error::{Error, Result};
use crate::mlp::{Linear, Mlp};
use crate::partition::FrameRange;

pub const FIELD_FORMAT: &str = "deform-field-v1";

#[derive(Debug, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    format: String,
    network_id: u32,
    segment_range: [u32; 2],
    t_total: f64,
    arrays: Vec<ArraySpec>,
}

fn push_array(arrays: &mut Vec<ArraySpec>, payload: &mut Vec<f64>, name: &str, shape: &[usize], data: &[f64]) {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    arrays.push(ArraySpec {
        name: name.to_string(),
        shape: shape.to_vec(),
    });
    payload.extend_from_slice(data);
}

fn push_mlp(arrays: &mut Vec<ArraySpec>, payload: &mut Vec<f64>, prefix: &str, mlp: &Mlp) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        push_array(
            arrays,
            payload,
            &format!("{prefix}.layer{i}.weight"),
            &[layer.out_dim, layer.in_dim],
            &layer.weight,
        );
        push_array(
            arrays,
            payload,
            &format!("{prefix}.layer{i}.bias"),
            &[layer.out_dim],
            &layer.bias,
        );
    }
}

pub fn field_to_bytes(field: &DeformationField) -> Vec<u8> {
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    push_array(
        &mut arrays,
        &mut payload,
        "coarse_table",
        &[field.temporal.coarse.rows, field.temporal.coarse.cols],
        &field.temporal.coarse.data,
    );
    push_array(
        &mut arrays,
        &mut payload,
        "fine_table",
        &[field.temporal.fine.rows, field.temporal.fine.cols],
        &field.temporal.fine.data,
    );
    push_mlp(&mut arrays, &mut payload, "coarse_net", &field.net.coarse);
    push_mlp(&mut arrays, &mut payload, "fine_net", &field.net.fine);

    let header = FieldHeader {
        format: FIELD_FORMAT.to_string(),
        network_id: field.net.network_id,
        segment_range: [field.net.segment.start, field.net.segment.end],
        t_total: field.temporal.t_total,
        arrays,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len() * 8);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

fn read_mlp(
    reader: &mut Reader,
    arrays: &mut std::collections::VecDeque<ArraySpec>,
    prefix: &str,
) -> Result<Mlp> {
    let mut layers = Vec::new();
    while arrays
        .front()
        .is_some_and(|a| a.name.starts_with(&format!("{prefix}.layer{}.", layers.len())))
    {
        let w_spec = arrays.pop_front().unwrap();
        if w_spec.shape.len() != 2 {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: expected 2-d weight",
                w_spec.name
            )));
        }
        let (out_dim, in_dim) = (w_spec.shape[0], w_spec.shape[1]);
        let weight = reader.take_f64s(out_dim * in_dim)?;
        let b_spec = arrays.pop_front().ok_or_else(|| {
            Error::CorruptCheckpoint(format!("{prefix}: missing bias array"))
        })?;
        if b_spec.shape != vec![out_dim] {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: bias shape mismatch",
                b_spec.name
            )));
        }
        let bias = reader.take_f64s(out_dim)?;
        layers.push(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        });
    }
    if layers.is_empty() {
        return Err(Error::CorruptCheckpoint(format!("{prefix}: no layers")));
    }
    if layers.last().unwrap().out_dim != DELTA_DIM {
        return Err(Error::CorruptCheckpoint(format!(
            "{prefix}: head width {} != {DELTA_DIM}",
            layers.last().unwrap().out_dim
        )));
    }
    Ok(Mlp { layers })
}

pub fn field_from_bytes(bytes: &[u8]) -> Result<DeformationField> {
    let mut reader = Reader {
        data: bytes,
        pos: 0,
    };
    let len_bytes = reader.take(8)?;
    let header_len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
    let header_bytes = reader.take(header_len)?;
    let header: FieldHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;
    if header.format != FIELD_FORMAT {
        return Err(Error::CorruptCheckpoint(format!(
            "unknown format {:?}",
            header.format
        )));
    }

    let mut arrays: std::collections::VecDeque<ArraySpec> = header.arrays.into();

    let take_table = |reader: &mut Reader,
                      arrays: &mut std::collections::VecDeque<ArraySpec>,
                      name: &str|
     -> Result<Table> {
        let spec = arrays
            .pop_front()
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array {name}")))?;
        if spec.name != name || spec.shape.len() != 2 {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {name}, found {:?}",
                spec.name
            )));
        }
        let (rows, cols) = (spec.shape[0], spec.shape[1]);
        Ok(Table {
            data: reader.take_f64s(rows * cols)?,
            rows,
            cols,
        })
    };

    let coarse_table = take_table(&mut reader, &mut arrays, "coarse_table")?;
    let fine_table = take_table(&mut reader, &mut arrays, "fine_table")?;
    let coarse_net = read_mlp(&mut reader, &mut arrays, "coarse_net")?;
    let fine_net = read_mlp(&mut reader, &mut arrays, "fine_net")?;
    if !arrays.is_empty() {
        return Err(Error::CorruptCheckpoint(format!(
            "unconsumed arrays: {:?}",
            arrays.iter().map(|a| &a.name).collect::<Vec<_>>()
        )));
    }
    if reader.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - reader.pos
        )));
    }
    if header.segment_range[0] >= header.segment_range[1] {
        return Err(Error::CorruptCheckpoint("empty segment range".into()));
    }

    Ok(DeformationField {
        net: DeformNet {
            coarse: coarse_net,
            fine: fine_net,
            network_id: header.network_id,
            segment: FrameRange::new(header.segment_range[0], header.segment_range[1]),
        },
        temporal: TemporalEmbeddings {
            coarse: coarse_table,
            fine: fine_table,
            t_total: header.t_total,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::EmbeddingConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_field() -> DeformationField {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        DeformationField::new(
            &EmbeddingConfig::default(),
            30,
            3,
            FrameRange::new(10, 20),
            &mut rng,
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let field = sample_field();
        let bytes = field_to_bytes(&field);
        let back = field_from_bytes(&bytes).unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = field_to_bytes(&sample_field());
        assert!(matches!(
            field_from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(matches!(
            field_from_bytes(&bytes[..4]),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut garbled = bytes.clone();
        garbled[10] ^= 0xff; // inside the JSON header
        assert!(field_from_bytes(&garbled).is_err());
    }

    #[test]
    fn serialization_is_deterministic() {
        let field = sample_field();
        assert_eq!(field_to_bytes(&field), field_to_bytes(&field));
    }
}
