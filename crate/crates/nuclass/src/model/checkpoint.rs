//! Checkpoint archives.
//!
//! A checkpoint is a single file carrying the canonical-JSON `ModelConfig`
//! followed by every named parameter tensor with an explicit shape header.
//! Float checkpoints store little-endian 32-bit floats; fixed-point
//! checkpoints store bit-packed two's-complement integers plus the
//! `(total_bits, frac_bits)` metadata needed to reconstruct the dequantized
//! values bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::{build_model, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NUCK";
const VERSION: u32 = 1;

/// How parameter payloads are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Float32,
    Fixed { total_bits: u8, frac_bits: u8 },
}

/// Serializes a value as canonical JSON: UTF-8, object keys sorted.
pub(crate) fn canonical_json<T: serde::Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key, so round-tripping through
    // Value sorts object keys
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub(crate) fn write_archive(
    path: &Path,
    config: &ModelConfig,
    kind: PayloadKind,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    match kind {
        PayloadKind::Float32 => w.write_all(&[0u8]).map_err(io_err)?,
        PayloadKind::Fixed { total_bits, frac_bits } => {
            w.write_all(&[1u8, total_bits, frac_bits]).map_err(io_err)?
        }
    }
    let config_json = canonical_json(config)?;
    w.write_all(&(config_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(config_json.as_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io_err)?;

    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&[tensor.shape().len() as u8]).map_err(io_err)?;
        for dim in tensor.shape() {
            w.write_all(&(*dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        match kind {
            PayloadKind::Float32 => {
                for v in tensor.data() {
                    w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
                }
            }
            PayloadKind::Fixed { total_bits, frac_bits } => {
                let packed = pack_fixed(name, tensor.data(), total_bits, frac_bits)?;
                w.write_all(&packed).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Bit-packs values as `round(v * 2^f)` in two's complement, LSB first.
fn pack_fixed(name: &str, values: &[f64], total_bits: u8, frac_bits: u8) -> Result<Vec<u8>> {
    let qmax = (1i64 << (total_bits - 1)) - 1;
    let scale = (1u64 << frac_bits) as f64;
    let mut out = vec![0u8; (values.len() * total_bits as usize).div_ceil(8)];
    let mut bitpos = 0usize;
    for v in values {
        let q = (v * scale).round_ties_even() as i64;
        if q > qmax || q < -qmax {
            return Err(Error::QuantRange {
                tensor: name.to_string(),
                value: *v,
                max: qmax as f64 / scale,
            });
        }
        let bits = (q as u64) & ((1u64 << total_bits) - 1);
        for b in 0..total_bits as usize {
            if bits >> b & 1 == 1 {
                out[(bitpos + b) / 8] |= 1 << ((bitpos + b) % 8);
            }
        }
        bitpos += total_bits as usize;
    }
    Ok(out)
}

fn unpack_fixed(packed: &[u8], count: usize, total_bits: u8, frac_bits: u8) -> Vec<f64> {
    let scale = (1u64 << frac_bits) as f64;
    let mut out = Vec::with_capacity(count);
    let mut bitpos = 0usize;
    for _ in 0..count {
        let mut bits: u64 = 0;
        for b in 0..total_bits as usize {
            if packed[(bitpos + b) / 8] >> ((bitpos + b) % 8) & 1 == 1 {
                bits |= 1 << b;
            }
        }
        bitpos += total_bits as usize;
        // sign extend
        let shift = 64 - total_bits as u32;
        let q = ((bits << shift) as i64) >> shift;
        out.push(q as f64 / scale);
    }
    out
}

struct RawArchive {
    config: ModelConfig,
    kind: PayloadKind,
    tensors: Vec<(String, Tensor)>,
}

fn read_archive(path: &Path) -> Result<RawArchive> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint archive", path.display())));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(io_err)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
    }
    let mut kind_byte = [0u8; 1];
    r.read_exact(&mut kind_byte).map_err(io_err)?;
    let kind = match kind_byte[0] {
        0 => PayloadKind::Float32,
        1 => {
            let mut meta = [0u8; 2];
            r.read_exact(&mut meta).map_err(io_err)?;
            if meta[0] < 2 || meta[0] > 32 || meta[1] >= meta[0] {
                return Err(Error::Checkpoint(format!(
                    "invalid fixed-point metadata: total_bits={} frac_bits={}",
                    meta[0], meta[1]
                )));
            }
            PayloadKind::Fixed {
                total_bits: meta[0],
                frac_bits: meta[1],
            }
        }
        k => return Err(Error::Checkpoint(format!("unknown payload kind {k}"))),
    };

    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8).map_err(io_err)?;
    let mut config_bytes = vec![0u8; u64::from_le_bytes(len8) as usize];
    r.read_exact(&mut config_bytes).map_err(io_err)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;

    let mut count4 = [0u8; 4];
    r.read_exact(&mut count4).map_err(io_err)?;
    let count = u32::from_le_bytes(count4) as usize;

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len2 = [0u8; 2];
        r.read_exact(&mut len2).map_err(io_err)?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(len2) as usize];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("bad tensor name: {e}")))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(io_err)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            r.read_exact(&mut len8).map_err(io_err)?;
            shape.push(u64::from_le_bytes(len8) as usize);
        }
        let n: usize = shape.iter().product();
        let data = match kind {
            PayloadKind::Float32 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf).map_err(io_err)?;
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            PayloadKind::Fixed { total_bits, frac_bits } => {
                let mut buf = vec![0u8; (n * total_bits as usize).div_ceil(8)];
                r.read_exact(&mut buf).map_err(io_err)?;
                unpack_fixed(&buf, n, total_bits, frac_bits)
            }
        };
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(RawArchive { config, kind, tensors })
}

fn model_from_archive(archive: RawArchive) -> Result<Model> {
    // validates config invariants before accepting any tensors
    let mut model = build_model(&archive.config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_parameters()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if archive.tensors.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "archive has {} tensors, model expects {}",
            archive.tensors.len(),
            expected.len()
        )));
    }
    for ((name, tensor), (want_name, want_shape)) in archive.tensors.iter().zip(&expected) {
        if name != want_name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: archive has {name}, model expects {want_name}"
            )));
        }
        if tensor.shape() != &want_shape[..] {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: archive shape {:?} does not match model shape {:?}",
                tensor.shape(),
                want_shape
            )));
        }
        if !tensor.all_finite() {
            return Err(Error::Checkpoint(format!("tensor {name} contains non-finite values")));
        }
    }
    model.for_each_param_mut(|i, t| {
        t.data_mut().copy_from_slice(archive.tensors[i].1.data());
    });
    Ok(model)
}

/// Saves the model with 32-bit float parameter payloads.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_archive(
        path.as_ref(),
        model.config(),
        PayloadKind::Float32,
        &model.named_parameters(),
    )
}

/// Loads a float or fixed-point checkpoint, validating the config and every
/// tensor shape before accepting it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    model_from_archive(read_archive(path.as_ref())?)
}

pub(crate) fn save_fixed_checkpoint(
    model: &Model,
    total_bits: u8,
    frac_bits: u8,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_archive(
        path.as_ref(),
        model.config(),
        PayloadKind::Fixed { total_bits, frac_bits },
        &model.named_parameters(),
    )
}

pub(crate) fn load_checkpoint_with_kind(path: impl AsRef<Path>) -> Result<(Model, PayloadKind)> {
    let archive = read_archive(path.as_ref())?;
    let kind = archive.kind;
    Ok((model_from_archive(archive)?, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn float_round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = build_model(&ModelConfig::tiny()).unwrap();
        model.randomize_all(3);
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        // a second save of the loaded model must be byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn fixed_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.qck");
        let mut model = build_model(&ModelConfig::tiny()).unwrap();
        model.randomize_all(5);
        // quantize in place onto the 2^-10 grid so packing is exact
        model.for_each_param_mut(|_, t| {
            for v in t.data_mut() {
                *v = (*v * 1024.0).round_ties_even() / 1024.0;
            }
        });
        save_fixed_checkpoint(&model, 16, 10, &path).unwrap();
        let (loaded, kind) = load_checkpoint_with_kind(&path).unwrap();
        assert_eq!(kind, PayloadKind::Fixed { total_bits: 16, frac_bits: 10 });
        for ((_, a), (_, b)) in model.named_parameters().iter().zip(loaded.named_parameters()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn pack_rejects_out_of_range() {
        let err = pack_fixed("w", &[100.0], 8, 4, ).unwrap_err();
        assert!(matches!(err, Error::QuantRange { .. }));
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = build_model(&ModelConfig::tiny()).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
