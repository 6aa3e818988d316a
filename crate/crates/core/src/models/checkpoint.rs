use std::fs;
use std::path::Path;

use crate::corpus::Reader;
use crate::error::{Error, Result};
use crate::models::config::{ModelConfig, Variant};
use crate::models::forward::Model;
use crate::models::params::{layout, Params};
use crate::numerics::{Precision, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A loaded checkpoint. Values are stored as f32 whatever the training
/// precision was.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub precision: Precision,
    pub params: Params<f32>,
}

impl Checkpoint {
    pub fn into_model<T: Scalar>(self) -> Result<Model<T>> {
        Model::new(self.config, self.params.cast())
    }
}

fn header_u32(value: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(value)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::InvalidArgument(format!("{what} {value} does not fit the checkpoint header")))
}

pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(cfg.variant.tag());
    out.extend_from_slice(&header_u32(cfg.embed_dim, "w")?);
    out.extend_from_slice(&header_u32(cfg.hidden, "k")?);
    out.extend_from_slice(&header_u32(cfg.window, "L")?);
    out.extend_from_slice(&header_u32(cfg.order, "N")?);
    out.extend_from_slice(&header_u32(cfg.vocab_size, "|V|")?);
    out.push(T::PRECISION.tag());
    let mut value_bytes = Vec::new();
    for (spec, t) in model.params().specs().iter().zip(model.params().tensors()) {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
        for &d in &spec.shape {
            out.extend_from_slice(&header_u32(d, "dimension")?);
        }
        let start = out.len();
        for v in t.values() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        value_bytes.extend_from_slice(&out[start..]);
    }
    out.extend_from_slice(&fnv1a64(&value_bytes).to_le_bytes());
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |message: String| Error::Format {
        what: "checkpoint",
        message,
    };
    let mut r = Reader { bytes, pos: 0 };
    let truncated = || bad("truncated header".into());
    let version = r.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let tag = r.take(1).ok_or_else(truncated)?[0];
    let variant = Variant::from_tag(tag).ok_or_else(|| bad(format!("unknown variant tag {tag}")))?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32().ok_or_else(truncated)? as usize;
    }
    let [w, k, l, n, v] = dims;
    let ptag = r.take(1).ok_or_else(truncated)?[0];
    let precision =
        Precision::from_tag(ptag).ok_or_else(|| bad(format!("unknown precision tag {ptag}")))?;
    let config = ModelConfig::new(variant, w, k, v).with_window(l).with_order(n);
    config.validate()?;

    let (specs, _) = layout(&config);
    let mut tensors = Vec::with_capacity(specs.len());
    let mut hasher_input = Vec::new();
    for spec in &specs {
        let len = r.u32().ok_or_else(|| bad(format!("missing tensor {}", spec.name)))? as usize;
        let name = r
            .take(len)
            .ok_or_else(|| bad(format!("truncated name of {}", spec.name)))?;
        if name != spec.name.as_bytes() {
            return Err(bad(format!(
                "expected tensor {}, found {}",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32().ok_or_else(|| bad(format!("truncated {}", spec.name)))? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("truncated shape of {}", spec.name)))?;
        if shape != spec.shape {
            return Err(Error::shape(
                "checkpoint",
                format!(
                    "{} is {:?} in the file but {:?} for the header configuration",
                    spec.name, shape, spec.shape
                ),
            ));
        }
        let raw = r
            .take(spec.size() * 4)
            .ok_or_else(|| bad(format!("truncated values of {}", spec.name)))?;
        hasher_input.extend_from_slice(raw);
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, values)?);
    }
    let stored = r.u64().ok_or_else(|| bad("missing checksum".into()))?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after checksum".into()));
    }
    if stored != fnv1a64(&hasher_input) {
        return Err(bad("checksum mismatch".into()));
    }
    Ok(Checkpoint {
        config,
        precision,
        params: Params::from_tensors(&config, tensors)?,
    })
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_every_variant() {
        for (variant, k) in [
            (Variant::Lstm, 4),
            (Variant::Attention, 4),
            (Variant::KeyValue, 4),
            (Variant::KeyValuePredict, 6),
            (Variant::Ngram, 6),
        ] {
            let cfg = ModelConfig::new(variant, 3, k, 7).with_window(2);
            let m = Model::<f32>::init(cfg, 11).unwrap();
            let bytes = checkpoint_bytes(&m).unwrap();
            let ck = parse_checkpoint(&bytes).unwrap();
            assert_eq!(ck.precision, Precision::F32);
            assert_eq!(ck.into_model::<f32>().unwrap(), m);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = ModelConfig::new(Variant::KeyValue, 3, 4, 5);
        let m = Model::<f32>::init(cfg, 1).unwrap();
        let bytes = checkpoint_bytes(&m).unwrap();
        let mut flipped = bytes.clone();
        let i = bytes.len() - 12;
        flipped[i] ^= 1;
        assert!(parse_checkpoint(&flipped).is_err());
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        // header claims k=6 but tensors were written for k=4
        let mut wrong = bytes.clone();
        wrong[9..13].copy_from_slice(&6u32.to_le_bytes());
        assert!(matches!(parse_checkpoint(&wrong), Err(Error::Shape { .. })));
    }
}
