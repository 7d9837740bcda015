//! Binary model container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "DEEPARM\0"
//! version          u32      1
//! likelihood       u8       0 = gaussian, 1 = negbin
//! granularity      u8       ASCII H, D, W or M
//! scaled           u8       0 or 1
//! reserved         u8       0
//! conditioning     u64
//! prediction       u64
//! num_categories   u64
//! embedding_dim    u64
//! hidden           u64
//! layers           u64
//! feature_dim      u64      d
//! feature mean     d × f64
//! feature std      d × f64
//! block count      u64
//! per block:
//!   name length    u32
//!   name           UTF-8
//!   rows, cols     u64, u64
//!   values         rows × cols × f64, row-major
//! ```
//!
//! Blocks appear in parameter order (`embedding`, then `lstm{l}.w_input`,
//! `lstm{l}.w_recurrent`, `lstm{l}.bias` per layer, then `heads.weights`,
//! `heads.bias`). Loading checks every name and shape against the header.

use std::path::Path;

use deepar_core::covariates::Standardizer;
use deepar_core::gradcheck::ParamBlocks;
use deepar_core::model::{ModelConfig, Weights};
use deepar_core::{Granularity, LikelihoodKind, ModelParams, WindowSpec};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DEEPARM\0";
pub const VERSION: u32 = 1;

fn kind_code(kind: LikelihoodKind) -> u8 {
    match kind {
        LikelihoodKind::Gaussian => 0,
        LikelihoodKind::NegativeBinomial => 1,
    }
}

pub fn encode(model: &ModelParams) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind_code(c.kind));
    out.push(c.granularity.code().as_bytes()[0]);
    out.push(c.scaled as u8);
    out.push(0);
    for v in [
        c.spec.conditioning,
        c.spec.prediction,
        c.num_categories,
        c.embedding_dim,
        c.hidden,
        c.layers,
        model.standardizer.dim(),
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in model.standardizer.mean.iter().chain(&model.standardizer.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let shapes = model.weights.block_shapes();
    out.extend_from_slice(&(shapes.len() as u64).to_le_bytes());
    for ((name, rows, cols), (_, values)) in shapes.iter().zip(model.weights.blocks()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(*rows as u64).to_le_bytes());
        out.extend_from_slice(&(*cols as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Invalid(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Invalid("model file dimension overflows".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Invalid("model file block too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: String| Error::Invalid(format!("not a valid model file: {m}"));
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = match r.u8()? {
        0 => LikelihoodKind::Gaussian,
        1 => LikelihoodKind::NegativeBinomial,
        k => return Err(bad(format!("unknown likelihood code {k}"))),
    };
    let g = r.u8()?;
    let granularity = Granularity::from_code(&(g as char).to_string())
        .ok_or_else(|| bad(format!("unknown granularity byte {g}")))?;
    let scaled = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(bad(format!("bad scaled flag {v}"))),
    };
    r.u8()?;
    let conditioning = r.usize()?;
    let prediction = r.usize()?;
    let config = ModelConfig {
        kind,
        spec: WindowSpec::new(conditioning, prediction)?,
        granularity,
        num_categories: r.usize()?,
        embedding_dim: r.usize()?,
        hidden: r.usize()?,
        layers: r.usize()?,
        scaled,
    };
    config.validate()?;
    let d = r.usize()?;
    if d != config.feature_dim() {
        return Err(bad(format!("feature dimension {d}, expected {}", config.feature_dim())));
    }
    let standardizer = Standardizer {
        mean: r.f64s(d)?,
        std: r.f64s(d)?,
    };
    let mut weights = Weights::zeros(&config);
    let expected = weights.block_shapes();
    let count = r.usize()?;
    if count != expected.len() {
        return Err(bad(format!("{count} parameter blocks, expected {}", expected.len())));
    }
    for (k, (name, rows, cols)) in expected.iter().enumerate() {
        let len = r.u32()? as usize;
        let got_name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("block name is not UTF-8".into()))?;
        let got_rows = r.usize()?;
        let got_cols = r.usize()?;
        if got_name != name || got_rows != *rows || got_cols != *cols {
            return Err(bad(format!(
                "block {k} is `{got_name}` {got_rows}×{got_cols}, expected `{name}` {rows}×{cols}"
            )));
        }
        let values = r.f64s(rows * cols)?;
        weights.blocks_mut()[k].copy_from_slice(&values);
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelParams::new(config, standardizer, weights)?)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use deepar_core::rng::{substream, Stream};

    fn model(kind: LikelihoodKind, layers: usize) -> ModelParams {
        let cfg = ModelConfig {
            kind,
            spec: WindowSpec::new(7, 3).unwrap(),
            granularity: Granularity::Hourly,
            num_categories: 4,
            embedding_dim: 3,
            hidden: 5,
            layers,
            scaled: kind == LikelihoodKind::NegativeBinomial,
        };
        let st = Standardizer {
            mean: vec![0.1, 11.5, 3.0],
            std: vec![1.0 / 3.0, 6.9, 2.0],
        };
        ModelParams::init(cfg, st, &mut substream(5, Stream::Init, 0)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [LikelihoodKind::Gaussian, LikelihoodKind::NegativeBinomial] {
            let m = model(kind, 2);
            let bytes = encode(&m);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&model(LikelihoodKind::Gaussian, 1));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut version = bytes.clone();
        version[8] = 9;
        assert!(decode(&version).is_err());
    }
}
