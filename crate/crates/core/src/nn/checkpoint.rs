//! Versioned little-endian checkpoint format.
//!
//! ```text
//! "CYCK" | u32 version
//! config: u32 d_model, heads, snb_hidden[3], lstm_hidden, seq_len,
//!         features, horizon, classes | f64 dropout, leaky_slope
//! u32 n_params, then per parameter: str name | u32 rows | u32 cols | f64 values
//! u32 n_norms, then per segment: str segment | f64 mean[F] | f64 std[F]
//! ```
//! Strings are a u32 byte length followed by UTF-8 bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureNorm, N_FEATURES};
use crate::io::{read_bytes, write_atomic};

use super::model::{Model, ModelConfig};
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CYCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model plus the per-segment feature normalization it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub norms: Vec<(String, FeatureNorm)>,
}

impl Checkpoint {
    pub fn norm_for(&self, segment: &str) -> Option<&FeatureNorm> {
        self.norms.iter().find(|(s, _)| s == segment).map(|(_, n)| n)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        let c = &self.model.config;
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        for v in [c.d_model, c.heads, c.snb_hidden[0], c.snb_hidden[1], c.snb_hidden[2]] {
            w.u32(v as u32);
        }
        for v in [c.lstm_hidden, c.seq_len, c.features, c.horizon, c.classes] {
            w.u32(v as u32);
        }
        w.f64(c.dropout);
        w.f64(c.leaky_slope);
        w.u32(self.model.store.len() as u32);
        for p in self.model.store.iter() {
            w.str(&p.name);
            w.u32(p.value.rows() as u32);
            w.u32(p.value.cols() as u32);
            for v in p.value.data() {
                w.f64(*v);
            }
        }
        let mut norms = self.norms.clone();
        norms.sort_by(|a, b| a.0.cmp(&b.0));
        w.u32(norms.len() as u32);
        for (seg, n) in &norms {
            w.str(seg);
            for v in n.mean.iter().chain(&n.std) {
                w.f64(*v);
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, context };
        if r.take(4)? != MAGIC {
            return Err(Error::format(context, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(context, format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 10];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            d_model: dims[0],
            heads: dims[1],
            snb_hidden: [dims[2], dims[3], dims[4]],
            lstm_hidden: dims[5],
            seq_len: dims[6],
            features: dims[7],
            horizon: dims[8],
            classes: dims[9],
            dropout: r.f64()?,
            leaky_slope: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| Error::format(context, e.to_string()))?;
        let mut model = Model::new(config, 0)?;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(Error::format(
                context,
                format!("expected {} tensors, found {count}", model.store.len()),
            ));
        }
        for p in model.store.iter_mut() {
            let name = r.str()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if name != p.name || (rows, cols) != p.value.shape() {
                return Err(Error::format(
                    context,
                    format!(
                        "tensor `{name}` {rows}x{cols} does not match `{}` {:?}",
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            p.value = Tensor::from_vec(rows, cols, data);
        }
        let n_norms = r.u32()? as usize;
        let mut norms = Vec::with_capacity(n_norms);
        for _ in 0..n_norms {
            let seg = r.str()?;
            let mut n = FeatureNorm::default();
            for k in 0..N_FEATURES {
                n.mean[k] = r.f64()?;
            }
            for k in 0..N_FEATURES {
                n.std[k] = r.f64()?;
            }
            norms.push((seg, n));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(context, "trailing bytes"));
        }
        if !model.store.all_finite() {
            return Err(Error::Numerical(format!("{context}: non-finite parameters")));
        }
        Ok(Checkpoint { model, norms })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, &path.display().to_string())
    }
}

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub context: &'a str,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.context, "unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.context, "invalid utf-8 string"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut norm = FeatureNorm::default();
        norm.mean[0] = 12.5;
        norm.std[18] = 0.25;
        let ckpt = Checkpoint {
            model: Model::new(ModelConfig::default(), 42).unwrap(),
            norms: vec![("b".into(), FeatureNorm::default()), ("a".into(), norm)],
        };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "t").unwrap();
        assert_eq!(back.model.store, ckpt.model.store);
        assert_eq!(back.model.config, ckpt.model.config);
        assert_eq!(back.norms[0].0, "a");
        assert_eq!(back.norm_for("a").unwrap().mean[0], 12.5);
        assert_eq!(back.to_bytes(), bytes);

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "t").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong, "t").is_err());
    }
}
