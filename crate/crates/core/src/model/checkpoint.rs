//! Checkpoint file, little-endian throughout:
//!
//! ```text
//! magic "CMAF" | version u16 | dimension u8 | subject u16 | fold u16 (0xFFFF = none)
//! channels u32 | features_per_channel u32 | lstm_hidden u32 | attention_dim u32
//! music_dim u32 | embed_dim u32 | disc_hidden u32 | n_music_hidden u32 | widths u32...
//! n_test u32 | test trial ids u16...
//! n_std u32 | mean f64... | std f64...
//! n_blocks u32 | parameter blocks as f64, in layout order
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelDims};
use crate::autodiff::Tensor;
use crate::data::{Dimension, Standardizer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMAF";
pub const CHECKPOINT_VERSION: u16 = 1;
const NO_FOLD: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub standardizer: Standardizer,
    pub dimension: Dimension,
    pub subject_id: u16,
    pub fold: Option<u16>,
    pub test_trials: Vec<u16>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let d = &self.model.dims;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.dimension.code());
        out.extend_from_slice(&self.subject_id.to_le_bytes());
        out.extend_from_slice(&self.fold.unwrap_or(NO_FOLD).to_le_bytes());
        let mut u32s = vec![
            d.channels,
            d.features_per_channel,
            d.lstm_hidden,
            d.attention_dim,
            d.music_dim,
            d.embed_dim,
            d.disc_hidden,
            d.music_hidden.len(),
        ];
        u32s.extend(&d.music_hidden);
        u32s.push(self.test_trials.len());
        for v in u32s {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in &self.test_trials {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out.extend_from_slice(&(self.standardizer.len() as u32).to_le_bytes());
        for v in self.standardizer.mean.iter().chain(&self.standardizer.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for p in &self.model.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |field: &str, message: String| Error::Format {
            path: path.to_path_buf(),
            field: field.into(),
            message,
        };
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fmt("magic", format!("expected CMAF, found {magic:?}")));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt("version", format!("unsupported version {version}")));
        }
        let code = r.u8()?;
        let dimension = Dimension::from_code(code).ok_or_else(|| fmt("dimension", format!("unknown code {code}")))?;
        let subject_id = r.u16()?;
        let fold = match r.u16()? {
            NO_FOLD => None,
            f => Some(f),
        };
        let channels = r.u32()?;
        let features_per_channel = r.u32()?;
        let lstm_hidden = r.u32()?;
        let attention_dim = r.u32()?;
        let music_dim = r.u32()?;
        let embed_dim = r.u32()?;
        let disc_hidden = r.u32()?;
        let n_hidden = r.u32()?;
        let music_hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let dims = ModelDims {
            channels,
            features_per_channel,
            lstm_hidden,
            attention_dim,
            music_dim,
            music_hidden,
            embed_dim,
            disc_hidden,
        };
        let n_test = r.u32()?;
        let test_trials = (0..n_test).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        let n_std = r.u32()?;
        let mean = r.f64s(n_std)?;
        let std = r.f64s(n_std)?;
        let n_blocks = r.u32()?;
        // Shapes come from the layout implied by the dims.
        let shapes: Vec<Vec<usize>> = super::layout(&dims).0.into_iter().map(|s| s.shape).collect();
        if shapes.len() != n_blocks {
            return Err(fmt(
                "n_blocks",
                format!("dims imply {} blocks, file has {n_blocks}", shapes.len()),
            ));
        }
        let mut params = Vec::with_capacity(n_blocks);
        for shape in shapes {
            let n = shape.iter().product();
            params.push(Tensor::new(shape, r.f64s(n)?)?);
        }
        if r.pos != bytes.len() {
            return Err(fmt("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model: Model::from_params(dims, params)?,
            standardizer: Standardizer { mean, std },
            dimension,
            subject_id,
            fold,
            test_trials,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let dims = ModelDims {
            channels: 3,
            features_per_channel: 2,
            lstm_hidden: 4,
            attention_dim: 2,
            music_dim: 5,
            music_hidden: vec![3, 2],
            embed_dim: 64,
            disc_hidden: 3,
        };
        Checkpoint {
            model: Model::init(dims, 9).unwrap(),
            standardizer: Standardizer {
                mean: vec![0.5; 6],
                std: vec![2.0; 6],
            },
            dimension: Dimension::Arousal,
            subject_id: 4,
            fold: Some(2),
            test_trials: vec![3, 8, 11],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(Checkpoint::decode(&bytes, Path::new("x")).unwrap(), c);
        assert_eq!(bytes, c.encode());
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().encode();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 3], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad, Path::new("x")), Err(Error::Format { .. })));
    }
}
