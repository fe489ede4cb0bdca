//! Little-endian binary files for EEG trials (`EEGX`) and per-track music
//! segment embeddings (`MEMB`).
//!
//! ```text
//! EEGX: magic[4] version:u16 subject:u16 trial:u16 channels:u16 samples:u32
//!       sample_rate:f32 valence:f32 arousal:f32 data:f32[channels*samples]
//!       (channel-major)
//! MEMB: magic[4] version:u16 track:u16 n_segments:u16 dim:u16
//!       valence_tag:u8 arousal_tag:u8 data:f32[n_segments*dim]
//!       (segment-major)
//! ```

use std::fs;
use std::path::Path;

use super::TrackEmbeddingSet;
use crate::error::{Error, Result};
use crate::signal::Recording;

pub const EEG_MAGIC: &[u8; 4] = b"EEGX";
pub const EMB_MAGIC: &[u8; 4] = b"MEMB";
pub const FORMAT_VERSION: u16 = 1;

const EEG_HEADER: usize = 28;
const EMB_HEADER: usize = 14;

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn f32s(&mut self, n: usize) -> Vec<f64> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect()
    }

    fn format_err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            field: field.into(),
            message: message.into(),
        }
    }

    fn check_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4);
        if got != magic {
            return Err(self.format_err(
                "magic",
                format!(
                    "expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        let version = self.u16();
        if version != FORMAT_VERSION {
            return Err(self.format_err("version", format!("unsupported version {version}")));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn truncated(path: &Path, expected: usize, actual: usize) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        expected,
        actual,
    }
}

pub fn encode_recording(rec: &Recording) -> Result<Vec<u8>> {
    let channels = u16::try_from(rec.channels).map_err(|_| Error::invalid("too many channels"))?;
    let samples = u32::try_from(rec.samples).map_err(|_| Error::invalid("too many samples"))?;
    let mut out = Vec::with_capacity(EEG_HEADER + 4 * rec.data.len());
    out.extend_from_slice(EEG_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rec.subject_id.to_le_bytes());
    out.extend_from_slice(&rec.trial_id.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&samples.to_le_bytes());
    out.extend_from_slice(&(rec.sample_rate as f32).to_le_bytes());
    out.extend_from_slice(&(rec.valence as f32).to_le_bytes());
    out.extend_from_slice(&(rec.arousal as f32).to_le_bytes());
    for &v in &rec.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_recording(path: &Path, buf: &[u8]) -> Result<Recording> {
    if buf.len() < EEG_HEADER {
        return Err(truncated(path, EEG_HEADER, buf.len()));
    }
    let mut r = Reader { path, buf, pos: 0 };
    r.check_magic(EEG_MAGIC)?;
    let subject_id = r.u16();
    let trial_id = r.u16();
    let channels = r.u16() as usize;
    let samples = r.u32() as usize;
    let sample_rate = r.f32() as f64;
    let valence = r.f32() as f64;
    let arousal = r.f32() as f64;
    let expected = EEG_HEADER + 4 * channels * samples;
    if buf.len() != expected {
        return Err(truncated(path, expected, buf.len()));
    }
    let data = r.f32s(channels * samples);
    let rec = Recording {
        subject_id,
        trial_id,
        sample_rate,
        channels,
        samples,
        data,
        valence,
        arousal,
    };
    rec.validate().map_err(|e| r.format_err("header", e.to_string()))?;
    Ok(rec)
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    decode_recording(path, &read_file(path)?)
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    fs::write(path, encode_recording(rec)?).map_err(|e| Error::io(path, e))
}

pub fn encode_embeddings(set: &TrackEmbeddingSet) -> Result<Vec<u8>> {
    let n = u16::try_from(set.n_segments()).map_err(|_| Error::invalid("too many segments"))?;
    let dim = u16::try_from(set.dim).map_err(|_| Error::invalid("embedding dim too large"))?;
    let mut out = Vec::with_capacity(EMB_HEADER + 4 * set.values.len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&set.track_id.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.push(set.valence_tag);
    out.push(set.arousal_tag);
    for &v in &set.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(path: &Path, buf: &[u8]) -> Result<TrackEmbeddingSet> {
    if buf.len() < EMB_HEADER {
        return Err(truncated(path, EMB_HEADER, buf.len()));
    }
    let mut r = Reader { path, buf, pos: 0 };
    r.check_magic(EMB_MAGIC)?;
    let track_id = r.u16();
    let n_segments = r.u16() as usize;
    let dim = r.u16() as usize;
    let valence_tag = r.u8();
    let arousal_tag = r.u8();
    if n_segments == 0 || dim == 0 {
        return Err(r.format_err("n_segments/dim", "must be positive"));
    }
    for (name, t) in [("valence_tag", valence_tag), ("arousal_tag", arousal_tag)] {
        if t > 1 {
            return Err(r.format_err(name, format!("tag {t} is not binary")));
        }
    }
    let expected = EMB_HEADER + 4 * n_segments * dim;
    if buf.len() != expected {
        return Err(truncated(path, expected, buf.len()));
    }
    let values = r.f32s(n_segments * dim);
    Ok(TrackEmbeddingSet {
        track_id,
        dim,
        values,
        valence_tag,
        arousal_tag,
    })
}

pub fn load_embeddings(path: &Path) -> Result<TrackEmbeddingSet> {
    decode_embeddings(path, &read_file(path)?)
}

pub fn write_embeddings(path: &Path, set: &TrackEmbeddingSet) -> Result<()> {
    fs::write(path, encode_embeddings(set)?).map_err(|e| Error::io(path, e))
}
