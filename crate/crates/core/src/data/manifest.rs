//! Trial manifest: a comma-separated table with a header row, preceded by
//! `# key=value` metadata lines (`sample_rate`, `channels`, `music_dim`).
//!
//! ```text
//! # sample_rate=128
//! # channels=32
//! # music_dim=256
//! subject,trial,track,eeg_path,emb_path,valence_rating,arousal_rating,valence_tag,arousal_tag
//! 1,1,1,eeg/s01_t01.eegx,music/track01.memb,7.25,3.5,1,0
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::formats::{load_embeddings, load_recording};
use super::{SubjectData, TrackEmbeddingSet, TrialData};
use crate::error::{Error, Result};
use crate::signal::{extract_features, BandSpec, FeatureOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: u16,
    pub trial: u16,
    pub track: u16,
    pub eeg_path: PathBuf,
    pub emb_path: PathBuf,
    pub valence_rating: f64,
    pub arousal_rating: f64,
    pub valence_tag: u8,
    pub arousal_tag: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub sample_rate: f64,
    pub channels: usize,
    pub music_dim: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Which manifest rows to load.
#[derive(Clone, Debug, Default)]
pub struct LoadFilter {
    /// Drop these tracks from every subject (curation is left to the user).
    pub exclude_tracks: Vec<u16>,
    /// Only these subjects; empty means all.
    pub subjects: Vec<u16>,
}

fn meta_err(path: &Path, field: &str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field: field.into(),
        message: message.into(),
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut meta = HashMap::new();
        for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
            let body = line.trim_start().trim_start_matches('#').trim();
            if let Some((k, v)) = body.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |key: &str| -> Result<&String> {
            meta.get(key)
                .ok_or_else(|| meta_err(path, key, "missing metadata line"))
        };
        let sample_rate: f64 = get("sample_rate")?
            .parse()
            .map_err(|_| meta_err(path, "sample_rate", "not a number"))?;
        let channels: usize = get("channels")?
            .parse()
            .map_err(|_| meta_err(path, "channels", "not an integer"))?;
        let music_dim: usize = get("music_dim")?
            .parse()
            .map_err(|_| meta_err(path, "music_dim", "not an integer"))?;

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in rdr.deserialize() {
            let e: ManifestEntry = row?;
            entries.push(e);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self {
            root,
            sample_rate,
            channels,
            music_dim,
            entries,
        };
        m.validate(path)?;
        Ok(m)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.entries.is_empty() {
            return Err(meta_err(path, "entries", "manifest lists no trials"));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.subject, e.trial)) {
                return Err(meta_err(
                    path,
                    "trial",
                    format!("duplicate (subject {}, trial {})", e.subject, e.trial),
                ));
            }
            for (name, r) in [("valence_rating", e.valence_rating), ("arousal_rating", e.arousal_rating)] {
                if !(1.0..=9.0).contains(&r) {
                    return Err(meta_err(path, name, format!("{r} outside [1, 9]")));
                }
            }
            for (name, t) in [("valence_tag", e.valence_tag), ("arousal_tag", e.arousal_tag)] {
                if t > 1 {
                    return Err(meta_err(path, name, format!("tag {t} is not binary")));
                }
            }
            for (name, p) in [("eeg_path", &e.eeg_path), ("emb_path", &e.emb_path)] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(meta_err(
                        path,
                        name,
                        format!("missing pair member {}", full.display()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# sample_rate={}", self.sample_rate).unwrap();
        writeln!(out, "# channels={}", self.channels).unwrap();
        writeln!(out, "# music_dim={}", self.music_dim).unwrap();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for e in &self.entries {
                w.serialize(e)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn subjects(&self) -> Vec<u16> {
        let mut s: Vec<u16> = self.entries.iter().map(|e| e.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Load recordings and embeddings, extract features and pair them per
    /// subject, validating every dimension against the manifest metadata.
    pub fn load_subjects(
        &self,
        bands: &[BandSpec],
        options: FeatureOptions,
        filter: &LoadFilter,
    ) -> Result<Vec<SubjectData>> {
        let mut embeddings: HashMap<PathBuf, Arc<TrackEmbeddingSet>> = HashMap::new();
        let mut subjects: BTreeMap<u16, Vec<TrialData>> = BTreeMap::new();
        for e in &self.entries {
            if filter.exclude_tracks.contains(&e.track)
                || (!filter.subjects.is_empty() && !filter.subjects.contains(&e.subject))
            {
                continue;
            }
            let emb_path = self.resolve(&e.emb_path);
            let music = match embeddings.get(&emb_path) {
                Some(m) => m.clone(),
                None => {
                    let set = load_embeddings(&emb_path)?;
                    if set.dim != self.music_dim {
                        return Err(Error::DimensionMismatch {
                            context: format!(
                                "{}: embedding dim vs manifest music_dim",
                                emb_path.display()
                            ),
                            expected: self.music_dim,
                            actual: set.dim,
                        });
                    }
                    if set.track_id != e.track {
                        return Err(meta_err(
                            &emb_path,
                            "track_id",
                            format!("file says {}, manifest says {}", set.track_id, e.track),
                        ));
                    }
                    let set = Arc::new(set);
                    embeddings.insert(emb_path.clone(), set.clone());
                    set
                }
            };
            let eeg_path = self.resolve(&e.eeg_path);
            let rec = load_recording(&eeg_path)?;
            if rec.channels != self.channels {
                return Err(Error::DimensionMismatch {
                    context: format!("{}: channels vs manifest", eeg_path.display()),
                    expected: self.channels,
                    actual: rec.channels,
                });
            }
            if (rec.sample_rate - self.sample_rate).abs() > 1e-6 {
                return Err(meta_err(
                    &eeg_path,
                    "sample_rate",
                    format!("{} Hz, manifest says {} Hz", rec.sample_rate, self.sample_rate),
                ));
            }
            if rec.subject_id != e.subject || rec.trial_id != e.trial {
                return Err(meta_err(
                    &eeg_path,
                    "subject/trial",
                    format!(
                        "file has ({}, {}), manifest has ({}, {})",
                        rec.subject_id, rec.trial_id, e.subject, e.trial
                    ),
                ));
            }
            let eeg = extract_features(&rec, bands, options)?;
            if eeg.len() != music.n_segments() {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "{}: music segments vs EEG segments of {}",
                        emb_path.display(),
                        eeg_path.display()
                    ),
                    expected: eeg.len(),
                    actual: music.n_segments(),
                });
            }
            subjects.entry(e.subject).or_default().push(TrialData {
                subject_id: e.subject,
                trial_id: e.trial,
                track_id: e.track,
                valence_rating: e.valence_rating,
                arousal_rating: e.arousal_rating,
                eeg,
                music,
            });
        }
        let out: Vec<SubjectData> = subjects
            .into_iter()
            .map(|(subject_id, trials)| SubjectData { subject_id, trials })
            .collect();
        for s in &out {
            s.validate()?;
        }
        Ok(out)
    }
}
