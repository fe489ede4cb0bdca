//! Dataset types, label handling, folds, file formats and the synthetic
//! paired-data generator.

pub mod folds;
pub mod formats;
pub mod manifest;
pub mod standardize;
pub mod synth;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::FeatureMatrix;

pub use folds::{stratified_folds, FoldSplit};
pub use manifest::{Manifest, ManifestEntry};
pub use standardize::Standardizer;
pub use synth::{synth_dataset, SynthSpec, SyntheticDataset};

/// Emotion dimension a model is trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Valence,
    Arousal,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Dimension::Valence => 0,
            Dimension::Arousal => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dimension::Valence),
            1 => Some(Dimension::Arousal),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valence" => Ok(Dimension::Valence),
            "arousal" => Ok(Dimension::Arousal),
            other => Err(Error::invalid(format!("unknown dimension {other:?}"))),
        }
    }
}

/// Ratings above 5 are high (1); 5 itself and below are low (0).
pub fn binarize(rating: f64) -> Result<u8> {
    if !(1.0..=9.0).contains(&rating) {
        return Err(Error::invalid(format!("rating {rating} outside [1, 9]")));
    }
    Ok(u8::from(rating > 5.0))
}

/// Inverse-frequency weights `w_c = N / (2 N_c)`, indexed by class.
///
/// When only one class is present it gets weight 1 (as does the absent one)
/// and a warning is logged.
pub fn class_weights(labels: &[u8]) -> [f64; 2] {
    let n = labels.len() as f64;
    let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n0 = n - n1;
    if n0 == 0.0 || n1 == 0.0 {
        log::warn!("class_weights: single class among {} labels, using weight 1", labels.len());
        return [1.0, 1.0];
    }
    [n / (2.0 * n0), n / (2.0 * n1)]
}

/// Precomputed music embeddings for the aligned 3-s segments of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEmbeddingSet {
    pub track_id: u16,
    pub dim: usize,
    /// Segment-major, `n_segments x dim`.
    pub values: Vec<f64>,
    pub valence_tag: u8,
    pub arousal_tag: u8,
}

impl TrackEmbeddingSet {
    pub fn n_segments(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tag(&self, dim: Dimension) -> u8 {
        match dim {
            Dimension::Valence => self.valence_tag,
            Dimension::Arousal => self.arousal_tag,
        }
    }
}

/// One subject's trial: per-segment EEG features paired with its stimulus.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub subject_id: u16,
    pub trial_id: u16,
    pub track_id: u16,
    pub valence_rating: f64,
    pub arousal_rating: f64,
    pub eeg: Vec<FeatureMatrix>,
    pub music: Arc<TrackEmbeddingSet>,
}

impl TrialData {
    /// Binarized subject rating for `dim`; the EEG-side label.
    pub fn label(&self, dim: Dimension) -> u8 {
        let r = match dim {
            Dimension::Valence => self.valence_rating,
            Dimension::Arousal => self.arousal_rating,
        };
        u8::from(r > 5.0)
    }

    pub fn n_segments(&self) -> usize {
        self.eeg.len()
    }

    pub fn instances(&self, dim: Dimension) -> impl Iterator<Item = Instance<'_>> + '_ {
        let label = self.label(dim);
        let music_label = self.music.tag(dim);
        self.eeg.iter().enumerate().map(move |(i, eeg)| Instance {
            eeg,
            music: self.music.segment(i),
            label,
            music_label,
            subject_id: self.subject_id,
            trial_id: self.trial_id,
            track_id: self.track_id,
            segment_index: i,
        })
    }
}

/// Temporally aligned EEG/music segment pair.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a> {
    pub eeg: &'a FeatureMatrix,
    pub music: &'a [f64],
    /// Binarized subject rating.
    pub label: u8,
    /// Track-level emotion tag.
    pub music_label: u8,
    pub subject_id: u16,
    pub trial_id: u16,
    pub track_id: u16,
    pub segment_index: usize,
}

#[derive(Clone, Debug)]
pub struct SubjectData {
    pub subject_id: u16,
    pub trials: Vec<TrialData>,
}

impl SubjectData {
    pub fn channels(&self) -> usize {
        self.trials[0].eeg[0].channels
    }

    pub fn features_per_channel(&self) -> usize {
        self.trials[0].eeg[0].features_per_channel
    }

    pub fn music_dim(&self) -> usize {
        self.trials[0].music.dim
    }

    /// Check the pairing invariants: every EEG segment has exactly one music
    /// partner with the same index, and shapes agree across trials.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .trials
            .first()
            .ok_or_else(|| Error::invalid(format!("subject {} has no trials", self.subject_id)))?;
        let (c, f, d) = (first.eeg[0].channels, first.eeg[0].features_per_channel, first.music.dim);
        for t in &self.trials {
            let ctx = |what: &str| format!("subject {} trial {} {what}", t.subject_id, t.trial_id);
            if t.eeg.len() != t.music.n_segments() {
                return Err(Error::DimensionMismatch {
                    context: ctx("music segments vs EEG segments"),
                    expected: t.eeg.len(),
                    actual: t.music.n_segments(),
                });
            }
            if t.music.dim != d {
                return Err(Error::DimensionMismatch {
                    context: ctx("music embedding dim"),
                    expected: d,
                    actual: t.music.dim,
                });
            }
            for m in &t.eeg {
                if m.channels != c || m.features_per_channel != f {
                    return Err(Error::DimensionMismatch {
                        context: ctx("EEG feature shape (channels*features)"),
                        expected: c * f,
                        actual: m.channels * m.features_per_channel,
                    });
                }
            }
        }
        Ok(())
    }
}
