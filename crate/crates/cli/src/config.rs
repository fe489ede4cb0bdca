//! Run configuration: one TOML file, then command-line overrides.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//! jobs = 1
//!
//! [data]
//! manifest = "data/manifest.csv"
//! dimension = "valence"      # omit to run both
//! exclude_tracks = []
//! subjects = []              # empty: all
//!
//! [features]
//! per_window = true
//!
//! [model]
//! lstm_hidden = 32
//! attention_dim = 32
//! music_hidden = [128, 128]
//! embed_dim = 64
//! disc_hidden = 32
//!
//! [train]
//! learning_rate = 1e-4
//! patience = 15
//! max_epochs = 300
//! batch_size = 32
//! lambda_grl = 1.0
//! disc_lr_scale = 1.0
//! music_supervision = true
//! domain_discriminator = true
//! mix_mode = "modality"      # or "mismatch"
//! validation = "heldout"     # or "inner"
//! folds = 5
//! lambdas = { lambda1 = 1.0, lambda2 = 0.5, lambda11 = 1.0, lambda12 = 1.0 }
//!
//! [eval]
//! distance = "euclidean"     # or "cosine"
//! mode = "aggregated"        # or "segment"
//! corpus = "test"            # or "full"
//! k = 10
//! smooth_window = 7
//!
//! [sweep]
//! lambda1 = [1.0]
//! lambda2 = [0.0, 0.5, 1.0]
//! lambda11 = [1.0]
//! lambda12 = [1.0]
//! ```
//!
//! Relative paths in the file resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cmaf::data::Dimension;
use cmaf::eval::EvalOptions;
use cmaf::model::ModelDims;
use cmaf::signal::FeatureOptions;
use cmaf::training::TrainConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; overrides `train.seed` when present.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub data: DataSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("runs"),
            jobs: 1,
            data: DataSection::default(),
            features: FeatureSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub dimension: Option<Dimension>,
    pub exclude_tracks: Vec<u16>,
    pub subjects: Vec<u16>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub per_window: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { per_window: true }
    }
}

/// Model sizes not fixed by the data.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub music_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub disc_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::default();
        Self {
            lstm_hidden: d.lstm_hidden,
            attention_dim: d.attention_dim,
            music_hidden: d.music_hidden,
            embed_dim: d.embed_dim,
            disc_hidden: d.disc_hidden,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda11: Vec<f64>,
    pub lambda12: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambda1: vec![1.0],
            lambda2: vec![0.0, 0.5, 1.0],
            lambda11: vec![1.0],
            lambda12: vec![1.0],
        }
    }
}

/// Objective variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Only the EEG emotion loss: no music branch at all.
    EllAOnly,
    /// Both emotion losses, no discriminator.
    NoEllDd,
}

impl Ablation {
    pub fn from_flags(no_music: bool, no_grl: bool) -> Self {
        match (no_music, no_grl) {
            (true, _) => Ablation::EllAOnly,
            (false, true) => Ablation::NoEllDd,
            (false, false) => Ablation::Full,
        }
    }

    pub fn apply(self, train: &mut TrainConfig) {
        match self {
            Ablation::Full => {}
            Ablation::EllAOnly => {
                train.music_supervision = false;
                train.domain_discriminator = false;
            }
            Ablation::NoEllDd => train.domain_discriminator = false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::EllAOnly => "ell_a_only",
            Ablation::NoEllDd => "no_ell_dd",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl RunConfig {
    /// Parse `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.data.manifest {
            if m.is_relative() {
                cfg.data.manifest = Some(base.join(m));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Effective seed, written into the training config.
    pub fn finalize_seed(&mut self) {
        if let Some(s) = self.seed {
            self.train.seed = s;
        }
        self.seed = Some(self.train.seed);
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        match self.data.dimension {
            Some(d) => vec![d],
            None => vec![Dimension::Valence, Dimension::Arousal],
        }
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            per_window: self.features.per_window,
            ..FeatureOptions::default()
        }
    }

    /// Template dims; channel, feature and music sizes come from the data.
    pub fn model_template(&self) -> ModelDims {
        ModelDims {
            lstm_hidden: self.model.lstm_hidden,
            attention_dim: self.model.attention_dim,
            music_hidden: self.model.music_hidden.clone(),
            embed_dim: self.model.embed_dim,
            disc_hidden: self.model.disc_hidden,
            ..ModelDims::default()
        }
    }

    pub fn manifest(&self) -> anyhow::Result<&Path> {
        let Some(m) = &self.data.manifest else {
            bail!("data.manifest is not set (use --manifest or the [data] table)");
        };
        if !m.is_file() {
            bail!("data.manifest: {} does not exist", m.display());
        }
        Ok(m)
    }

    /// Everything checkable without touching the data.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate().context("train")?;
        self.model_template().validate().context("model")?;
        if self.jobs == 0 {
            bail!("jobs must be >= 1");
        }
        if self.eval.k == 0 {
            bail!("eval.k must be >= 1");
        }
        if self.eval.smooth_window == 0 {
            bail!("eval.smooth_window must be >= 1");
        }
        let s = &self.sweep;
        for (name, list) in [
            ("lambda1", &s.lambda1),
            ("lambda2", &s.lambda2),
            ("lambda11", &s.lambda11),
            ("lambda12", &s.lambda12),
        ] {
            if list.is_empty() {
                bail!("sweep.{name} is empty");
            }
            if list.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                bail!("sweep.{name} values must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rte = 0.1").is_err());
        assert!(toml::from_str::<RunConfig>("[eval]\nk = 5\nwindow = 3").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("[train]\npatience = 4\n[data]\ndimension = \"arousal\"").unwrap();
        assert_eq!(c.train.patience, 4);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.dimensions(), vec![Dimension::Arousal]);
        assert_eq!(c.model.music_hidden, vec![128, 128]);
        c.validate().unwrap();
    }

    #[test]
    fn seed_precedence() {
        let mut c: RunConfig = toml::from_str("seed = 11\n[train]\nseed = 3").unwrap();
        c.finalize_seed();
        assert_eq!(c.train.seed, 11);
        let mut c: RunConfig = toml::from_str("[train]\nseed = 3").unwrap();
        c.finalize_seed();
        assert_eq!(c.seed, Some(3));
    }

    #[test]
    fn ablation_switches() {
        let mut t = TrainConfig::default();
        Ablation::from_flags(true, false).apply(&mut t);
        assert!(!t.music_supervision && !t.domain_discriminator);
        let mut t = TrainConfig::default();
        Ablation::from_flags(false, true).apply(&mut t);
        assert!(t.music_supervision && !t.domain_discriminator);
    }
}
