//! `cmaf`: synthesise data, extract features, train the bi-stream model and
//! evaluate classification and retrieval.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Logs go to stderr as `key=value` records; `RUST_LOG` sets the level.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cmaf::data::{Dimension, SynthSpec};
use cmaf::eval::{CorpusScope, Distance, RetrievalMode};
use cmaf::training::{MixMode, ValidationSplit};
use serde::de::DeserializeOwned;

use commands::{usage, Failure, Outcome};
use config::{Ablation, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "cmaf", version, about = "Cross-modal EEG/music emotion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired EEG/music dataset with a manifest.
    Synth(SynthArgs),
    /// Extract DE features and write them as a table.
    Features(CommonArgs),
    /// Cross-validated training; writes one checkpoint per subject and fold.
    Train(TrainArgs),
    /// Classification and retrieval metrics from saved checkpoints.
    Eval(EvalArgs),
    /// Per-query retrieval rankings from saved checkpoints.
    Retrieve(EvalArgs),
    /// Per-track temporal mAP curves from saved checkpoints.
    Temporal(EvalArgs),
    /// Dump common-space embeddings of every test segment.
    Export(EvalArgs),
    /// Grid over the objective weights from the `[sweep]` table.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for the manifest and data files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    tracks: Option<usize>,
    /// Segments per track (recordings last segments + 2 seconds).
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    music_dim: Option<usize>,
    /// Class separation in [0, 1].
    #[arg(long)]
    separability: Option<f64>,
    /// Scale of the constant offset between modalities.
    #[arg(long)]
    domain_shift: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            subjects: self.subjects.unwrap_or(d.subjects),
            tracks: self.tracks.unwrap_or(d.tracks),
            segments_per_track: self.segments.unwrap_or(d.segments_per_track),
            channels: self.channels.unwrap_or(d.channels),
            music_dim: self.music_dim.unwrap_or(d.music_dim),
            separability: self.separability.unwrap_or(d.separability),
            domain_shift: self.domain_shift.unwrap_or(d.domain_shift),
            noise: self.noise.unwrap_or(d.noise),
            sample_rate: self.sample_rate.unwrap_or(d.sample_rate),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

/// Flags every data-reading command accepts; they override the file.
#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (`output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// valence or arousal; both when neither flag nor file sets it.
    #[arg(long, value_parser = parse_dimension)]
    dimension: Option<Dimension>,
    /// Comma-separated subject ids to load.
    #[arg(long, value_delimiter = ',')]
    subjects: Option<Vec<u16>>,
    /// Comma-separated track ids to drop.
    #[arg(long, value_delimiter = ',')]
    exclude_tracks: Option<Vec<u16>>,
    /// Average the three window DE values per band (4 features per channel).
    #[arg(long)]
    per_band: bool,
}

#[derive(Args, Debug)]
struct AblationArgs {
    /// Drop the music branch: only the EEG emotion loss.
    #[arg(long)]
    no_music: bool,
    /// Drop the discriminator and its loss.
    #[arg(long)]
    no_grl: bool,
}

#[derive(Args, Debug)]
struct TrainOverrides {
    /// Parallel (subject, fold) jobs.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// modality or mismatch.
    #[arg(long, value_parser = parse_enum::<MixMode>)]
    mix_mode: Option<MixMode>,
    /// heldout or inner.
    #[arg(long, value_parser = parse_enum::<ValidationSplit>)]
    validation: Option<ValidationSplit>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    ablation: AblationArgs,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Evaluate the checkpoints of this ablation setting.
    #[command(flatten)]
    ablation: AblationArgs,
    /// euclidean or cosine.
    #[arg(long, value_parser = parse_enum::<Distance>)]
    distance: Option<Distance>,
    /// aggregated or segment.
    #[arg(long, value_parser = parse_enum::<RetrievalMode>)]
    mode: Option<RetrievalMode>,
    /// test or full.
    #[arg(long, value_parser = parse_enum::<CorpusScope>)]
    corpus: Option<CorpusScope>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    smooth_window: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long, value_delimiter = ',')]
    lambda1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda11: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambda12: Option<Vec<f64>>,
}

fn parse_dimension(s: &str) -> Result<Dimension, String> {
    s.parse().map_err(|e: cmaf::Error| e.to_string())
}

/// Parse a lowercase enum name the same way the config file does.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    set(&mut cfg.output_dir, common.out.clone());
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.dimension.is_some() {
        cfg.data.dimension = common.dimension;
    }
    set(&mut cfg.data.subjects, common.subjects.clone());
    set(&mut cfg.data.exclude_tracks, common.exclude_tracks.clone());
    if common.per_band {
        cfg.features.per_window = false;
    }
    cfg.finalize_seed();
    Ok(cfg)
}

fn apply_train(cfg: &mut RunConfig, t: &TrainOverrides) {
    set(&mut cfg.jobs, t.jobs);
    let tc = &mut cfg.train;
    set(&mut tc.learning_rate, t.learning_rate);
    set(&mut tc.max_epochs, t.max_epochs);
    set(&mut tc.patience, t.patience);
    set(&mut tc.batch_size, t.batch_size);
    set(&mut tc.folds, t.folds);
    set(&mut tc.mix_mode, t.mix_mode);
    set(&mut tc.validation, t.validation);
}

fn apply_eval(cfg: &mut RunConfig, a: &EvalArgs) {
    let e = &mut cfg.eval;
    set(&mut e.distance, a.distance);
    set(&mut e.mode, a.mode);
    set(&mut e.corpus, a.corpus);
    set(&mut e.k, a.k);
    set(&mut e.smooth_window, a.smooth_window);
}

fn prepared(common: &CommonArgs, tweak: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Failure> {
    let mut cfg = usage(resolve(common))?;
    tweak(&mut cfg);
    usage(cfg.validate().context("invalid configuration"))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Synth(a) => commands::synth(&a.spec(), &a.out),
        Command::Features(c) => commands::features(&prepared(&c, |_| {})?),
        Command::Train(a) => {
            let cfg = prepared(&a.common, |c| apply_train(c, &a.train))?;
            commands::train(&cfg, Ablation::from_flags(a.ablation.no_music, a.ablation.no_grl))
        }
        Command::Eval(a) => with_eval(&a, commands::eval),
        Command::Retrieve(a) => with_eval(&a, commands::retrieve),
        Command::Temporal(a) => with_eval(&a, commands::temporal),
        Command::Export(a) => with_eval(&a, commands::export),
        Command::Sweep(a) => {
            let cfg = prepared(&a.common, |c| {
                apply_train(c, &a.train);
                set(&mut c.sweep.lambda1, a.lambda1.clone());
                set(&mut c.sweep.lambda2, a.lambda2.clone());
                set(&mut c.sweep.lambda11, a.lambda11.clone());
                set(&mut c.sweep.lambda12, a.lambda12.clone());
            })?;
            commands::sweep(&cfg)
        }
    }
}

fn with_eval(a: &EvalArgs, f: fn(&RunConfig, Ablation) -> Outcome) -> Outcome {
    let cfg = prepared(&a.common, |c| apply_eval(c, a))?;
    f(&cfg, Ablation::from_flags(a.ablation.no_music, a.ablation.no_grl))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "level={} {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
