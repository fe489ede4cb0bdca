use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use cmaf::data::manifest::LoadFilter;
use cmaf::data::{synth_dataset, Dimension, Manifest, SubjectData, SynthSpec};
use cmaf::eval::report::{export_header, export_rows, metrics_table, temporal_table, write_text};
use cmaf::eval::{evaluate_fold, summarize, temporal_curves, Metrics, TrialOutcome};
use cmaf::model::Checkpoint;
use cmaf::signal::DEFAULT_BANDS;
use cmaf::training::{parallel_map, run_fold, split_subject, FoldResult, Lambdas, TrainConfig};

use crate::config::{Ablation, RunConfig};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration: exit 2.
    Usage(anyhow::Error),
    /// Anything that goes wrong while doing the work: exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<cmaf::Error> for Failure {
    fn from(e: cmaf::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type Outcome = Result<(), Failure>;

pub fn usage<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

pub fn synth(spec: &SynthSpec, out: &Path) -> Outcome {
    usage(spec.validate().map_err(anyhow::Error::from))?;
    let started = Instant::now();
    let data = synth_dataset(spec)?;
    let manifest = data.write(out)?;
    log::info!(
        "event=synth_done tracks={} subjects={} segments={} channels={} manifest={} wall_s={:.2}",
        spec.tracks,
        spec.subjects,
        spec.segments_per_track,
        spec.channels,
        manifest.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_subjects(cfg: &RunConfig) -> Result<Vec<SubjectData>, Failure> {
    let path = usage(cfg.manifest())?;
    let manifest = Manifest::load(path)?;
    let filter = LoadFilter {
        exclude_tracks: cfg.data.exclude_tracks.clone(),
        subjects: cfg.data.subjects.clone(),
    };
    let subjects = manifest.load_subjects(&DEFAULT_BANDS, cfg.feature_options(), &filter)?;
    if subjects.is_empty() {
        return Err(Failure::Runtime(anyhow!("no trials left after filtering {}", path.display())));
    }
    log::info!(
        "event=data_loaded subjects={} trials={}",
        subjects.len(),
        subjects.iter().map(|s| s.trials.len()).sum::<usize>()
    );
    Ok(subjects)
}

pub fn features(cfg: &RunConfig) -> Outcome {
    let subjects = load_subjects(cfg)?;
    let f = subjects[0].features_per_channel();
    let mut out = String::from("subject\ttrial\ttrack\tsegment_index\tchannel");
    for i in 0..f {
        write!(out, "\tde{i}").unwrap();
    }
    out.push('\n');
    for s in &subjects {
        for t in &s.trials {
            for (i, m) in t.eeg.iter().enumerate() {
                for c in 0..m.channels {
                    write!(out, "{}\t{}\t{}\t{i}\t{c}", s.subject_id, t.trial_id, t.track_id).unwrap();
                    for v in m.row(c) {
                        write!(out, "\t{v:.8e}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
    }
    let path = cfg.output_dir.join("features.tsv");
    write_text(&path, &out)?;
    log::info!("event=features_written path={}", path.display());
    Ok(())
}

fn checkpoint_dir(cfg: &RunConfig, dim: Dimension, ablation: Ablation) -> PathBuf {
    cfg.output_dir.join("checkpoints").join(dim.as_str()).join(ablation.as_str())
}

fn report_path(cfg: &RunConfig, kind: &str, dim: Dimension, ablation: Ablation, ext: &str) -> PathBuf {
    cfg.output_dir.join("reports").join(format!("{kind}_{dim}_{ablation}{ext}"))
}

/// All folds of all subjects, `jobs` at a time.
fn train_all(
    cfg: &RunConfig,
    subjects: &[SubjectData],
    dim: Dimension,
    train: &TrainConfig,
) -> Result<Vec<(u16, FoldResult)>, Failure> {
    let splits = subjects
        .iter()
        .map(|s| split_subject(s, dim, train))
        .collect::<cmaf::Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..subjects.len())
        .flat_map(|s| (0..train.folds).map(move |f| (s, f)))
        .collect();
    let template = cfg.model_template();
    let results = parallel_map(&tasks, cfg.jobs, |&(s, f)| {
        run_fold(&subjects[s], dim, &splits[s], f, &template, train)
    })?;
    Ok(tasks
        .iter()
        .zip(results)
        .map(|(&(s, _), r)| (subjects[s].subject_id, r))
        .collect())
}

fn epoch_log_table(results: &[(u16, FoldResult)]) -> String {
    let mut out = String::from("subject\tfold\tepoch\tell_a\tell_b\tell_dd\tJ\tval_J\tmodality_acc\n");
    for (subject, r) in results {
        for e in &r.report.epochs {
            let acc = e.modality_acc.map_or("na".to_string(), |a| format!("{a:.6}"));
            writeln!(
                out,
                "{subject}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{acc}",
                r.fold, e.epoch, e.train.ell_a, e.train.ell_b, e.train.ell_dd, e.train.j, e.val_j
            )
            .unwrap();
        }
    }
    out
}

pub fn train(cfg: &RunConfig, ablation: Ablation) -> Outcome {
    let subjects = load_subjects(cfg)?;
    let mut tc = cfg.train.clone();
    ablation.apply(&mut tc);
    for dim in cfg.dimensions() {
        let started = Instant::now();
        log::info!("event=train_start dimension={dim} setting={ablation} folds={} jobs={}", tc.folds, cfg.jobs);
        let results = train_all(cfg, &subjects, dim, &tc)?;
        let dir = checkpoint_dir(cfg, dim, ablation);
        clear_checkpoints(&dir)?;
        for (subject, r) in &results {
            let ck = Checkpoint {
                model: r.model.clone(),
                standardizer: r.standardizer.clone(),
                dimension: dim,
                subject_id: *subject,
                fold: Some(r.fold as u16),
                test_trials: r.test_trials.clone(),
            };
            let path = dir.join(format!("s{subject:02}_f{}.ckpt", r.fold));
            ck.write(&path)?;
            log::info!(
                "event=checkpoint subject={subject} fold={} best_epoch={} path={}",
                r.fold,
                r.report.best_epoch,
                path.display()
            );
        }
        let log_path = cfg.output_dir.join("logs").join(format!("train_{dim}_{ablation}.tsv"));
        write_text(&log_path, &epoch_log_table(&results))?;
        log::info!(
            "event=train_done dimension={dim} setting={ablation} folds={} wall_s={:.2}",
            results.len(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn clear_checkpoints(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry.context("listing checkpoints")?.path();
        if p.extension().is_some_and(|e| e == "ckpt") {
            fs::remove_file(&p).with_context(|| format!("removing stale {}", p.display()))?;
        }
    }
    Ok(())
}

fn load_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| {
        Failure::Runtime(anyhow!("no checkpoints at {} ({e}); run `cmaf train` first", dir.display()))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Runtime(anyhow!("no checkpoints in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Checkpoint::load(p).map_err(Failure::from))
        .collect()
}

/// Checkpoint plus the subject it belongs to, shapes verified.
fn pair_with_data<'a>(ck: &Checkpoint, subjects: &'a [SubjectData], dim: Dimension) -> anyhow::Result<&'a SubjectData> {
    if ck.dimension != dim {
        bail!("checkpoint for subject {} was trained on {}, not {dim}", ck.subject_id, ck.dimension);
    }
    let s = subjects
        .iter()
        .find(|s| s.subject_id == ck.subject_id)
        .ok_or_else(|| anyhow!("checkpoint subject {} is not in the loaded data", ck.subject_id))?;
    let d = &ck.model.dims;
    for (name, want, got) in [
        ("channels", d.channels, s.channels()),
        ("features_per_channel", d.features_per_channel, s.features_per_channel()),
        ("music_dim", d.music_dim, s.music_dim()),
    ] {
        if want != got {
            return Err(cmaf::Error::DimensionMismatch {
                context: format!("checkpoint subject {} {name} vs data", ck.subject_id),
                expected: want,
                actual: got,
            }
            .into());
        }
    }
    for t in &ck.test_trials {
        if s.trials.iter().all(|x| x.trial_id != *t) {
            bail!("checkpoint test trial {t} missing from subject {} data", s.subject_id);
        }
    }
    Ok(s)
}

/// Outcomes per subject over every fold's test trials, sorted by trial.
fn evaluate_checkpoints(
    cfg: &RunConfig,
    subjects: &[SubjectData],
    dim: Dimension,
    ablation: Ablation,
) -> Result<BTreeMap<u16, Vec<TrialOutcome>>, Failure> {
    let cks = load_checkpoints(&checkpoint_dir(cfg, dim, ablation))?;
    let mut out: BTreeMap<u16, Vec<TrialOutcome>> = BTreeMap::new();
    for ck in &cks {
        let s = pair_with_data(ck, subjects, dim)?;
        let ev = evaluate_fold(&ck.model, &ck.standardizer, s, &ck.test_trials, dim, &cfg.eval)?;
        out.entry(ck.subject_id).or_default().extend(ev.trials);
    }
    for v in out.values_mut() {
        v.sort_by_key(|t| t.trial_id);
    }
    Ok(out)
}

fn subject_metrics(cfg: &RunConfig, outcomes: &BTreeMap<u16, Vec<TrialOutcome>>) -> cmaf::Result<Vec<(u16, Metrics)>> {
    outcomes
        .iter()
        .map(|(s, t)| Ok((*s, summarize(t, cfg.eval.mode)?)))
        .collect()
}

pub fn eval(cfg: &RunConfig, ablation: Ablation) -> Outcome {
    let subjects = load_subjects(cfg)?;
    for dim in cfg.dimensions() {
        let outcomes = evaluate_checkpoints(cfg, &subjects, dim, ablation)?;
        let rows = subject_metrics(cfg, &outcomes)?;
        let title = format!(
            "dimension={dim} setting={ablation} distance={:?} mode={:?} corpus={:?}",
            cfg.eval.distance, cfg.eval.mode, cfg.eval.corpus
        )
        .to_lowercase();
        let path = report_path(cfg, "metrics", dim, ablation, ".tsv");
        write_text(&path, &metrics_table(&title, cfg.eval.k, &rows))?;
        let mean = Metrics::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
        log::info!(
            "event=eval_done dimension={dim} setting={ablation} acc_agg_eeg={:.4} p_at_k={:.4} map={:.4} exact_at_1={:.4} path={}",
            mean.acc_agg_eeg,
            mean.p_at_k,
            mean.map,
            mean.exact_at_1,
            path.display()
        );
    }
    Ok(())
}

pub fn retrieve(cfg: &RunConfig, ablation: Ablation) -> Outcome {
    let subjects = load_subjects(cfg)?;
    for dim in cfg.dimensions() {
        let outcomes = evaluate_checkpoints(cfg, &subjects, dim, ablation)?;
        let k = cfg.eval.k;
        let mut out = format!("subject\ttrial\ttrack\tlabel\tap\tP@{k}\tstimulus_rank\tranking\n");
        for t in outcomes.values().flatten() {
            let ap = t.ap.map_or("na".to_string(), |a| format!("{a:.6}"));
            let ranking: Vec<String> = t.ranked_tracks.iter().map(u16::to_string).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{ap}\t{:.6}\t{}\t{}",
                t.subject_id,
                t.trial_id,
                t.track_id,
                t.label,
                t.precision_at_k,
                t.stimulus_rank,
                ranking.join(",")
            )
            .unwrap();
        }
        let path = report_path(cfg, "retrieval", dim, ablation, ".tsv");
        write_text(&path, &out)?;
        log::info!("event=retrieval_written dimension={dim} setting={ablation} path={}", path.display());
    }
    Ok(())
}

pub fn temporal(cfg: &RunConfig, ablation: Ablation) -> Outcome {
    let subjects = load_subjects(cfg)?;
    for dim in cfg.dimensions() {
        let outcomes = evaluate_checkpoints(cfg, &subjects, dim, ablation)?;
        let all: Vec<TrialOutcome> = outcomes.into_values().flatten().collect();
        let curves = temporal_curves(&all, cfg.eval.smooth_window)?;
        let dir = report_path(cfg, "temporal", dim, ablation, "");
        for (track, curve) in &curves {
            write_text(&dir.join(format!("track{track:02}.tsv")), &temporal_table(*track, curve))?;
        }
        log::info!(
            "event=temporal_written dimension={dim} setting={ablation} tracks={} dir={}",
            curves.len(),
            dir.display()
        );
    }
    Ok(())
}

pub fn export(cfg: &RunConfig, ablation: Ablation) -> Outcome {
    let subjects = load_subjects(cfg)?;
    for dim in cfg.dimensions() {
        let cks = load_checkpoints(&checkpoint_dir(cfg, dim, ablation))?;
        let mut out = export_header(cks[0].model.dims.embed_dim);
        out.push('\n');
        let mut rows = 0usize;
        for ck in &cks {
            let s = pair_with_data(ck, subjects.as_slice(), dim)?;
            let text = export_rows(&ck.model, &ck.standardizer, s, &ck.test_trials, dim)?;
            rows += text.lines().count();
            out.push_str(&text);
        }
        let path = report_path(cfg, "embeddings", dim, ablation, ".tsv");
        write_text(&path, &out)?;
        log::info!("event=export_done dimension={dim} setting={ablation} rows={rows} path={}", path.display());
    }
    Ok(())
}

/// Train and evaluate every λ combination in `[sweep]`; no checkpoints.
pub fn sweep(cfg: &RunConfig) -> Outcome {
    let subjects = load_subjects(cfg)?;
    let s = &cfg.sweep;
    let mut grid = Vec::new();
    for &l1 in &s.lambda1 {
        for &l2 in &s.lambda2 {
            for &l11 in &s.lambda11 {
                for &l12 in &s.lambda12 {
                    grid.push(Lambdas {
                        lambda1: l1,
                        lambda2: l2,
                        lambda11: l11,
                        lambda12: l12,
                    });
                }
            }
        }
    }
    for dim in cfg.dimensions() {
        let k = cfg.eval.k;
        let mut out = format!(
            "lambda1\tlambda2\tlambda11\tlambda12\tAcc_seg_eeg\tAcc_agg_eeg\tAcc_seg_music\tAcc_agg_music\tP@{k}\tmAP\texact@1\n"
        );
        for l in &grid {
            let tc = TrainConfig {
                lambdas: *l,
                ..cfg.train.clone()
            };
            let results = train_all(cfg, &subjects, dim, &tc)?;
            let mut outcomes: BTreeMap<u16, Vec<TrialOutcome>> = BTreeMap::new();
            for (subject, r) in &results {
                let sd = subjects.iter().find(|x| x.subject_id == *subject).expect("trained subject");
                let ev = evaluate_fold(&r.model, &r.standardizer, sd, &r.test_trials, dim, &cfg.eval)?;
                outcomes.entry(*subject).or_default().extend(ev.trials);
            }
            let rows = subject_metrics(cfg, &outcomes)?;
            let m = Metrics::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                l.lambda1,
                l.lambda2,
                l.lambda11,
                l.lambda12,
                m.acc_seg_eeg,
                m.acc_agg_eeg,
                m.acc_seg_music,
                m.acc_agg_music,
                m.p_at_k,
                m.map,
                m.exact_at_1
            )
            .unwrap();
            log::info!(
                "event=sweep_point dimension={dim} lambda1={} lambda2={} lambda11={} lambda12={} acc_agg_eeg={:.4} map={:.4}",
                l.lambda1,
                l.lambda2,
                l.lambda11,
                l.lambda12,
                m.acc_agg_eeg,
                m.map
            );
        }
        let path = cfg.output_dir.join("reports").join(format!("sweep_{dim}.tsv"));
        write_text(&path, &out)?;
        log::info!("event=sweep_done dimension={dim} points={} path={}", grid.len(), path.display());
    }
    Ok(())
}
