//! Plain-text outputs: metric tables, temporal curves, embedding dumps.
//! All tables are tab-separated with a header row; numbers use fixed
//! precision so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{embed_trials, Metrics, TemporalCurve};
use crate::data::{Dimension, Standardizer, SubjectData};
use crate::error::{Error, Result};
use crate::model::Model;

/// Per-subject rows plus a mean row.
pub fn metrics_table(title: &str, k: usize, rows: &[(u16, Metrics)]) -> String {
    let mut out = String::new();
    writeln!(out, "# {title}").unwrap();
    writeln!(
        out,
        "subject\tAcc_seg_eeg\tAcc_agg_eeg\tAcc_seg_music\tAcc_agg_music\tP@{k}\tmAP\texact@1"
    )
    .unwrap();
    let line = |out: &mut String, name: &str, m: &Metrics| {
        writeln!(
            out,
            "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            m.acc_seg_eeg, m.acc_agg_eeg, m.acc_seg_music, m.acc_agg_music, m.p_at_k, m.map, m.exact_at_1
        )
        .unwrap();
    };
    for (s, m) in rows {
        line(&mut out, &s.to_string(), m);
    }
    let all: Vec<Metrics> = rows.iter().map(|r| r.1).collect();
    line(&mut out, "mean", &Metrics::mean(&all));
    out
}

/// One row per segment index.
pub fn temporal_table(track_id: u16, curve: &TemporalCurve) -> String {
    let mut out = String::new();
    writeln!(out, "# track={track_id}").unwrap();
    writeln!(out, "segment_index\tmap_raw\tmap_smoothed").unwrap();
    for (i, (r, s)) in curve.raw.iter().zip(&curve.smoothed).enumerate() {
        writeln!(out, "{i}\t{r:.6}\t{s:.6}").unwrap();
    }
    out
}

pub fn export_header(embed_dim: usize) -> String {
    let mut cols = vec![
        "subject".to_string(),
        "trial".into(),
        "track".into(),
        "segment_index".into(),
        "modality".into(),
        "label".into(),
    ];
    cols.extend((0..embed_dim).map(|i| format!("e{i}")));
    cols.join("\t")
}

/// Common-space embeddings of `trials`, one row per EEG segment and one per
/// aligned music segment. EEG rows carry the subject label, music rows the
/// track tag.
pub fn export_rows(
    model: &Model,
    st: &Standardizer,
    subject: &SubjectData,
    trials: &[u16],
    dim: Dimension,
) -> Result<String> {
    let mut out = String::new();
    for e in embed_trials(model, st, subject, trials, dim)? {
        for (modality, t, label) in [("eeg", &e.eeg, e.label), ("music", &e.music, e.music_tag)] {
            for r in 0..t.rows() {
                write!(
                    out,
                    "{}\t{}\t{}\t{r}\t{modality}\t{label}",
                    subject.subject_id, e.trial_id, e.track_id
                )
                .unwrap();
                for v in t.row_slice(r) {
                    write!(out, "\t{v:.8e}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
