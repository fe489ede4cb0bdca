//! Classification accuracy, distance-ranked retrieval, exact-stimulus rate,
//! temporal mAP curves, report tables and embedding export.

pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dimension, Standardizer, SubjectData};
use crate::error::{Error, Result};
use crate::model::Model;

pub use metrics::{
    aggregate_majority, average_precision, mean_average_precision, median, moving_average, precision_at_k,
    temporal_map, RankedItem, Ranking, TemporalCurve,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// How tracks are scored against a query for the headline metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Median over aligned segment distances: one ranking per trial.
    #[default]
    Aggregated,
    /// Every EEG segment is its own query against the aligned track segment.
    Segment,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusScope {
    /// Tracks of the held-out fold.
    #[default]
    Test,
    /// Every track of the subject.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub distance: Distance,
    pub mode: RetrievalMode,
    pub corpus: CorpusScope,
    pub k: usize,
    pub smooth_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            distance: Distance::Euclidean,
            mode: RetrievalMode::Aggregated,
            corpus: CorpusScope::Test,
            k: 10,
            smooth_window: 7,
        }
    }
}

/// EEG segment embeddings of one trial used as a query.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalQuery {
    pub segments: Vec<Vec<f64>>,
    pub label: u8,
    pub track_id: u16,
}

/// Music segment embeddings of one track in the common space.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusTrack {
    pub track_id: u16,
    /// Emotion tag for the active dimension.
    pub tag: u8,
    pub segments: Vec<Vec<f64>>,
}

/// Median segment distance. Equal lengths pair segments by index;
/// otherwise each query segment takes the median over all track segments.
pub fn track_distance(query: &[Vec<f64>], track: &[Vec<f64>], distance: Distance) -> Result<f64> {
    if query.is_empty() || track.is_empty() {
        return Err(Error::invalid("track_distance needs non-empty query and track"));
    }
    let d: Vec<f64> = if query.len() == track.len() {
        query.iter().zip(track).map(|(q, t)| distance.between(q, t)).collect()
    } else {
        query
            .iter()
            .map(|q| median(&track.iter().map(|t| distance.between(q, t)).collect::<Vec<_>>()))
            .collect()
    };
    Ok(median(&d))
}

/// Aggregated-mode ranking of `corpus` for `query`.
pub fn retrieve(query: &RetrievalQuery, corpus: &[CorpusTrack], distance: Distance) -> Result<Ranking> {
    if corpus.is_empty() {
        return Err(Error::invalid("retrieval corpus is empty"));
    }
    let items = corpus
        .iter()
        .map(|t| {
            Ok(RankedItem {
                track_id: t.track_id,
                score: track_distance(&query.segments, &t.segments, distance)?,
                relevant: t.tag == query.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ranking::new(items))
}

/// Segment-mode ranking: query segment `i` against segment `i` of every
/// track (clamped to the track's last segment).
pub fn retrieve_segment(
    query: &RetrievalQuery,
    i: usize,
    corpus: &[CorpusTrack],
    distance: Distance,
) -> Result<Ranking> {
    if corpus.is_empty() {
        return Err(Error::invalid("retrieval corpus is empty"));
    }
    let q = &query.segments[i];
    let items = corpus
        .iter()
        .map(|t| RankedItem {
            track_id: t.track_id,
            score: distance.between(q, &t.segments[i.min(t.segments.len() - 1)]),
            relevant: t.tag == query.label,
        })
        .collect();
    Ok(Ranking::new(items))
}

/// Fraction of queries whose own track is within the top `k`.
pub fn exact_stimulus_rate(
    queries: &[RetrievalQuery],
    corpus: &[CorpusTrack],
    k: usize,
    distance: Distance,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::invalid("exact_stimulus_rate needs queries"));
    }
    let mut hits = 0usize;
    for q in queries {
        let r = retrieve(q, corpus, distance)?;
        let rank = r
            .rank_of(q.track_id)
            .ok_or_else(|| Error::invalid(format!("stimulus track {} missing from corpus", q.track_id)))?;
        if rank <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Everything measured for one test trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub subject_id: u16,
    pub trial_id: u16,
    pub track_id: u16,
    pub label: u8,
    pub eeg_probs: Vec<f64>,
    pub music_probs: Vec<f64>,
    /// Aggregated-mode retrieval.
    pub ap: Option<f64>,
    pub precision_at_k: f64,
    pub stimulus_rank: usize,
    /// Corpus track ids, nearest first.
    pub ranked_tracks: Vec<u16>,
    /// Segment-mode AP and P@k per segment index.
    pub segment_ap: Vec<Option<f64>>,
    pub segment_precision: Vec<f64>,
}

/// Per-fold (or per-subject, or mean) headline numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub acc_seg_eeg: f64,
    pub acc_agg_eeg: f64,
    pub acc_seg_music: f64,
    pub acc_agg_music: f64,
    pub p_at_k: f64,
    pub map: f64,
    pub exact_at_1: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len().max(1) as f64;
        let mut m = Metrics::default();
        for x in items {
            m.acc_seg_eeg += x.acc_seg_eeg / n;
            m.acc_agg_eeg += x.acc_agg_eeg / n;
            m.acc_seg_music += x.acc_seg_music / n;
            m.acc_agg_music += x.acc_agg_music / n;
            m.p_at_k += x.p_at_k / n;
            m.map += x.map / n;
            m.exact_at_1 += x.exact_at_1 / n;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldEvaluation {
    pub metrics: Metrics,
    pub trials: Vec<TrialOutcome>,
}

/// Common-space embeddings of every trial of `subject` under one model.
pub struct EmbeddedTrial {
    pub trial_id: u16,
    pub track_id: u16,
    pub label: u8,
    pub music_tag: u8,
    pub eeg: Tensor,
    pub music: Tensor,
}

pub fn embed_trials(
    model: &Model,
    st: &Standardizer,
    subject: &SubjectData,
    trials: &[u16],
    dim: Dimension,
) -> Result<Vec<EmbeddedTrial>> {
    let mut out = Vec::new();
    for t in subject.trials.iter().filter(|t| trials.contains(&t.trial_id)) {
        let eeg_rows: Vec<Vec<f64>> = t.eeg.iter().map(|m| st.apply(&m.values)).collect();
        let eeg_refs: Vec<&[f64]> = eeg_rows.iter().map(Vec::as_slice).collect();
        let music_refs: Vec<&[f64]> = (0..t.music.n_segments()).map(|i| t.music.segment(i)).collect();
        let (eeg, _) = model.embed_eeg(&eeg_refs)?;
        let music = model.embed_music(&music_refs)?;
        out.push(EmbeddedTrial {
            trial_id: t.trial_id,
            track_id: t.track_id,
            label: t.label(dim),
            music_tag: t.music.tag(dim),
            eeg,
            music,
        });
    }
    Ok(out)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Evaluate one trained fold on its test trials.
pub fn evaluate_fold(
    model: &Model,
    st: &Standardizer,
    subject: &SubjectData,
    test_trials: &[u16],
    dim: Dimension,
    opts: &EvalOptions,
) -> Result<FoldEvaluation> {
    let corpus_trials: Vec<u16> = match opts.corpus {
        CorpusScope::Test => test_trials.to_vec(),
        CorpusScope::Full => subject.trials.iter().map(|t| t.trial_id).collect(),
    };
    let embedded = embed_trials(model, st, subject, &corpus_trials, dim)?;
    let mut corpus: Vec<CorpusTrack> = Vec::new();
    for e in &embedded {
        if corpus.iter().all(|c| c.track_id != e.track_id) {
            corpus.push(CorpusTrack {
                track_id: e.track_id,
                tag: e.music_tag,
                segments: rows(&e.music),
            });
        }
    }

    let mut trials = Vec::new();
    for e in embedded.iter().filter(|e| test_trials.contains(&e.trial_id)) {
        let query = RetrievalQuery {
            segments: rows(&e.eeg),
            label: e.label,
            track_id: e.track_id,
        };
        let ranking = retrieve(&query, &corpus, opts.distance)?;
        let rel = ranking.relevance();
        let mut segment_ap = Vec::with_capacity(query.segments.len());
        let mut segment_precision = Vec::with_capacity(query.segments.len());
        for i in 0..query.segments.len() {
            let r = retrieve_segment(&query, i, &corpus, opts.distance)?.relevance();
            segment_ap.push(average_precision(&r));
            segment_precision.push(precision_at_k(&r, opts.k)?);
        }
        trials.push(TrialOutcome {
            subject_id: subject.subject_id,
            trial_id: e.trial_id,
            track_id: e.track_id,
            label: e.label,
            eeg_probs: model.classify_embeddings(&e.eeg)?,
            music_probs: model.classify_embeddings(&e.music)?,
            ap: average_precision(&rel),
            precision_at_k: precision_at_k(&rel, opts.k)?,
            stimulus_rank: ranking.rank_of(e.track_id).expect("own track in corpus"),
            ranked_tracks: ranking.items.iter().map(|i| i.track_id).collect(),
            segment_ap,
            segment_precision,
        });
    }
    let metrics = summarize(&trials, opts.mode)?;
    Ok(FoldEvaluation { metrics, trials })
}

/// Headline numbers over a set of trial outcomes.
pub fn summarize(trials: &[TrialOutcome], mode: RetrievalMode) -> Result<Metrics> {
    if trials.is_empty() {
        return Err(Error::invalid("no trials to summarize"));
    }
    let n = trials.len() as f64;
    let seg_acc = |probs: &dyn Fn(&TrialOutcome) -> &Vec<f64>| {
        let (mut c, mut total) = (0usize, 0usize);
        for t in trials {
            c += probs(t).iter().filter(|&&p| u8::from(p > 0.5) == t.label).count();
            total += probs(t).len();
        }
        c as f64 / total as f64
    };
    let agg_acc = |probs: &dyn Fn(&TrialOutcome) -> &Vec<f64>| -> Result<f64> {
        let mut c = 0usize;
        for t in trials {
            if aggregate_majority(probs(t))? == t.label {
                c += 1;
            }
        }
        Ok(c as f64 / n)
    };
    let (p_at_k, map) = match mode {
        RetrievalMode::Aggregated => (
            trials.iter().map(|t| t.precision_at_k).sum::<f64>() / n,
            mean_average_precision(&trials.iter().map(|t| t.ap).collect::<Vec<_>>())?,
        ),
        RetrievalMode::Segment => {
            let p: Vec<f64> = trials.iter().flat_map(|t| t.segment_precision.iter().copied()).collect();
            let aps: Vec<Option<f64>> = trials.iter().flat_map(|t| t.segment_ap.iter().copied()).collect();
            (p.iter().sum::<f64>() / p.len() as f64, mean_average_precision(&aps)?)
        }
    };
    Ok(Metrics {
        acc_seg_eeg: seg_acc(&|t| &t.eeg_probs),
        acc_agg_eeg: agg_acc(&|t| &t.eeg_probs)?,
        acc_seg_music: seg_acc(&|t| &t.music_probs),
        acc_agg_music: agg_acc(&|t| &t.music_probs)?,
        p_at_k,
        map,
        exact_at_1: trials.iter().filter(|t| t.stimulus_rank == 1).count() as f64 / n,
    })
}

/// Segment-mode temporal mAP per track, pooled over the queries of that
/// track (one per subject).
pub fn temporal_curves(trials: &[TrialOutcome], window: usize) -> Result<BTreeMap<u16, TemporalCurve>> {
    let mut by_track: BTreeMap<u16, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for t in trials {
        by_track.entry(t.track_id).or_default().push(t.segment_ap.clone());
    }
    by_track
        .into_iter()
        .map(|(track, qs)| Ok((track, temporal_map(&qs, window)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(vals: &[[f64; 2]]) -> Vec<Vec<f64>> {
        vals.iter().map(|v| v.to_vec()).collect()
    }

    #[test]
    fn identical_sequences_score_zero() {
        let a = seqs(&[[1.0, 2.0], [0.5, -1.0], [3.0, 3.0]]);
        assert_eq!(track_distance(&a, &a, Distance::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn median_of_aligned_distances() {
        let q = seqs(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let t = seqs(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [10.0, 0.0]]);
        assert_eq!(track_distance(&q, &t, Distance::Euclidean).unwrap(), 2.5);
    }

    #[test]
    fn self_retrieval_and_exact_rate() {
        let corpus: Vec<CorpusTrack> = (0..5)
            .map(|k| CorpusTrack {
                track_id: k + 1,
                tag: (k % 2) as u8,
                segments: seqs(&[[k as f64, 1.0], [k as f64, 2.0]]),
            })
            .collect();
        let queries: Vec<RetrievalQuery> = corpus
            .iter()
            .map(|c| RetrievalQuery {
                segments: c.segments.clone(),
                label: c.tag,
                track_id: c.track_id,
            })
            .collect();
        let r = retrieve(&queries[2], &corpus, Distance::Euclidean).unwrap();
        assert_eq!(r.items[0].track_id, 3);
        assert_eq!(r.items[0].score, 0.0);
        assert_eq!(exact_stimulus_rate(&queries, &corpus, 1, Distance::Euclidean).unwrap(), 1.0);
        let missing = RetrievalQuery {
            track_id: 99,
            ..queries[0].clone()
        };
        assert!(exact_stimulus_rate(&[missing], &corpus, 1, Distance::Euclidean).is_err());
    }

    #[test]
    fn cosine_distance() {
        assert!((Distance::Cosine.between(&[1.0, 0.0], &[0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!(Distance::Cosine.between(&[1.0, 1.0], &[2.0, 2.0]).abs() < 1e-15);
    }
}
