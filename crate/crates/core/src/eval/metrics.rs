use crate::error::{Error, Result};

/// One ranked corpus entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedItem {
    pub track_id: u16,
    pub score: f64,
    pub relevant: bool,
}

/// Corpus ordered by ascending score, ties by ascending track id.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub items: Vec<RankedItem>,
}

impl Ranking {
    pub fn new(mut items: Vec<RankedItem>) -> Self {
        items.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.track_id.cmp(&b.track_id)));
        Self { items }
    }

    pub fn relevance(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.relevant).collect()
    }

    /// 1-based rank of `track_id`.
    pub fn rank_of(&self, track_id: u16) -> Option<usize> {
        self.items.iter().position(|i| i.track_id == track_id).map(|p| p + 1)
    }
}

/// Relevant fraction of the top `min(k, N)` entries.
pub fn precision_at_k(relevance: &[bool], k: usize) -> Result<f64> {
    if relevance.is_empty() || k == 0 {
        return Err(Error::invalid("precision_at_k needs a non-empty ranking and k >= 1"));
    }
    let m = k.min(relevance.len());
    Ok(relevance[..m].iter().filter(|&&r| r).count() as f64 / m as f64)
}

/// `(1/R) Σ precision@r` over the ranks `r` holding relevant items;
/// `None` when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean over the defined APs; undefined ones are skipped with a warning.
pub fn mean_average_precision(aps: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::invalid("no query has a relevant item; mAP undefined"));
    }
    let skipped = aps.len() - defined.len();
    if skipped > 0 {
        log::warn!("mAP: {skipped} of {} queries have no relevant item and are excluded", aps.len());
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Median; an even count averages the two central values. NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Majority vote of thresholded segment probabilities. A tied vote goes to
/// the side of the mean probability; a mean of exactly 0.5 gives 1.
pub fn aggregate_majority(probs: &[f64]) -> Result<u8> {
    if probs.is_empty() {
        return Err(Error::invalid("aggregate_majority of an empty list"));
    }
    let ones = probs.iter().filter(|&&p| p > 0.5).count();
    let zeros = probs.len() - ones;
    Ok(match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => {
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            u8::from(mean >= 0.5)
        }
    })
}

/// Centered moving average; the window is truncated at the ends.
pub fn moving_average(raw: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..raw.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(raw.len());
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalCurve {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

/// Mean AP per segment index across queries, then smoothed. Undefined APs
/// are left out of that index's mean.
pub fn temporal_map(per_query: &[Vec<Option<f64>>], window: usize) -> Result<TemporalCurve> {
    let t = per_query
        .first()
        .ok_or_else(|| Error::invalid("temporal_map needs at least one query"))?
        .len();
    if let Some(bad) = per_query.iter().find(|q| q.len() != t) {
        return Err(Error::DimensionMismatch {
            context: "temporal_map segment count".into(),
            expected: t,
            actual: bad.len(),
        });
    }
    let raw: Vec<f64> = (0..t)
        .map(|i| {
            let vals: Vec<f64> = per_query.iter().filter_map(|q| q[i]).collect();
            if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect();
    let smoothed = moving_average(&raw, window);
    Ok(TemporalCurve { raw, smoothed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_examples() {
        assert_eq!(aggregate_majority(&[0.9, 0.8, 0.2]).unwrap(), 1);
        assert_eq!(aggregate_majority(&[0.6, 0.4]).unwrap(), 1);
        assert_eq!(aggregate_majority(&[0.55, 0.3]).unwrap(), 0);
        assert_eq!(aggregate_majority(&[0.1; 58]).unwrap(), 0);
        assert!(aggregate_majority(&[]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 10.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn precision_examples() {
        let t = true;
        let f = false;
        assert_eq!(precision_at_k(&[t, t, t, t, t, f, f, f, f, f], 10).unwrap(), 0.5);
        assert_eq!(precision_at_k(&[t, t, f, t, f, f, f], 10).unwrap(), 3.0 / 7.0);
        assert_eq!(precision_at_k(&[t; 12], 10).unwrap(), 1.0);
        assert!(precision_at_k(&[], 10).is_err());
    }

    #[test]
    fn ap_examples() {
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true; 4]), Some(1.0));
        assert_eq!(average_precision(&[false; 3]), None);
        assert!(mean_average_precision(&[None, None]).is_err());
        assert_eq!(mean_average_precision(&[Some(0.5), None, Some(1.0)]).unwrap(), 0.75);
    }

    #[test]
    fn ranking_ties_by_track() {
        let r = Ranking::new(vec![
            RankedItem { track_id: 9, score: 1.0, relevant: false },
            RankedItem { track_id: 2, score: 1.0, relevant: true },
            RankedItem { track_id: 5, score: 0.5, relevant: false },
        ]);
        let ids: Vec<u16> = r.items.iter().map(|i| i.track_id).collect();
        assert_eq!(ids, vec![5, 2, 9]);
        assert_eq!(r.rank_of(9), Some(3));
    }

    #[test]
    fn smoothing() {
        let flat = vec![0.3; 58];
        assert_eq!(moving_average(&flat, 7), flat);
        let ramp: Vec<f64> = (0..58).map(|i| i as f64).collect();
        let s = moving_average(&ramp, 7);
        assert_eq!(s.len(), 58);
        assert_eq!(s[0], (0.0 + 1.0 + 2.0 + 3.0) / 4.0);
        let mut impulse = vec![0.0; 58];
        impulse[10] = 1.0;
        let s = moving_average(&impulse, 7);
        for (i, v) in s.iter().enumerate() {
            let expect = if (7..=13).contains(&i) { 1.0 / 7.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15, "{i}");
        }
    }

    #[test]
    fn temporal_rejects_ragged() {
        assert!(temporal_map(&[vec![Some(1.0); 3], vec![Some(1.0); 4]], 7).is_err());
        let c = temporal_map(&[vec![Some(1.0), Some(0.0)], vec![Some(0.0), None]], 3).unwrap();
        assert_eq!(c.raw, vec![0.5, 0.0]);
    }
}
