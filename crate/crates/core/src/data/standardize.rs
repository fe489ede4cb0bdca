use crate::signal::FeatureMatrix;

/// Lower bound on per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-scoring fitted on training data only.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit over flat feature vectors of equal length (population std).
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        // Welford, feature-wise.
        for row in rows {
            if mean.is_empty() {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            }
            assert_eq!(row.len(), mean.len(), "standardizer rows must share a length");
            n += 1;
            for ((x, m), s) in row.iter().zip(&mut mean).zip(&mut m2) {
                let d = x - *m;
                *m += d / n as f64;
                *s += d * (x - *m);
            }
        }
        let std = m2
            .iter()
            .map(|s| (s / n.max(1) as f64).sqrt().max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn fit_features<'a>(features: impl IntoIterator<Item = &'a FeatureMatrix>) -> Self {
        Self::fit(features.into_iter().map(|f| f.values.as_slice()))
    }

    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_in_place(&self, values: &mut [f64]) {
        for (x, (m, s)) in values.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *x = (*x - m) / s;
        }
    }
}
