//! Differential-entropy features from raw EEG trials.
//!
//! A trial is cut into overlapping segments (3 s long, 1 s hop by default).
//! Each segment is split into three non-overlapping 1-s frames; every frame
//! is Hann-windowed and transformed with a real DFT of the frame length.
//! Per EEG rhythm the one-sided bin power inside the band, normalised by
//! `fs · Σw²`, is the variance estimate σ² of that frame, and the feature is
//! the Gaussian differential entropy `0.5 · ln(2πe σ²)`.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Floor applied to band variances before the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Frames per 3-s segment.
pub const WINDOWS_PER_SEGMENT: usize = 3;

/// Raw multi-channel EEG trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: u16,
    pub trial_id: u16,
    pub sample_rate: f64,
    pub channels: usize,
    pub samples: usize,
    /// Channel-major samples, `channels x samples`.
    pub data: Vec<f64>,
    pub valence: f64,
    pub arousal: f64,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid(format!("sample rate {} must be positive", self.sample_rate)));
        }
        if self.channels == 0 {
            return Err(Error::invalid("recording has no channels"));
        }
        if self.data.len() != self.channels * self.samples {
            return Err(Error::DimensionMismatch {
                context: "recording data".into(),
                expected: self.channels * self.samples,
                actual: self.data.len(),
            });
        }
        let min = (WINDOWS_PER_SEGMENT as f64 * self.sample_rate).round() as usize;
        if self.samples < min {
            return Err(Error::invalid(format!(
                "recording has {} samples, needs at least {min} (3 s)",
                self.samples
            )));
        }
        for (name, r) in [("valence", self.valence), ("arousal", self.arousal)] {
            if !(1.0..=9.0).contains(&r) {
                return Err(Error::invalid(format!("{name} rating {r} outside [1, 9]")));
            }
        }
        Ok(())
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn duration_s(&self) -> f64 {
        self.samples as f64 / self.sample_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BandName {
    Theta,
    Alpha,
    Beta,
    Gamma,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandSpec {
    pub name: BandName,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(0.0 < self.low_hz && self.low_hz < self.high_hz && self.high_hz <= sample_rate / 2.0) {
            return Err(Error::invalid(format!(
                "band {:?} [{}, {}) Hz outside (0, {}] (Nyquist)",
                self.name,
                self.low_hz,
                self.high_hz,
                sample_rate / 2.0
            )));
        }
        Ok(())
    }

    /// Bin `k` of an `n`-point DFT at `fs` belongs to the band iff
    /// `low <= k·fs/n < high`.
    pub fn contains_bin(&self, k: usize, n: usize, fs: f64) -> bool {
        let f = k as f64 * fs / n as f64;
        self.low_hz <= f && f < self.high_hz
    }
}

/// θ 4–7, α 7–13, β 13–30, γ 31–50 Hz.
pub const DEFAULT_BANDS: [BandSpec; 4] = [
    BandSpec { name: BandName::Theta, low_hz: 4.0, high_hz: 7.0 },
    BandSpec { name: BandName::Alpha, low_hz: 7.0, high_hz: 13.0 },
    BandSpec { name: BandName::Beta, low_hz: 13.0, high_hz: 30.0 },
    BandSpec { name: BandName::Gamma, low_hz: 31.0, high_hz: 50.0 },
];

/// Per-segment DE features, `channels x features_per_channel`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub segment_index: usize,
    pub channels: usize,
    pub features_per_channel: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, c: usize) -> &[f64] {
        let n = self.features_per_channel;
        &self.values[c * n..(c + 1) * n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentParams {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { window_s: 3.0, hop_s: 1.0 }
    }
}

/// Borrowed view of one segment of a recording.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    pub index: usize,
    recording: &'a Recording,
    start: usize,
    len: usize,
}

impl<'a> SegmentView<'a> {
    pub fn channel(&self, c: usize) -> &'a [f64] {
        &self.recording.channel(c)[self.start..self.start + self.len]
    }

    pub fn channels(&self) -> usize {
        self.recording.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `floor((duration - window) / hop) + 1` segments for `duration >= window`.
pub fn segment_count(samples: usize, window: usize, hop: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / hop + 1
    }
}

pub fn segment(recording: &Recording, params: SegmentParams) -> Result<Vec<SegmentView<'_>>> {
    let window = (params.window_s * recording.sample_rate).round() as usize;
    let hop = (params.hop_s * recording.sample_rate).round() as usize;
    if window == 0 || hop == 0 {
        return Err(Error::invalid("segment window and hop must be at least one sample"));
    }
    if recording.samples < window {
        return Err(Error::invalid(format!(
            "recording of {:.3} s is shorter than one {} s window",
            recording.duration_s(),
            params.window_s
        )));
    }
    Ok((0..segment_count(recording.samples, window, hop))
        .map(|i| SegmentView {
            index: i,
            recording,
            start: i * hop,
            len: window,
        })
        .collect())
}

/// `0.5 · ln(2πe · σ²)`.
pub fn differential_entropy(variance: f64) -> Result<f64> {
    if !(variance >= VARIANCE_FLOOR) {
        return Err(Error::invalid(format!(
            "variance {variance} below floor {VARIANCE_FLOOR}"
        )));
    }
    Ok(0.5 * (2.0 * PI * E * variance).ln())
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frame-wise band variance estimator with a cached FFT plan.
pub struct BandPower {
    frame_len: usize,
    sample_rate: f64,
    window: Vec<f64>,
    norm: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl BandPower {
    /// 1-s frames at `sample_rate`.
    pub fn new(sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let frame_len = sample_rate.round() as usize;
        let window = hann(frame_len);
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        Ok(Self {
            frame_len,
            sample_rate,
            window,
            norm: sample_rate * energy,
            fft,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// One-sided power spectrum of a Hann-windowed frame, scaled so that the
    /// sum over bins is a variance estimate.
    pub fn frame_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.frame_len;
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        (0..=n / 2)
            .map(|k| {
                let p = buf[k].norm_sqr();
                let one_sided = if k == 0 || 2 * k == n { p } else { 2.0 * p };
                one_sided / self.norm
            })
            .collect()
    }

    pub fn band_from_spectrum(&self, spectrum: &[f64], band: &BandSpec) -> f64 {
        let total: f64 = spectrum
            .iter()
            .enumerate()
            .filter(|(k, _)| band.contains_bin(*k, self.frame_len, self.sample_rate))
            .map(|(_, p)| p)
            .sum();
        total.max(VARIANCE_FLOOR)
    }

    /// Variances of one band for each 1-s frame of a segment channel.
    pub fn band_variance(&self, segment_channel: &[f64], band: &BandSpec) -> Result<Vec<f64>> {
        band.validate(self.sample_rate)?;
        let n = self.frame_len;
        if segment_channel.len() != WINDOWS_PER_SEGMENT * n {
            return Err(Error::DimensionMismatch {
                context: "segment length (samples)".into(),
                expected: WINDOWS_PER_SEGMENT * n,
                actual: segment_channel.len(),
            });
        }
        Ok(segment_channel
            .chunks(n)
            .map(|frame| self.band_from_spectrum(&self.frame_spectrum(frame), band))
            .collect())
    }
}

/// Variances of `band` for the three 1-s frames of one segment channel.
pub fn band_variance(segment_channel: &[f64], band: &BandSpec, sample_rate: f64) -> Result<Vec<f64>> {
    BandPower::new(sample_rate)?.band_variance(segment_channel, band)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureOptions {
    pub segment: SegmentParams,
    /// Keep one DE value per frame (12 per channel); otherwise average the
    /// frame DE values per band (4 per channel).
    pub per_window: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            segment: SegmentParams::default(),
            per_window: true,
        }
    }
}

impl FeatureOptions {
    pub fn features_per_channel(&self, n_bands: usize) -> usize {
        if self.per_window {
            n_bands * WINDOWS_PER_SEGMENT
        } else {
            n_bands
        }
    }
}

/// One feature matrix per segment; per channel the values are ordered band
/// major, then frame (θw1, θw2, θw3, αw1, ...).
pub fn extract_features(
    recording: &Recording,
    bands: &[BandSpec],
    options: FeatureOptions,
) -> Result<Vec<FeatureMatrix>> {
    recording.validate()?;
    if bands.is_empty() {
        return Err(Error::invalid("no frequency bands given"));
    }
    for b in bands {
        b.validate(recording.sample_rate)?;
    }
    let bp = BandPower::new(recording.sample_rate)?;
    let segment_len = (options.segment.window_s * recording.sample_rate).round() as usize;
    if segment_len != WINDOWS_PER_SEGMENT * bp.frame_len() {
        return Err(Error::invalid(format!(
            "segment window {} s must span exactly {WINDOWS_PER_SEGMENT} one-second frames",
            options.segment.window_s
        )));
    }
    let segments = segment(recording, options.segment)?;

    // Overlapping segments share frames; cache frame band variances keyed
    // by (channel, frame start sample).
    let n = bp.frame_len();
    let hop = (options.segment.hop_s * recording.sample_rate).round() as usize;
    let mut cache: std::collections::HashMap<(usize, usize), Vec<f64>> = Default::default();

    let per_channel = options.features_per_channel(bands.len());
    let mut out = Vec::with_capacity(segments.len());
    for seg in &segments {
        let mut values = Vec::with_capacity(recording.channels * per_channel);
        for c in 0..recording.channels {
            let chan = seg.channel(c);
            let mut band_vars = vec![[0.0; WINDOWS_PER_SEGMENT]; bands.len()];
            for (w, frame) in chan.chunks(n).enumerate() {
                let key = (c, seg.index * hop + w * n);
                let vars = cache.entry(key).or_insert_with(|| {
                    let spec = bp.frame_spectrum(frame);
                    bands.iter().map(|b| bp.band_from_spectrum(&spec, b)).collect()
                });
                for (b, &v) in vars.iter().enumerate() {
                    band_vars[b][w] = v;
                }
            }
            for bv in &band_vars {
                let de: Vec<f64> = bv
                    .iter()
                    .map(|&v| differential_entropy(v))
                    .collect::<Result<_>>()?;
                if options.per_window {
                    values.extend_from_slice(&de);
                } else {
                    values.push(de.iter().sum::<f64>() / de.len() as f64);
                }
            }
        }
        out.push(FeatureMatrix {
            segment_index: seg.index,
            channels: recording.channels,
            features_per_channel: per_channel,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(channels: usize, seconds: usize, f: impl Fn(usize, usize) -> f64) -> Recording {
        let fs = 128usize;
        let samples = seconds * fs;
        let data = (0..channels)
            .flat_map(|c| (0..samples).map(move |i| (c, i)))
            .map(|(c, i)| f(c, i))
            .collect();
        Recording {
            subject_id: 1,
            trial_id: 1,
            sample_rate: fs as f64,
            channels,
            samples,
            data,
            valence: 5.0,
            arousal: 5.0,
        }
    }

    #[test]
    fn segment_counts() {
        let p = SegmentParams::default();
        assert_eq!(segment(&recording(1, 60, |_, _| 0.0), p).unwrap().len(), 58);
        assert_eq!(segment(&recording(1, 3, |_, _| 0.0), p).unwrap().len(), 1);
        assert_eq!(segment(&recording(1, 4, |_, _| 0.0), p).unwrap().len(), 2);
    }

    #[test]
    fn short_recording_rejected() {
        let mut r = recording(1, 3, |_, _| 0.0);
        r.samples = 300;
        r.data.truncate(300);
        assert!(segment(&r, SegmentParams::default()).is_err());
        assert!(r.validate().is_err());
    }

    #[test]
    fn segment_count_formula() {
        for samples in 384..1000 {
            for hop in [1, 7, 64, 128] {
                let n = segment_count(samples, 384, hop);
                assert_eq!(n, (samples - 384) / hop + 1);
                // last segment fits, the next would not
                assert!((n - 1) * hop + 384 <= samples);
                assert!(n * hop + 384 > samples);
            }
        }
    }

    #[test]
    fn de_closed_form() {
        assert!((differential_entropy(1.0).unwrap() - 1.418939).abs() < 1e-6);
        assert!((differential_entropy(E / (2.0 * PI)).unwrap() - 1.0).abs() < 1e-15);
        let a: f64 = 3.7;
        let diff = differential_entropy(a * a * 0.2).unwrap() - differential_entropy(0.2).unwrap();
        assert!((diff - a.ln()).abs() < 1e-12);
        assert!(differential_entropy(0.0).is_err());
        assert!(differential_entropy(-1.0).is_err());
    }

    #[test]
    fn de_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let v = VARIANCE_FLOOR * 1.2f64.powi(i);
            let h = differential_entropy(v).unwrap();
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn zero_signal_hits_floor() {
        let v = band_variance(&[0.0; 384], &DEFAULT_BANDS[1], 128.0).unwrap();
        assert_eq!(v, vec![VARIANCE_FLOOR; 3]);
    }

    #[test]
    fn band_outside_nyquist() {
        let band = BandSpec { name: BandName::Gamma, low_hz: 31.0, high_hz: 80.0 };
        assert!(band_variance(&[0.0; 384], &band, 128.0).is_err());
        assert!(band_variance(&[0.0; 383], &DEFAULT_BANDS[0], 128.0).is_err());
    }

    #[test]
    fn unit_sinusoid_has_amplitude_variance() {
        let x: Vec<f64> = (0..384).map(|i| (2.0 * PI * 10.0 * i as f64 / 128.0).sin()).collect();
        let v = band_variance(&x, &DEFAULT_BANDS[1], 128.0).unwrap();
        for w in v {
            assert!((w - 0.5).abs() < 1e-12, "{w}");
        }
    }

    #[test]
    fn bin_inclusion_rule() {
        let beta = DEFAULT_BANDS[2];
        let gamma = DEFAULT_BANDS[3];
        assert!(beta.contains_bin(13, 128, 128.0));
        assert!(!beta.contains_bin(30, 128, 128.0));
        assert!(!gamma.contains_bin(30, 128, 128.0));
        assert!(gamma.contains_bin(31, 128, 128.0));
        assert!(!gamma.contains_bin(50, 128, 128.0));
    }

    #[test]
    fn feature_shapes_and_order() {
        let rec = recording(32, 60, |c, i| ((c + 1) as f64 * 0.37 * i as f64).sin());
        let feats = extract_features(&rec, &DEFAULT_BANDS, FeatureOptions::default()).unwrap();
        assert_eq!(feats.len(), 58);
        for (i, f) in feats.iter().enumerate() {
            assert_eq!(f.segment_index, i);
            assert_eq!((f.channels, f.features_per_channel, f.values.len()), (32, 12, 32 * 12));
            assert!(f.values.iter().all(|v| v.is_finite()));
        }
        let one = recording(1, 5, |_, i| (i as f64 * 0.9).cos());
        let f1 = extract_features(&one, &DEFAULT_BANDS, FeatureOptions::default()).unwrap();
        assert_eq!(f1[0].values.len(), 12);

        // Band-major then frame: entry 1 is theta, frame 2 of segment 0.
        let bp = BandPower::new(128.0).unwrap();
        let chan = one.channel(0);
        let theta = bp.band_variance(&chan[..384], &DEFAULT_BANDS[0]).unwrap();
        let alpha = bp.band_variance(&chan[..384], &DEFAULT_BANDS[1]).unwrap();
        assert_eq!(f1[0].values[1], differential_entropy(theta[1]).unwrap());
        assert_eq!(f1[0].values[3], differential_entropy(alpha[0]).unwrap());
    }

    #[test]
    fn averaged_variant() {
        let rec = recording(2, 4, |c, i| ((c + 2) as f64 * 0.21 * i as f64).sin());
        let full = extract_features(&rec, &DEFAULT_BANDS, FeatureOptions::default()).unwrap();
        let opts = FeatureOptions { per_window: false, ..Default::default() };
        let avg = extract_features(&rec, &DEFAULT_BANDS, opts).unwrap();
        assert_eq!(avg[0].features_per_channel, 4);
        for c in 0..2 {
            for b in 0..4 {
                let mean = full[1].row(c)[b * 3..b * 3 + 3].iter().sum::<f64>() / 3.0;
                assert!((avg[1].row(c)[b] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let rec = recording(3, 6, |c, i| ((c * 31 + i * 17) % 23) as f64 - 11.0);
        let a = extract_features(&rec, &DEFAULT_BANDS, FeatureOptions::default()).unwrap();
        let b = extract_features(&rec, &DEFAULT_BANDS, FeatureOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
