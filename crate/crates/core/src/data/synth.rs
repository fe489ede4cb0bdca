//! Synthetic paired EEG/music data with a known latent structure.
//!
//! Every track carries a latent vector in `R^8`. Coordinates 0 and 1 hold
//! the valence and arousal class signal: `sep · (±1) + (1 - sep) · g` with
//! `g ~ N(0, 1)`, so `sep = 0` makes labels independent of the latent and
//! `sep = 1` separates the classes cleanly. The remaining coordinates are a
//! track identity code shared by both modalities. A slow sinusoidal
//! intensity envelope and small per-second drift give each track a time
//! course.
//!
//! EEG: for each 1-s block the per-(channel, band) log variance is an affine
//! image of the block latent (a subject-specific mixing matrix plus a
//! spectral baseline) and the signal is synthesised as random-phase
//! sinusoids on the DFT bins of each band, plus weak white noise. DE
//! features are therefore noisy affine images of the latent.
//!
//! Music: each aligned 3-s segment embedding is a linear image of the mean
//! latent over its span, plus a constant offset scaled by `domain_shift`
//! and isotropic noise.
//!
//! Samples are quantised to `f32` at generation so that the in-memory data
//! and a file round trip are identical. Randomness comes from ChaCha8
//! streams keyed by `(seed, purpose, index)`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::formats::{write_embeddings, write_recording};
use super::manifest::{Manifest, ManifestEntry};
use super::{SubjectData, TrackEmbeddingSet, TrialData};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::signal::{extract_features, BandSpec, FeatureOptions, Recording, DEFAULT_BANDS};

const LATENT: usize = 8;
const ENVELOPE_PERIOD_S: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub tracks: usize,
    pub segments_per_track: usize,
    pub channels: usize,
    pub music_dim: usize,
    /// Class separation in `[0, 1]`.
    pub separability: f64,
    /// Scale of the constant inter-modality offset, `>= 0`.
    pub domain_shift: f64,
    /// Per-segment latent noise, `>= 0`.
    pub noise: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 1,
            tracks: 34,
            segments_per_track: 58,
            channels: 32,
            music_dim: 256,
            separability: 0.9,
            domain_shift: 1.0,
            noise: 0.3,
            sample_rate: 128.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("synth: {m}")));
        if self.tracks < 10 {
            return fail(format!("need at least 10 tracks, got {}", self.tracks));
        }
        if self.tracks > u16::MAX as usize || self.subjects > u16::MAX as usize {
            return fail("too many tracks or subjects".into());
        }
        if self.subjects == 0 || self.segments_per_track == 0 || self.channels == 0 || self.music_dim == 0 {
            return fail("subjects, segments, channels and music_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.separability) {
            return fail(format!("separability {} outside [0, 1]", self.separability));
        }
        if !(self.domain_shift >= 0.0) || !(self.noise >= 0.0) {
            return fail("domain_shift and noise must be non-negative".into());
        }
        if self.sample_rate < 101.0 || self.sample_rate.fract() != 0.0 {
            return fail("sample_rate must be an integer >= 101 Hz (γ band reaches 50 Hz)".into());
        }
        Ok(())
    }

    /// Recording length in seconds: segments are 3 s with a 1 s hop.
    pub fn duration_s(&self) -> usize {
        self.segments_per_track + 2
    }
}

/// Generated recordings and track embeddings, before feature extraction.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SynthSpec,
    /// Subject-major; trial ids equal track ids (1-based).
    pub recordings: Vec<Recording>,
    pub tracks: Vec<TrackEmbeddingSet>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

fn balanced_tags(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
    v.shuffle(rng);
    v
}

fn matvec(m: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

struct TrackLatent {
    /// Per-second latent, `duration x LATENT`.
    blocks: Vec<[f64; LATENT]>,
}

fn track_latent(spec: &SynthSpec, track: usize, v_tag: u8, a_tag: u8) -> TrackLatent {
    let mut rng = stream(spec.seed, 1, track as u64, 0);
    let sep = spec.separability;
    let sign = |t: u8| if t == 1 { 1.0 } else { -1.0 };
    let mut base = [0.0; LATENT];
    base[0] = sep * sign(v_tag) + (1.0 - sep) * normal(&mut rng);
    base[1] = sep * sign(a_tag) + (1.0 - sep) * normal(&mut rng);
    for b in base.iter_mut().skip(2) {
        *b = 0.7 * normal(&mut rng);
    }
    let phase = rng.random_range(0.0..2.0 * PI);
    let blocks = (0..spec.duration_s())
        .map(|t| {
            let env = 1.0 + 0.3 * (2.0 * PI * t as f64 / ENVELOPE_PERIOD_S + phase).sin();
            let mut z = base;
            z[0] *= env;
            z[1] *= env;
            for v in z.iter_mut() {
                *v += 0.1 * normal(&mut rng);
            }
            z
        })
        .collect();
    TrackLatent { blocks }
}

/// Random-phase sinusoids on the DFT bins of each band, one 1-s block.
struct BlockSynth {
    n: usize,
    bins: Vec<Vec<usize>>,
    ifft: Arc<dyn rustfft::Fft<f64>>,
}

impl BlockSynth {
    fn new(fs: f64, bands: &[BandSpec]) -> Self {
        let n = fs as usize;
        let bins = bands
            .iter()
            .map(|b| (1..n / 2).filter(|&k| b.contains_bin(k, n, fs)).collect())
            .collect();
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        Self { n, bins, ifft }
    }

    /// One block whose band `b` has amplitude variance `variances[b]`.
    fn block(&self, variances: &[f64], rng: &mut ChaCha8Rng, white: f64) -> Vec<f64> {
        let mut spec = vec![Complex::new(0.0, 0.0); self.n];
        for (bins, &var) in self.bins.iter().zip(variances) {
            // Σ A²/2 = var over the band's bins.
            let amp = (2.0 * var / bins.len() as f64).sqrt();
            for &k in bins {
                let phase = rng.random_range(0.0..2.0 * PI);
                let c = Complex::from_polar(amp / 2.0, phase);
                spec[k] = c;
                spec[self.n - k] = c.conj();
            }
        }
        self.ifft.process(&mut spec);
        spec.iter().map(|c| c.re + white * normal(rng)).collect()
    }
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let n_bands = DEFAULT_BANDS.len();
    let feat_rows = spec.channels * n_bands;

    let mut tag_rng = stream(spec.seed, 0, 0, 0);
    let v_tags = balanced_tags(&mut tag_rng, spec.tracks);
    let a_tags = balanced_tags(&mut tag_rng, spec.tracks);
    let latents: Vec<TrackLatent> = (0..spec.tracks)
        .map(|k| track_latent(spec, k, v_tags[k], a_tags[k]))
        .collect();

    // Music projection shared by all tracks.
    let mut mrng = stream(spec.seed, 2, 0, 0);
    let w_music = normals(&mut mrng, spec.music_dim * LATENT, (1.0 / LATENT as f64).sqrt() * 1.5);
    let b_music = normals(&mut mrng, spec.music_dim, 0.5);
    let offset_music = normals(&mut mrng, spec.music_dim, 1.0);

    let q = |x: f64| x as f32 as f64;
    let tracks: Vec<TrackEmbeddingSet> = (0..spec.tracks)
        .map(|k| {
            let mut rng = stream(spec.seed, 3, k as u64, 0);
            let mut values = Vec::with_capacity(spec.segments_per_track * spec.music_dim);
            for i in 0..spec.segments_per_track {
                let mut z = [0.0; LATENT];
                for blk in &latents[k].blocks[i..i + 3] {
                    for (a, b) in z.iter_mut().zip(blk) {
                        *a += b / 3.0;
                    }
                }
                for v in z.iter_mut() {
                    *v += spec.noise * normal(&mut rng);
                }
                let e = matvec(&w_music, spec.music_dim, &z);
                for d in 0..spec.music_dim {
                    let x = e[d] + b_music[d] + spec.domain_shift * offset_music[d]
                        + 0.1 * spec.noise * normal(&mut rng);
                    values.push(q(x));
                }
            }
            TrackEmbeddingSet {
                track_id: (k + 1) as u16,
                dim: spec.music_dim,
                values,
                valence_tag: v_tags[k],
                arousal_tag: a_tags[k],
            }
        })
        .collect();

    // EEG: shared mixing plus subject deviation, band baselines falling with
    // frequency.
    let mut erng = stream(spec.seed, 4, 0, 0);
    let mix_scale = (1.0 / LATENT as f64).sqrt();
    let w_eeg = normals(&mut erng, feat_rows * LATENT, mix_scale);
    let offset_eeg = normals(&mut erng, feat_rows, 0.5);
    let band_base = [4.0f64.ln(), 3.0f64.ln(), 1.5f64.ln(), 0.5f64.ln()];
    let synth = BlockSynth::new(fs, &DEFAULT_BANDS);
    let samples = spec.duration_s() * synth.n;

    let mut recordings = Vec::with_capacity(spec.subjects * spec.tracks);
    for s in 0..spec.subjects {
        let mut srng = stream(spec.seed, 5, s as u64, 0);
        let dev = normals(&mut srng, feat_rows * LATENT, 0.3 * mix_scale);
        let w_s: Vec<f64> = w_eeg.iter().zip(&dev).map(|(a, b)| a + b).collect();
        let base: Vec<f64> = (0..feat_rows)
            .map(|r| band_base[r % n_bands] + 0.2 * normal(&mut srng))
            .collect();
        for k in 0..spec.tracks {
            let mut rng = stream(spec.seed, 6, s as u64, k as u64);
            let mut data = vec![0.0; spec.channels * samples];
            for (t, blk) in latents[k].blocks.iter().enumerate() {
                let mut z = *blk;
                for v in z.iter_mut() {
                    *v += spec.noise * normal(&mut rng);
                }
                let logvar = matvec(&w_s, feat_rows, &z);
                for c in 0..spec.channels {
                    let vars: Vec<f64> = (0..n_bands)
                        .map(|b| {
                            let r = c * n_bands + b;
                            (base[r] + logvar[r] + spec.domain_shift * offset_eeg[r]).exp()
                        })
                        .collect();
                    let block = synth.block(&vars, &mut rng, 0.05);
                    let start = c * samples + t * synth.n;
                    for (dst, v) in data[start..start + synth.n].iter_mut().zip(block) {
                        *dst = q(v);
                    }
                }
            }
            let rating = |tag: u8, rng: &mut ChaCha8Rng| {
                let r = if tag == 1 {
                    rng.random_range(5.5..=9.0)
                } else {
                    rng.random_range(1.0..=5.0)
                };
                q(r)
            };
            let valence = rating(v_tags[k], &mut rng);
            let arousal = rating(a_tags[k], &mut rng);
            recordings.push(Recording {
                subject_id: (s + 1) as u16,
                trial_id: (k + 1) as u16,
                sample_rate: fs,
                channels: spec.channels,
                samples,
                data,
                valence,
                arousal,
            });
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        recordings,
        tracks,
    })
}

impl SyntheticDataset {
    /// Write files and the manifest under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let eeg_dir = dir.join("eeg");
        let music_dir = dir.join("music");
        for d in [&eeg_dir, &music_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for t in &self.tracks {
            write_embeddings(&music_dir.join(track_file(t.track_id)), t)?;
        }
        let mut entries = Vec::with_capacity(self.recordings.len());
        for r in &self.recordings {
            let eeg_rel = PathBuf::from("eeg").join(format!("s{:02}_t{:02}.eegx", r.subject_id, r.trial_id));
            write_recording(&dir.join(&eeg_rel), r)?;
            let track = &self.tracks[r.trial_id as usize - 1];
            entries.push(ManifestEntry {
                subject: r.subject_id,
                trial: r.trial_id,
                track: track.track_id,
                eeg_path: eeg_rel,
                emb_path: PathBuf::from("music").join(track_file(track.track_id)),
                valence_rating: r.valence,
                arousal_rating: r.arousal,
                valence_tag: track.valence_tag,
                arousal_tag: track.arousal_tag,
            });
        }
        let manifest = Manifest {
            root: dir.to_path_buf(),
            sample_rate: self.spec.sample_rate,
            channels: self.spec.channels,
            music_dim: self.spec.music_dim,
            entries,
        };
        let path = dir.join("manifest.csv");
        manifest.write(&path)?;
        Ok(path)
    }

    /// Feature-extracted subjects without touching the filesystem.
    pub fn subjects(&self, options: FeatureOptions) -> Result<Vec<SubjectData>> {
        let tracks: Vec<Arc<TrackEmbeddingSet>> = self.tracks.iter().cloned().map(Arc::new).collect();
        let mut out: Vec<SubjectData> = Vec::new();
        for r in &self.recordings {
            let eeg = extract_features(r, &DEFAULT_BANDS, options)?;
            let music = tracks[r.trial_id as usize - 1].clone();
            let trial = TrialData {
                subject_id: r.subject_id,
                trial_id: r.trial_id,
                track_id: music.track_id,
                valence_rating: r.valence,
                arousal_rating: r.arousal,
                eeg,
                music,
            };
            match out.last_mut() {
                Some(s) if s.subject_id == r.subject_id => s.trials.push(trial),
                _ => out.push(SubjectData {
                    subject_id: r.subject_id,
                    trials: vec![trial],
                }),
            }
        }
        for s in &out {
            s.validate()?;
        }
        Ok(out)
    }
}

fn track_file(track_id: u16) -> String {
    format!("track{track_id:02}.memb")
}
