use rand::seq::SliceRandom;

use super::{Example, Lambdas, MixMode, TrainConfig};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, Model};
use crate::rng::stream;

/// Component losses and their combinations:
/// `J1 = λ11·ℓa + λ12·ℓb`, `J2 = ℓdd`, `J = λ1·J1 + λ2·J2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle {
    pub ell_a: f64,
    pub ell_b: f64,
    pub ell_dd: f64,
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
    pub lambdas: Lambdas,
}

impl LossBundle {
    pub fn new(ell_a: f64, ell_b: f64, ell_dd: f64, lambdas: Lambdas) -> Self {
        let j1 = lambdas.lambda11 * ell_a + lambdas.lambda12 * ell_b;
        let j2 = ell_dd;
        Self {
            ell_a,
            ell_b,
            ell_dd,
            j1,
            j2,
            j: lambdas.lambda1 * j1 + lambdas.lambda2 * j2,
            lambdas,
        }
    }

    pub fn zero(lambdas: Lambdas) -> Self {
        Self::new(0.0, 0.0, 0.0, lambdas)
    }

    /// Add `n` examples' worth of `other` (as a running sum).
    pub fn accumulate(&mut self, other: &LossBundle, n: usize) {
        let w = n as f64;
        self.ell_a += w * other.ell_a;
        self.ell_b += w * other.ell_b;
        self.ell_dd += w * other.ell_dd;
    }

    /// Running sum divided by `n`, with the combinations recomputed.
    pub fn averaged(&self, n: usize) -> LossBundle {
        let n = n.max(1) as f64;
        LossBundle::new(self.ell_a / n, self.ell_b / n, self.ell_dd / n, self.lambdas)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub bundle: LossBundle,
    pub j: Var,
    /// EEG and music embeddings of the batch (music only if computed).
    pub u: Var,
    pub v: Option<Var>,
    /// Discriminator hits and trials on the mixed batch (0/0 without one).
    pub modality_correct: usize,
    pub modality_total: usize,
}

/// Row selection for modality mixing over a batch of `n` pairs.
///
/// A random half of the pair indices contribute their EEG row (label 0,
/// index `i`), the others their music row (label 1, index `n + i`); the
/// result is shuffled. Indices address the row-stack `[u; v]`.
pub fn mix_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<u8>)> {
    if !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("mixing needs an even batch, got {n}")));
    }
    let mut rng = stream(seed, 0, 0, 0);
    let mut pick: Vec<usize> = (0..n).collect();
    pick.shuffle(&mut rng);
    let mut rows: Vec<(usize, u8)> = pick
        .iter()
        .enumerate()
        .map(|(k, &i)| if k < n / 2 { (i, 0) } else { (n + i, 1) })
        .collect();
    rows.shuffle(&mut rng);
    Ok(rows.into_iter().unzip())
}

/// Value-level modality mixing of paired `n x d` embeddings.
pub fn mix_domain_batch(u: &Tensor, v: &Tensor, seed: u64) -> Result<(Tensor, Vec<u8>)> {
    if u.shape() != v.shape() || u.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "mix_domain_batch",
            lhs: u.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let (n, d) = (u.rows(), u.cols());
    let (sel, labels) = mix_indices(n, seed)?;
    let mut data = Vec::with_capacity(n * d);
    for s in sel {
        data.extend_from_slice(if s < n { u.row_slice(s) } else { v.row_slice(s - n) });
    }
    Ok((Tensor::matrix(n, d, data), labels))
}

/// Mismatch reading: pairs `(i, partner_i)` and a "matched" target. Half
/// the pairs keep their own partner, the other half take the next pair's.
fn mismatch_indices(n: usize, seed: u64) -> (Vec<(usize, usize)>, Vec<u8>) {
    let mut rng = stream(seed, 1, 0, 0);
    let mut pick: Vec<usize> = (0..n).collect();
    pick.shuffle(&mut rng);
    let mut rows: Vec<((usize, usize), u8)> = pick
        .iter()
        .enumerate()
        .map(|(k, &i)| if k < n / 2 { ((i, i), 1) } else { ((i, (i + 1) % n), 0) })
        .collect();
    rows.shuffle(&mut rng);
    rows.into_iter().unzip()
}

fn column(values: impl Iterator<Item = f64>) -> Tensor {
    let data: Vec<f64> = values.collect();
    Tensor::matrix(data.len(), 1, data)
}

/// Build `J` for one batch. Class weights apply to both emotion losses;
/// the domain loss is unweighted. Mixing uses the largest even prefix of
/// the batch, and is skipped when that prefix is empty.
pub fn compute_objective(
    model: &Model,
    g: &mut Graph,
    b: &Bound,
    batch: &[&Example],
    config: &TrainConfig,
    weights: [f64; 2],
    mix_seed: u64,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let lambdas = config.effective_lambdas();
    let y = column(batch.iter().map(|e| e.label as f64));
    let w: Vec<f64> = batch.iter().map(|e| weights[e.label as usize]).collect();

    let eeg: Vec<&[f64]> = batch.iter().map(|e| e.eeg.as_slice()).collect();
    let u = model.eeg_forward(g, b, &eeg)?.embedding;
    let p_a = model.classify(g, b, u)?;
    let ell_a = g.bce(p_a, &y, Some(&w))?;
    let mut j1 = g.scale(ell_a, lambdas.lambda11);

    let need_music = config.music_supervision || config.domain_discriminator;
    let v = if need_music {
        let music: Vec<&[f64]> = batch.iter().map(|e| e.music.as_slice()).collect();
        Some(model.music_forward(g, b, &music)?)
    } else {
        None
    };

    let mut ell_b_value = 0.0;
    if config.music_supervision {
        let v = v.expect("music forward computed");
        let p_b = model.classify(g, b, v)?;
        let ell_b = g.bce(p_b, &y, Some(&w))?;
        ell_b_value = g.value(ell_b).item();
        let t = g.scale(ell_b, lambdas.lambda12);
        j1 = g.add(j1, t)?;
    }
    let mut j = g.scale(j1, lambdas.lambda1);

    let mut ell_dd_value = 0.0;
    let (mut modality_correct, mut modality_total) = (0, 0);
    let n_mix = batch.len() / 2 * 2;
    if config.domain_discriminator && n_mix > 0 {
        let v = v.expect("music forward computed");
        let (z, labels) = match config.mix_mode {
            MixMode::Modality => {
                let (sel, labels) = mix_indices(n_mix, mix_seed)?;
                let n = batch.len();
                let stacked = g.concat(&[u, v], 0)?;
                let rows: Vec<usize> = sel.iter().map(|&s| if s < n_mix { s } else { n + (s - n_mix) }).collect();
                (g.gather_rows(stacked, &rows)?, labels)
            }
            MixMode::Mismatch => {
                let (pairs, labels) = mismatch_indices(n_mix, mix_seed);
                let (ui, vi): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
                let us = g.gather_rows(u, &ui)?;
                let vs = g.gather_rows(v, &vi)?;
                (g.mul(us, vs)?, labels)
            }
        };
        let p_d = model.discriminate(g, b, z, config.lambda_grl)?;
        let target = column(labels.iter().map(|&l| l as f64));
        let ell_dd = g.bce(p_d, &target, None)?;
        ell_dd_value = g.value(ell_dd).item();
        modality_total = labels.len();
        modality_correct = g
            .value(p_d)
            .data()
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| (**p > 0.5) == (y == 1))
            .count();
        let t = g.scale(ell_dd, lambdas.lambda2);
        j = g.add(j, t)?;
    }

    let ell_a_value = g.value(ell_a).item();
    let mut bundle = LossBundle::new(ell_a_value, ell_b_value, ell_dd_value, lambdas);
    bundle.j = g.value(j).item();
    Ok(Objective {
        bundle,
        j,
        u,
        v,
        modality_correct,
        modality_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_balanced_selection() {
        let u = Tensor::matrix(6, 2, (0..12).map(|x| x as f64).collect());
        let v = Tensor::matrix(6, 2, (100..112).map(|x| x as f64).collect());
        let (z, labels) = mix_domain_batch(&u, &v, 3).unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 3);
        let mut used = std::collections::HashSet::new();
        for (r, &l) in labels.iter().enumerate() {
            let row = z.row_slice(r);
            let src = if l == 0 { &u } else { &v };
            let hit = (0..6).find(|&i| src.row_slice(i) == row).expect("row copied from input");
            // No pair contributes both modalities.
            assert!(used.insert(hit));
        }
        assert_eq!(mix_domain_batch(&u, &v, 3).unwrap(), (z, labels));
    }

    #[test]
    fn odd_batch_rejected() {
        let u = Tensor::zeros(&[3, 2]);
        assert!(mix_domain_batch(&u, &u, 0).is_err());
    }

    #[test]
    fn mismatch_never_pairs_with_self() {
        let (pairs, labels) = mismatch_indices(8, 5);
        for ((i, j), l) in pairs.iter().zip(labels) {
            assert_eq!(i == j, l == 1);
        }
    }
}
