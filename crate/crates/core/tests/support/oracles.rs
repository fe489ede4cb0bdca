//! Independent reference computations used by the signal and metric tests.

#![allow(dead_code)]

use std::f64::consts::PI;

/// `-∫ f ln f` for a zero-mean Gaussian with variance `var`, by composite
/// Simpson over `[-12σ, 12σ]`.
pub fn gaussian_entropy_by_quadrature(var: f64, intervals: usize) -> f64 {
    let sigma = var.sqrt();
    let (a, b) = (-12.0 * sigma, 12.0 * sigma);
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let p = (-(x * x) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Periodic Hann window, written out independently of the library.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| (PI * i as f64 / n as f64).sin().powi(2)).collect()
}

/// Naive O(N²) DFT power `|X_k|²` for `k = 0..=N/2`.
pub fn dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Periodogram band variance of one frame: one-sided power over bins with
/// `low <= f < high`, divided by `fs · Σw²`.
pub fn band_variance_oracle(frame: &[f64], fs: f64, low: f64, high: f64) -> f64 {
    let n = frame.len();
    let w = hann(n);
    let xw: Vec<f64> = frame.iter().zip(&w).map(|(a, b)| a * b).collect();
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let p = dft_power(&xw);
    let mut total = 0.0;
    for (k, pk) in p.iter().enumerate() {
        let f = k as f64 * fs / n as f64;
        if low <= f && f < high {
            let factor = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            total += factor * pk;
        }
    }
    total / (fs * energy)
}

/// Brute-force AP: precision at every relevant rank, averaged.
pub fn ap_brute(relevance: &[bool]) -> Option<f64> {
    let r = relevance.iter().filter(|&&x| x).count();
    if r == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..relevance.len() {
        if relevance[i] {
            let hits = relevance[..=i].iter().filter(|&&x| x).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / r as f64)
}

pub fn precision_brute(relevance: &[bool], k: usize) -> f64 {
    let cut = k.min(relevance.len());
    relevance[..cut].iter().filter(|&&x| x).count() as f64 / cut as f64
}

/// All permutations of `items` (Heap's algorithm).
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    fn heap<T: Clone>(k: usize, a: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a = items.to_vec();
    let mut out = Vec::new();
    heap(a.len(), &mut a, &mut out);
    out
}
