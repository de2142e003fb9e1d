//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Coherence of the forward model: direct part `rho` with coherence `gs`
/// plus unit diffuse part with coherence `gn`.
pub fn model_coherence(rho: f64, gs: Complex64, gn: f64) -> Complex64 {
    (gs * rho + gn) / (rho + 1.0)
}

/// Circular fractional delay by `d` samples via a DFT phase ramp.
pub fn delay(x: &[f64], d: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *b *= Complex64::from_polar(1.0, -2.0 * PI * f * d / n as f64);
    }
    if n.is_multiple_of(2) {
        buf[n / 2] = Complex64::new(buf[n / 2].re, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

/// Welch estimate of the complex coherence between two signals, Hann
/// segments of `nfft` samples with 50 % overlap. Returns one value per
/// non-negative frequency bin.
pub fn welch_coherence(x: &[f64], y: &[f64], nfft: usize) -> Vec<Complex64> {
    let hop = nfft / 2;
    let window: Vec<f64> = (0..nfft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nfft as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let bins = nfft / 2 + 1;
    let mut sxx = vec![0.0; bins];
    let mut syy = vec![0.0; bins];
    let mut sxy = vec![Complex64::new(0.0, 0.0); bins];
    let mut start = 0;
    while start + nfft <= x.len() {
        let mut a: Vec<Complex64> = (0..nfft)
            .map(|i| Complex64::new(x[start + i] * window[i], 0.0))
            .collect();
        let mut b: Vec<Complex64> = (0..nfft)
            .map(|i| Complex64::new(y[start + i] * window[i], 0.0))
            .collect();
        fft.process(&mut a);
        fft.process(&mut b);
        for k in 0..bins {
            sxx[k] += a[k].norm_sqr();
            syy[k] += b[k].norm_sqr();
            sxy[k] += a[k] * b[k].conj();
        }
        start += hop;
    }
    (0..bins)
        .map(|k| sxy[k] / (sxx[k] * syy[k]).sqrt())
        .collect()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Print a one-line verdict and return whether it passed.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "criterion {id} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}
