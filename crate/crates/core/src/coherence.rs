//! Recursively averaged auto- and cross-PSDs and short-time coherence.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Coherence magnitudes are clamped to `1 - COHERENCE_EPS`.
pub const COHERENCE_EPS: f64 = 1e-4;
/// Auto-PSD floor relative to the mean auto-PSD over channels and bins.
pub const PSD_FLOOR_REL: f64 = 1e-12;
/// Frames after reset during which downstream estimates are flagged.
pub const WARMUP_FRAMES: u64 = 5;
/// Forgetting factor used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 0.68;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceEstimate {
    pub value: Complex64,
    /// At least one auto-PSD was below the floor; `value` is the fallback.
    pub low_energy: bool,
}

/// Index of pair `(p, q)`, `p < q`, in row-major upper-triangle order.
pub(crate) fn pair_index(channels: usize, p: usize, q: usize) -> usize {
    debug_assert!(p < q && q < channels);
    p * (2 * channels - p - 1) / 2 + (q - p - 1)
}

#[derive(Debug, Clone)]
pub struct PsdState {
    lambda: f64,
    channels: usize,
    bins: usize,
    auto_psd: Vec<f64>,
    cross_psd: Vec<Complex64>,
    mean_power: f64,
    frames: u64,
}

impl PsdState {
    pub fn new(channels: usize, bins: usize, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "forgetting factor {lambda} outside [0, 1)"
            )));
        }
        if channels == 0 || bins == 0 {
            return Err(Error::InvalidConfig("PSD state needs channels and bins".into()));
        }
        let pairs = channels * (channels - 1) / 2;
        Ok(Self {
            lambda,
            channels,
            bins,
            auto_psd: vec![0.0; channels * bins],
            cross_psd: vec![Complex64::new(0.0, 0.0); pairs * bins],
            mean_power: 0.0,
            frames: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn is_warming_up(&self) -> bool {
        self.frames < WARMUP_FRAMES
    }

    pub fn auto_psd(&self, channel: usize, bin: usize) -> f64 {
        self.auto_psd[channel * self.bins + bin]
    }

    /// Cross-PSD `E[X_p X_q^*]`; any ordering of the pair.
    pub fn cross_psd(&self, p: usize, q: usize, bin: usize) -> Complex64 {
        match p.cmp(&q) {
            std::cmp::Ordering::Equal => Complex64::new(self.auto_psd(p, bin), 0.0),
            std::cmp::Ordering::Less => {
                self.cross_psd[pair_index(self.channels, p, q) * self.bins + bin]
            }
            std::cmp::Ordering::Greater => {
                self.cross_psd[pair_index(self.channels, q, p) * self.bins + bin].conj()
            }
        }
    }

    /// Apply one frame: `Phi(l) = lambda Phi(l-1) + (1 - lambda) X_p X_q^*`.
    pub fn update(&mut self, frame: &[&[Complex64]]) -> Result<()> {
        if frame.len() != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} channels, state tracks {}",
                frame.len(),
                self.channels
            )));
        }
        if let Some(bad) = frame.iter().find(|s| s.len() != self.bins) {
            return Err(Error::DimensionMismatch(format!(
                "frame has {} bins, state tracks {}",
                bad.len(),
                self.bins
            )));
        }
        let (lam, one_minus) = (self.lambda, 1.0 - self.lambda);
        let bins = self.bins;
        let mut total = 0.0;
        for (c, spec) in frame.iter().enumerate() {
            for (a, x) in self.auto_psd[c * bins..(c + 1) * bins].iter_mut().zip(*spec) {
                *a = lam * *a + one_minus * x.norm_sqr();
                total += *a;
            }
        }
        let mut pair = 0;
        for p in 0..self.channels {
            for q in p + 1..self.channels {
                let cross = &mut self.cross_psd[pair * bins..(pair + 1) * bins];
                for ((c, xp), xq) in cross.iter_mut().zip(frame[p]).zip(frame[q]) {
                    *c = *c * lam + xp * xq.conj() * one_minus;
                }
                pair += 1;
            }
        }
        self.mean_power = total / (self.channels * bins) as f64;
        self.frames += 1;
        Ok(())
    }

    fn below_floor(&self, channel: usize, bin: usize) -> bool {
        let a = self.auto_psd(channel, bin);
        a <= 0.0 || a <= PSD_FLOOR_REL * self.mean_power
    }

    /// Clamped short-time coherence of `(p, q)` at `bin`. When either
    /// auto-PSD is below the floor, `fallback` (the diffuse model value) is
    /// returned and flagged.
    pub fn coherence(&self, p: usize, q: usize, bin: usize, fallback: f64) -> CoherenceEstimate {
        if self.frames == 0 || self.below_floor(p, bin) || self.below_floor(q, bin) {
            return CoherenceEstimate {
                value: Complex64::new(fallback, 0.0),
                low_energy: true,
            };
        }
        let denom = (self.auto_psd(p, bin) * self.auto_psd(q, bin)).sqrt();
        CoherenceEstimate {
            value: clamp_magnitude(self.cross_psd(p, q, bin) / denom),
            low_energy: false,
        }
    }
}

/// Limit `|z|` to `1 - COHERENCE_EPS`, preserving phase.
pub fn clamp_magnitude(z: Complex64) -> Complex64 {
    let limit = 1.0 - COHERENCE_EPS;
    let mag = z.norm();
    if mag > limit {
        z * (limit / mag)
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn pair_indices_are_dense() {
        let n = 5;
        let mut seen = vec![];
        for p in 0..n {
            for q in p + 1..n {
                seen.push(pair_index(n, p, q));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_lambda_and_dimensions() {
        assert!(PsdState::new(2, 4, 1.0).is_err());
        assert!(PsdState::new(2, 4, -0.1).is_err());
        let mut s = PsdState::new(2, 2, 0.5).unwrap();
        let a = [c(1.0, 0.0); 2];
        assert!(s.update(&[&a]).is_err());
        assert!(s.update(&[&a, &a[..1]]).is_err());
    }

    #[test]
    fn zero_lambda_is_instantaneous() {
        let mut s = PsdState::new(2, 1, 0.0).unwrap();
        let x0 = [c(1.0, 2.0)];
        let x1 = [c(-0.5, 0.25)];
        s.update(&[&x0, &x1]).unwrap();
        assert_eq!(s.cross_psd(0, 1, 0), x0[0] * x1[0].conj());
        assert_eq!(s.auto_psd(0, 0), x0[0].norm_sqr());
        // Rank-one estimate has unit magnitude before the clamp.
        let raw = s.cross_psd(0, 1, 0) / (s.auto_psd(0, 0) * s.auto_psd(1, 0)).sqrt();
        assert!((raw.norm() - 1.0).abs() < 1e-12);
        let est = s.coherence(0, 1, 0, 0.0);
        assert!((est.value.norm() - (1.0 - COHERENCE_EPS)).abs() < 1e-12);
    }

    #[test]
    fn constant_input_converges_geometrically() {
        let lambda = 0.68;
        let mut s = PsdState::new(2, 1, lambda).unwrap();
        let x0 = [c(0.3, -1.1)];
        let x1 = [c(2.0, 0.7)];
        let target = x0[0] * x1[0].conj();
        for l in 1..=30 {
            s.update(&[&x0, &x1]).unwrap();
            // Phi(l) = (1 - lambda^l) target for Phi(-1) = 0.
            let expect = target * (1.0 - lambda.powi(l));
            assert!((s.cross_psd(0, 1, 0) - expect).norm() < 1e-12);
        }
        assert_eq!(s.frames(), 30);
    }

    #[test]
    fn zero_frames_stay_zero_and_flag_low_energy() {
        let mut s = PsdState::new(3, 4, 0.68).unwrap();
        let z = [c(0.0, 0.0); 4];
        for _ in 0..10 {
            s.update(&[&z, &z, &z]).unwrap();
        }
        for b in 0..4 {
            assert_eq!(s.auto_psd(1, b), 0.0);
            let est = s.coherence(0, 2, b, 0.37);
            assert!(est.low_energy);
            assert_eq!(est.value, c(0.37, 0.0));
        }
    }

    #[test]
    fn identical_channels_clamp_with_zero_phase() {
        let mut s = PsdState::new(2, 8, 0.68).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<Complex64> = (0..8)
                .map(|_| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                .collect();
            s.update(&[&x, &x]).unwrap();
        }
        for b in 0..8 {
            let est = s.coherence(0, 1, b, 0.0);
            assert!((est.value.norm() - (1.0 - COHERENCE_EPS)).abs() < 1e-12);
            assert!(est.value.arg().abs() < 1e-12);
        }
        assert!(!s.is_warming_up());
    }

    #[test]
    fn independent_noise_has_low_coherence() {
        // Mean over 20 seeds of the time-averaged |coherence| after 2000 frames.
        let bins = 16;
        let mut means = vec![];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut s = PsdState::new(2, bins, 0.95).unwrap();
            let mut acc = 0.0;
            let mut count = 0;
            for l in 0..2000 {
                let mut draw = || -> Vec<Complex64> {
                    (0..bins)
                        .map(|_| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                        .collect()
                };
                let (a, b) = (draw(), draw());
                s.update(&[&a, &b]).unwrap();
                if l >= 100 {
                    for k in 0..bins {
                        acc += s.coherence(0, 1, k, 0.0).value.norm();
                        count += 1;
                    }
                }
            }
            means.push(acc / count as f64);
        }
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        assert!(mean < 0.25, "mean |coherence| {mean}");
    }

    #[test]
    fn matches_generating_coherence_in_expectation() {
        // X_1 = rho X_0 + sqrt(1 - rho^2) N with complex rho: true coherence rho.
        let rho = Complex64::from_polar(0.6, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bins = 64;
        let mut s = PsdState::new(2, bins, DEFAULT_LAMBDA).unwrap();
        let mut sum = Complex64::new(0.0, 0.0);
        let mut count = 0.0;
        let mut gauss = || c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        for l in 0..3000 {
            let x0: Vec<Complex64> = (0..bins).map(|_| gauss()).collect();
            let x1: Vec<Complex64> = x0
                .iter()
                .map(|&v| rho * v + gauss() * (1.0 - rho.norm_sqr()).sqrt())
                .collect();
            s.update(&[&x0, &x1]).unwrap();
            if l > 10 {
                // Averaging the PSDs, not the ratio, removes the short-window bias.
                for k in 0..bins {
                    sum += s.cross_psd(1, 0, k)
                        / (s.auto_psd(0, k) * s.auto_psd(1, k)).sqrt();
                    count += 1.0;
                }
            }
        }
        let mean = sum / count;
        // Small-sample coherence is biased upward in magnitude; phase is unbiased.
        assert!((mean.arg() - rho.arg()).abs() < 0.02, "{mean}");
        assert!((mean.norm() - rho.norm()).abs() < 0.1, "{mean}");
    }

    proptest! {
        #[test]
        fn invariants_hold_after_every_update(
            frames in prop::collection::vec(
                prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 9), 1..20),
            lambda in 0.0..0.99f64,
        ) {
            let mut s = PsdState::new(3, 3, lambda).unwrap();
            for frame in &frames {
                let x: Vec<Complex64> = frame.iter().map(|&(r, i)| c(r, i)).collect();
                s.update(&[&x[0..3], &x[3..6], &x[6..9]]).unwrap();
                for b in 0..3 {
                    for p in 0..3 {
                        prop_assert!(s.auto_psd(p, b) >= 0.0);
                        for q in 0..3 {
                            let bound = (s.auto_psd(p, b) * s.auto_psd(q, b)).sqrt();
                            prop_assert!(s.cross_psd(p, q, b).norm() <= bound * (1.0 + 1e-9) + 1e-12);
                            let pq = s.coherence(p, q, b, 0.5);
                            let qp = s.coherence(q, p, b, 0.5);
                            prop_assert!(pq.value.norm() <= 1.0 - COHERENCE_EPS + 1e-12);
                            prop_assert!((pq.value - qp.value.conj()).norm() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
