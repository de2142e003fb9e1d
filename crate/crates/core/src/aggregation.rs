//! Combining pairwise CDR estimates into one input CDR and correcting it to
//! the beamformer output with the diffuse-noise array gain.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cdr::{CdrValue, CDR_MAX};
use crate::error::{Error, Result};

/// Floor for the mean diffuseness.
pub const DIFFUSENESS_FLOOR: f64 = 1e-4;
/// Floor for the inverse diffuse array gain.
pub const ARRAY_GAIN_FLOOR: f64 = 1e-4;

/// Microphone pairs `(p, q)` with `p < q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    channels: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    /// Every pair of `channels` microphones.
    pub fn all(channels: usize) -> Result<Self> {
        Self::from_active(&vec![true; channels])
    }

    /// Every pair of channels flagged active.
    pub fn from_active(active: &[bool]) -> Result<Self> {
        let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        let pairs = idx
            .iter()
            .enumerate()
            .flat_map(|(i, &p)| idx[i + 1..].iter().map(move |&q| (p, q)))
            .collect();
        Self::new(active.len(), pairs)
    }

    pub fn new(channels: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyPairSet);
        }
        for &(p, q) in &pairs {
            if p >= q || q >= channels {
                return Err(Error::InvalidConfig(format!(
                    "pair ({p}, {q}) invalid for {channels} channels"
                )));
            }
        }
        Ok(Self { channels, pairs })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Arithmetic mean of the pairwise diffuseness values, limited to
/// `[DIFFUSENESS_FLOOR, 1]`.
pub fn average_diffuseness(pair_cdrs: &[CdrValue]) -> Result<f64> {
    if pair_cdrs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let mean = pair_cdrs.iter().map(CdrValue::diffuseness).sum::<f64>() / pair_cdrs.len() as f64;
    Ok(mean.clamp(DIFFUSENESS_FLOOR, 1.0))
}

/// Arithmetic mean of the pairwise CDRs. Diagnostic only; the enhancement
/// chain averages in the diffuseness domain.
pub fn average_cdr(pair_cdrs: &[CdrValue]) -> Result<f64> {
    if pair_cdrs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    Ok(pair_cdrs.iter().map(|v| v.cdr).sum::<f64>() / pair_cdrs.len() as f64)
}

/// `(1 - D) / D`.
pub fn input_cdr(mean_diffuseness: f64) -> f64 {
    let d = mean_diffuseness.clamp(DIFFUSENESS_FLOOR, 1.0);
    (1.0 - d) / d
}

/// Inverse array gain for diffuse noise, `w^H J w`.
pub fn diffuse_array_gain(weights: &[Complex64], jdiff: &DMatrix<f64>) -> Result<f64> {
    let n = weights.len();
    if jdiff.nrows() != n || jdiff.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} weights for a {}x{} coherence matrix",
            jdiff.nrows(),
            jdiff.ncols()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for q in 0..n {
            row += weights[q] * jdiff[(p, q)];
        }
        acc += weights[p].conj() * row;
    }
    let scale: f64 = weights.iter().map(|w| w.norm_sqr()).sum::<f64>().max(1.0);
    debug_assert!(acc.im.abs() < 1e-9 * scale, "w^H J w not real: {acc}");
    Ok(acc.re.max(ARRAY_GAIN_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputCdr {
    pub cdr: f64,
    pub clamped_high: bool,
}

/// `CDR_In / A_Gamma`, limited to `CDR_MAX`.
pub fn beamformer_output_cdr(cdr_in: f64, a_gamma: f64) -> OutputCdr {
    let raw = cdr_in / a_gamma.max(ARRAY_GAIN_FLOOR);
    if raw > CDR_MAX {
        OutputCdr {
            cdr: CDR_MAX,
            clamped_high: true,
        }
    } else {
        OutputCdr {
            cdr: raw.max(0.0),
            clamped_high: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdr::diffuseness;
    use crate::spatial::{diffuse_coherence_matrix, ArrayGeometry};
    use proptest::prelude::*;

    fn val(cdr: f64) -> CdrValue {
        CdrValue {
            cdr,
            ..Default::default()
        }
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn pair_sets() {
        let all = PairSet::all(4).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all.pairs()[0], (0, 1));
        let screened = PairSet::from_active(&[true, false, true, true]).unwrap();
        assert_eq!(screened.pairs(), &[(0, 2), (0, 3), (2, 3)]);
        assert!(matches!(PairSet::all(1), Err(Error::EmptyPairSet)));
        assert!(PairSet::new(3, vec![(1, 1)]).is_err());
        assert!(PairSet::new(3, vec![(2, 1)]).is_err());
        assert!(PairSet::new(3, vec![(0, 3)]).is_err());
    }

    #[test]
    fn diffuseness_averaging() {
        assert_eq!(average_diffuseness(&[val(1.0)]).unwrap(), 0.5);
        let mixed = average_diffuseness(&[val(0.0), val(CDR_MAX)]).unwrap();
        assert!((mixed - 0.5).abs() < 1e-4);
        // CDRs chosen so that D = {0.2, 0.4, 0.9}.
        let vals: Vec<CdrValue> = [0.2f64, 0.4, 0.9].iter().map(|d| val(1.0 / d - 1.0)).collect();
        assert!((average_diffuseness(&vals).unwrap() - 0.5).abs() < 1e-12);
        assert!(average_diffuseness(&[]).is_err());
        assert!(average_cdr(&[]).is_err());
        assert_eq!(average_cdr(&[val(0.0), val(2.0)]).unwrap(), 1.0);
    }

    #[test]
    fn input_cdr_values() {
        assert_eq!(input_cdr(0.5), 1.0);
        assert_eq!(input_cdr(1.0), 0.0);
        for rho in [0.1, 1.0, 10.0] {
            assert!((input_cdr(diffuseness(rho)) - rho).abs() < 1e-12 * rho.max(1.0));
        }
    }

    #[test]
    fn array_gain_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(diffuse_array_gain(&[c(1.0)], &one).unwrap(), 1.0);
        let identity = DMatrix::<f64>::identity(5, 5);
        let w = vec![c(0.2); 5];
        assert!((diffuse_array_gain(&w, &identity).unwrap() - 0.2).abs() < 1e-15);
        let g = ArrayGeometry::chime_front5();
        let dc = diffuse_coherence_matrix(&g, 0.0);
        let steered: Vec<Complex64> = (0..5).map(|n| Complex64::from_polar(0.2, 0.0 * n as f64)).collect();
        assert!((diffuse_array_gain(&steered, &dc).unwrap() - 1.0).abs() < 1e-12);
        assert!(diffuse_array_gain(&w[..3], &dc).is_err());
    }

    #[test]
    fn output_cdr_cases() {
        assert_eq!(beamformer_output_cdr(3.0, 1.0).cdr, 3.0);
        assert!((beamformer_output_cdr(1.0, 0.2).cdr - 5.0).abs() < 1e-12);
        let clamped = beamformer_output_cdr(1e4, 1e-6);
        assert!(clamped.clamped_high);
        assert_eq!(clamped.cdr, CDR_MAX);
    }

    proptest! {
        #[test]
        fn averaging_is_permutation_invariant(
            mut cdrs in prop::collection::vec(0.0..100.0f64, 1..12), seed in any::<u64>(),
        ) {
            let before = average_diffuseness(&cdrs.iter().map(|&v| val(v)).collect::<Vec<_>>()).unwrap();
            let k = (seed as usize) % cdrs.len();
            cdrs.rotate_left(k);
            cdrs.reverse();
            let after = average_diffuseness(&cdrs.iter().map(|&v| val(v)).collect::<Vec<_>>()).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
            prop_assert!((DIFFUSENESS_FLOOR..=1.0).contains(&after));
        }

        #[test]
        fn array_gain_matches_white_noise_gain_for_identity(
            w in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..8),
        ) {
            let w: Vec<Complex64> = w.into_iter().map(|(r, i)| Complex64::new(r, i)).collect();
            let expect: f64 = w.iter().map(|v| v.norm_sqr()).sum();
            let got = diffuse_array_gain(&w, &DMatrix::identity(w.len(), w.len())).unwrap();
            prop_assert!((got - expect.max(ARRAY_GAIN_FLOOR)).abs() < 1e-12);
        }

        #[test]
        fn output_cdr_not_below_input_when_gain_at_most_one(cdr in 0.0..1e3f64, a in ARRAY_GAIN_FLOOR..1.0f64) {
            prop_assert!(beamformer_output_cdr(cdr, a).cdr >= cdr.min(CDR_MAX));
        }
    }
}
