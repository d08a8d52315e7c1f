//! ppp estimate, the count K, and batch-means ESS of the indicator chain.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::DeltaSeries;

/// 1{Δᵢ ≥ 0} in iteration order. Exact ties count as 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorChain {
    bits: Vec<bool>,
}

impl IndicatorChain {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn indicator_chain(deltas: &DeltaSeries) -> IndicatorChain {
    IndicatorChain { bits: deltas.deltas().iter().map(|&d| d >= 0.0).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PppVariant {
    /// k / m
    Plain,
    /// (k + 0.5) / (m + 1), never exactly 0 or 1.
    AntiZero,
}

pub fn ppp_value(k: usize, m: usize, variant: PppVariant) -> f64 {
    match variant {
        PppVariant::Plain => k as f64 / m as f64,
        PppVariant::AntiZero => (k as f64 + 0.5) / (m as f64 + 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PppEstimate {
    pub k: usize,
    pub m: usize,
    pub value: f64,
    pub variant: PppVariant,
    pub ess: Option<f64>,
    pub tau: Option<f64>,
}

pub fn ppp_hat(chain: &IndicatorChain, variant: PppVariant) -> PppEstimate {
    let k = chain.count();
    let m = chain.len();
    PppEstimate { k, m, value: ppp_value(k, m, variant), variant, ess: None, tau: None }
}

impl PppEstimate {
    pub fn with_ess(mut self, e: EssEstimate) -> Self {
        self.ess = Some(e.ess);
        self.tau = Some(e.tau);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub tau: f64,
    /// Chain was constant; ess = m and tau = 1 by convention.
    pub degenerate: bool,
}

/// Minimum chain length accepted by [`ess_batch_means`].
pub const MIN_ESS_LENGTH: usize = 10;

/// Batch-means ESS of a 0/1 chain with batch size floor(√m).
/// tau = m / ESS is clamped to at least 1 (and ESS to at most m).
pub fn ess_batch_means(bits: &[bool]) -> Result<EssEstimate> {
    let m = bits.len();
    if m < MIN_ESS_LENGTH {
        return domain(format!("batch means needs at least {MIN_ESS_LENGTH} iterations, got {m}"));
    }
    let ones = bits.iter().filter(|&&b| b).count();
    let mf = m as f64;
    if ones == 0 || ones == m {
        return Ok(EssEstimate { ess: mf, tau: 1.0, degenerate: true });
    }
    let batch = (mf.sqrt().floor() as usize).max(1);
    let n_batches = m / batch;
    debug_assert!(n_batches >= 2);
    // Integer arithmetic keeps the estimate exactly invariant under 0/1 complement.
    let s2 = (ones * (m - ones)) as f64 / (mf * (mf - 1.0));
    let mut ss: i128 = 0;
    let mut batch_sum = 0usize;
    for (i, &b) in bits[..n_batches * batch].iter().enumerate() {
        batch_sum += b as usize;
        if (i + 1) % batch == 0 {
            let dev = (batch_sum * m) as i128 - (ones * batch) as i128;
            ss += dev * dev;
            batch_sum = 0;
        }
    }
    let scale = (m * batch) as f64;
    let ss = ss as f64 / (scale * scale);
    let long_run = batch as f64 * ss / (n_batches - 1) as f64;
    if long_run <= 0.0 {
        // Every batch hit the overall mean exactly: no detectable autocorrelation.
        return Ok(EssEstimate { ess: mf, tau: 1.0, degenerate: false });
    }
    let tau = (long_run / s2).max(1.0);
    Ok(EssEstimate { ess: mf / tau, tau, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMoments {
    pub mean: f64,
    pub variance: f64,
}

/// E[K] = m·ppp and V[K] = m²·ppp(1−ppp)/ESS.
pub fn k_moments(ppp: f64, m: usize, ess: f64) -> Result<KMoments> {
    let mf = m as f64;
    if !(ess > 0.0) || ess > mf {
        return domain(format!("ESS must lie in (0, m] = (0, {m}], got {ess}"));
    }
    if !(0.0..=1.0).contains(&ppp) {
        return domain(format!("ppp must lie in [0, 1], got {ppp}"));
    }
    Ok(KMoments { mean: mf * ppp, variance: mf * mf * ppp * (1.0 - ppp) / ess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeltaSource;
    use crate::rng::stream;
    use rand::Rng;

    fn series(v: &[f64]) -> DeltaSeries {
        DeltaSeries::new(v.to_vec(), DeltaSource::RealData).unwrap()
    }

    fn two_state_chain(m: usize, stay: f64, seed: u64) -> Vec<bool> {
        let mut rng = stream(seed, 0);
        let mut state = rng.random::<bool>();
        (0..m)
            .map(|_| {
                if rng.random::<f64>() >= stay {
                    state = !state;
                }
                state
            })
            .collect()
    }

    #[test]
    fn thresholding_includes_zero() {
        let c = indicator_chain(&series(&[-1.0, 0.0, 2.0, -3.0]));
        assert_eq!(c.bits(), &[false, true, true, false]);
        assert_eq!(indicator_chain(&series(&[-1.0, -0.5])).count(), 0);
    }

    #[test]
    fn sign_flip_complements_count() {
        let v = [-1.2, 0.4, 3.0, -0.1, 2.2];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let k = indicator_chain(&series(&v)).count();
        let k_neg = indicator_chain(&series(&neg)).count();
        assert_eq!(k + k_neg, v.len());
    }

    #[test]
    fn ppp_hat_variants() {
        let c = IndicatorChain::from_bits(vec![true, false, true, false]);
        assert_eq!(ppp_hat(&c, PppVariant::Plain).value, 0.5);
        let zeros = IndicatorChain::from_bits(vec![false; 100]);
        let e = ppp_hat(&zeros, PppVariant::AntiZero);
        assert!((e.value - 0.5 / 101.0).abs() < 1e-15);
        assert_eq!(e.k, 0);
    }

    #[test]
    fn iid_chain_has_unit_tau() {
        let mut rng = stream(21, 0);
        let bits: Vec<bool> = (0..100_000).map(|_| rng.random::<bool>()).collect();
        let e = ess_batch_means(&bits).unwrap();
        let ratio = e.ess / bits.len() as f64;
        assert!((0.9..=1.1).contains(&ratio), "{ratio}");
    }

    #[test]
    fn two_state_markov_chain_tau() {
        // Lag-1 correlation ρ = 2·0.9 − 1 = 0.8, so τ = (1+ρ)/(1−ρ) = 9.
        let bits = two_state_chain(100_000, 0.9, 22);
        let e = ess_batch_means(&bits).unwrap();
        assert!((0.8 * 9.0..=1.2 * 9.0).contains(&e.tau), "tau = {}", e.tau);
    }

    #[test]
    fn constant_chain_is_degenerate() {
        let e = ess_batch_means(&[true; 50]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.ess, 50.0);
        assert_eq!(e.tau, 1.0);
        assert!(ess_batch_means(&[true; 9]).is_err());
    }

    #[test]
    fn complement_invariance() {
        let bits = two_state_chain(5000, 0.7, 23);
        let flipped: Vec<bool> = bits.iter().map(|b| !b).collect();
        assert_eq!(ess_batch_means(&bits).unwrap(), ess_batch_means(&flipped).unwrap());
    }

    #[test]
    fn tau_grows_with_block_length() {
        // Blocks of L identical iid bits; τ ≈ L. Use 3 replicate chains per L
        // and require the smallest estimate at the larger L to exceed the
        // largest at the smaller L.
        let mut rng = stream(24, 0);
        let mut block_taus = Vec::new();
        for l in [1usize, 10, 100] {
            let taus: Vec<f64> = (0..3)
                .map(|_| {
                    let mut bits = Vec::with_capacity(100_000);
                    while bits.len() < 100_000 {
                        let b = rng.random::<bool>();
                        bits.extend(std::iter::repeat_n(b, l));
                    }
                    bits.truncate(100_000);
                    ess_batch_means(&bits).unwrap().tau
                })
                .collect();
            block_taus.push(taus);
        }
        for w in block_taus.windows(2) {
            let lo_max = w[0].iter().cloned().fold(f64::MIN, f64::max);
            let hi_min = w[1].iter().cloned().fold(f64::MAX, f64::min);
            assert!(hi_min > lo_max, "{block_taus:?}");
        }
    }

    #[test]
    fn k_moments_examples() {
        let k = k_moments(0.5, 100, 100.0).unwrap();
        assert_eq!((k.mean, k.variance), (50.0, 25.0));
        assert_eq!(k_moments(0.5, 100, 25.0).unwrap().variance, 100.0);
        assert_eq!(k_moments(0.0, 100, 30.0).unwrap().variance, 0.0);
        assert_eq!(k_moments(1.0, 100, 30.0).unwrap().variance, 0.0);
        assert!(k_moments(0.5, 100, 101.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ppp_values_in_range(bits in prop::collection::vec(any::<bool>(), 1..500)) {
                let c = IndicatorChain::from_bits(bits.clone());
                let plain = ppp_hat(&c, PppVariant::Plain);
                let az = ppp_hat(&c, PppVariant::AntiZero);
                prop_assert_eq!(plain.value, plain.k as f64 / bits.len() as f64);
                prop_assert!(az.value > 0.0 && az.value < 1.0);
                prop_assert!(plain.k <= plain.m);
            }

            #[test]
            fn ess_within_bounds(bits in prop::collection::vec(any::<bool>(), 10..2000)) {
                let e = ess_batch_means(&bits).unwrap();
                prop_assert!(e.tau >= 1.0);
                prop_assert!(e.ess > 0.0 && e.ess <= bits.len() as f64);
                prop_assert!((e.tau * e.ess - bits.len() as f64).abs() < 1e-6);
            }
        }
    }
}
