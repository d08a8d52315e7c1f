//! Monte Carlo standard errors for cppp̂: the normal-approximation plug-in,
//! two bootstraps, and the transfer estimator of τ taken from the real chain.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{count_admitted, PppThreshold, ReplicateResult};
use crate::dist::{normal_cdf, sorted_quantile, std_normal_quantile};
use crate::error::{domain, Result};
use crate::model::DeltaSeries;
use crate::ppp::{ess_batch_means, EssEstimate};
use crate::rng::{derive_seed, stream, StreamRng};

/// Anything that can give τ̂ for a replicate with a given ppp̂.
pub trait TauSource: Sync {
    fn tau(&self, q: f64) -> f64;
}

/// Fixed τ, mainly for tests and for callers with an external estimate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTau(pub f64);

impl TauSource for ConstantTau {
    fn tau(&self, _q: f64) -> f64 {
        self.0
    }
}

pub const TRANSFER_GRID: usize = 99;
pub const MIN_TRANSFER_LENGTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferPoint {
    pub q: f64,
    pub delta_q: f64,
    pub tau: f64,
    pub degenerate: bool,
}

/// τ̂(q) of the shifted indicator chain 1{Δᵢ ≤ Δ_q}, cached on q = 0.01..0.99.
#[derive(Debug, Clone)]
pub struct TransferTable {
    deltas: Vec<f64>,
    sorted: Vec<f64>,
    grid: Vec<TransferPoint>,
    tau_buffer: f64,
}

impl TransferTable {
    pub fn new(series: &DeltaSeries, tau_buffer: f64) -> Result<Self> {
        if series.len() < MIN_TRANSFER_LENGTH {
            return domain(format!(
                "transfer estimator needs a real-data chain of at least {MIN_TRANSFER_LENGTH}, got {}",
                series.len()
            ));
        }
        if !(tau_buffer.is_finite() && tau_buffer >= 1.0) {
            return domain(format!("tau_buffer must be at least 1, got {tau_buffer}"));
        }
        let deltas = series.deltas().to_vec();
        let mut sorted = deltas.clone();
        sorted.sort_by(f64::total_cmp);
        let mut table = Self { deltas, sorted, grid: Vec::new(), tau_buffer };
        table.grid = (1..=TRANSFER_GRID)
            .into_par_iter()
            .map(|i| {
                let q = i as f64 / 100.0;
                let (bits, delta_q) = table.shifted_indicators(q);
                let e = ess_batch_means(&bits).expect("chain long enough");
                TransferPoint { q, delta_q, tau: e.tau, degenerate: e.degenerate }
            })
            .collect();
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn tau_buffer(&self) -> f64 {
        self.tau_buffer
    }

    pub fn grid(&self) -> &[TransferPoint] {
        &self.grid
    }

    /// Shifted indicators and the type-1 quantile Δ_q they are centred on.
    pub fn shifted_indicators(&self, q: f64) -> (Vec<bool>, f64) {
        let dq = sorted_quantile(&self.sorted, q.clamp(0.0, 1.0));
        (self.deltas.iter().map(|&d| d <= dq).collect(), dq)
    }

    /// Batch-means ESS of the shifted chain at q, computed directly.
    pub fn shifted_ess(&self, q: f64) -> EssEstimate {
        ess_batch_means(&self.shifted_indicators(q).0).expect("chain long enough")
    }

    /// Interpolated τ̂(q) times the buffer; q outside [0.01, 0.99] takes the end value.
    pub fn tau(&self, q: f64) -> f64 {
        let x = q.clamp(0.01, 0.99) * 100.0 - 1.0;
        let i = (x.floor() as usize).min(TRANSFER_GRID - 2);
        let w = x - i as f64;
        let t = self.grid[i].tau * (1.0 - w) + self.grid[i + 1].tau * w;
        (t * self.tau_buffer).max(1.0)
    }
}

impl TauSource for TransferTable {
    fn tau(&self, q: f64) -> f64 {
        TransferTable::tau(self, q)
    }
}

pub fn transfer_tau(table: &TransferTable, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("q = {q} outside [0, 1]"));
    }
    Ok(table.tau(q))
}

/// F_N(m̃·ppp_y + ½; m̃·p̂, τ̂·m̃·p̂(1−p̂)).
pub fn f_hat_normal(m_tilde: usize, ppp_y: f64, ppp_j: f64, tau: f64) -> f64 {
    let m = m_tilde as f64;
    let var = tau * m * ppp_j * (1.0 - ppp_j);
    normal_cdf(m * ppp_y + 0.5, m * ppp_j, var.max(0.0)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Plugin,
    BootstrapMbb,
    BootstrapNormal,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Plugin => "plugin",
            Self::BootstrapMbb => "bootstrap_mbb",
            Self::BootstrapNormal => "bootstrap_normal",
        }
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(Self::Plugin),
            "bootstrap_mbb" | "mbb" => Ok(Self::BootstrapMbb),
            "bootstrap_normal" | "normal" => Ok(Self::BootstrapNormal),
            other => domain(format!("unknown variance method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub method: VarianceMethod,
    pub variance: f64,
    pub se: f64,
    /// Bootstrap rounds; 0 for the plug-in.
    pub b: usize,
    pub block_length: Option<usize>,
    pub ci_level: f64,
    pub ci: [f64; 2],
    /// Mean of the F̂ⱼ (plug-in only).
    pub f_bar: Option<f64>,
}

impl VarianceEstimate {
    fn new(method: VarianceMethod, variance: f64, b: usize, block_length: Option<usize>) -> Self {
        let variance = variance.max(0.0);
        Self { method, variance, se: variance.sqrt(), b, block_length, ci_level: 0.0, ci: [f64::NAN; 2], f_bar: None }
    }

    /// Attach a normal-theory interval around `cppp`.
    pub fn with_ci(mut self, cppp: f64, level: f64) -> Result<Self> {
        self.ci = confidence_interval(cppp, self.se, level)?;
        self.ci_level = level;
        Ok(self)
    }
}

pub const DEFAULT_BOOTSTRAP_ROUNDS: usize = 100;

pub fn default_block_length(m_tilde: usize) -> usize {
    ((m_tilde as f64).sqrt().floor() as usize).max(1)
}

/// F̄(1−F̄)/r with F̄ the mean of the F̂ⱼ.
pub fn plugin_variance(results: &[ReplicateResult], ppp_y: f64, tau: &impl TauSource) -> Result<VarianceEstimate> {
    let r = results.len();
    if r < 2 {
        return domain(format!("plug-in variance needs r ≥ 2, got {r}"));
    }
    let f: Vec<f64> = results.iter().map(|j| f_hat_normal(j.m_tilde, ppp_y, j.ppp_hat, tau.tau(j.ppp_hat))).collect();
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(crate::Error::Numeric { index: i, message: "F̂ is not finite".into() });
    }
    let f_bar = f.iter().sum::<f64>() / r as f64;
    let mut v = VarianceEstimate::new(VarianceMethod::Plugin, f_bar * (1.0 - f_bar) / r as f64, 0, None);
    v.f_bar = Some(f_bar);
    Ok(v)
}

/// Moving-block resample of `src` to length `src.len()`.
pub fn mbb_resample<R: Rng + ?Sized>(src: &[f64], block_length: usize, rng: &mut R) -> Vec<f64> {
    let n = src.len();
    let mut out = Vec::with_capacity(n + block_length);
    while out.len() < n {
        let s = rng.random_range(0..=n - block_length);
        out.extend_from_slice(&src[s..s + block_length]);
    }
    out.truncate(n);
    out
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Run b bootstrap rounds, each on its own stream, and return the cppp̂*.
/// `inner` gives the resampled (k̃*, m̃) for one drawn replicate.
fn bootstrap_rounds<F>(results: &[ReplicateResult], threshold: PppThreshold, b: usize, seed: u64, inner: F) -> Result<Vec<f64>>
where
    F: Fn(&ReplicateResult, &mut StreamRng) -> (usize, usize) + Sync,
{
    if b < 2 {
        return domain(format!("bootstrap needs b ≥ 2, got {b}"));
    }
    if results.is_empty() {
        return domain("no calibration replicates");
    }
    let r = results.len();
    Ok((0..b)
        .into_par_iter()
        .map(|l| {
            let mut rng = stream(seed, l as u64);
            let counts: Vec<(usize, usize)> =
                (0..r).map(|_| inner(&results[rng.random_range(0..r)], &mut rng)).collect();
            count_admitted(counts.into_iter(), &threshold) as f64 / r as f64
        })
        .collect())
}

/// Bootstrap with moving-block resampling of each replicate's Δ series.
pub fn bootstrap_mbb(
    results: &[ReplicateResult],
    ppp_y: impl Into<PppThreshold>,
    b: usize,
    block_length: Option<usize>,
    seed: u64,
) -> Result<VarianceEstimate> {
    let min_m = results.iter().map(|j| j.m_tilde).min().unwrap_or(0);
    if let Some(l) = block_length {
        if l == 0 || l > min_m {
            return domain(format!("block length {l} outside [1, {min_m}]"));
        }
    }
    let seed = derive_seed(seed, 0x6d_62_62);
    let stats = bootstrap_rounds(results, ppp_y.into(), b, seed, |j, rng| {
        let l = block_length.unwrap_or_else(|| default_block_length(j.m_tilde));
        let d = mbb_resample(j.deltas.deltas(), l, rng);
        (d.iter().filter(|&&x| x >= 0.0).count(), j.m_tilde)
    })?;
    let len = block_length.or_else(|| results.first().map(|j| default_block_length(j.m_tilde)));
    Ok(VarianceEstimate::new(VarianceMethod::BootstrapMbb, sample_variance(&stats), b, len))
}

/// Bootstrap with k̃* drawn from the normal approximation, rounded and clamped.
pub fn bootstrap_normal(
    results: &[ReplicateResult],
    ppp_y: impl Into<PppThreshold>,
    b: usize,
    tau: &impl TauSource,
    seed: u64,
) -> Result<VarianceEstimate> {
    let seed = derive_seed(seed, 0x6e6f_726d);
    let stats = bootstrap_rounds(results, ppp_y.into(), b, seed, |j, rng| {
        let m = j.m_tilde as f64;
        let sd = (tau.tau(j.ppp_hat) * m * j.ppp_hat * (1.0 - j.ppp_hat)).max(0.0).sqrt();
        let z = crate::model::standard_normal(rng);
        let k = (m * j.ppp_hat + sd * z).round().clamp(0.0, m);
        (k as usize, j.m_tilde)
    })?;
    Ok(VarianceEstimate::new(VarianceMethod::BootstrapNormal, sample_variance(&stats), b, None))
}

/// cppp̂ ± z·se clipped to [0, 1].
pub fn confidence_interval(cppp: f64, se: f64, level: f64) -> Result<[f64; 2]> {
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("confidence level {level} outside (0, 1)"));
    }
    if !(se >= 0.0) {
        return domain(format!("standard error {se} is negative or NaN"));
    }
    let z = std_normal_quantile(0.5 + level / 2.0)?;
    Ok([(cppp - z * se).max(0.0), (cppp + z * se).min(1.0)])
}
