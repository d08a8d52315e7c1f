//! Calibrated ppp: draw calibration replicates from the posterior predictive,
//! refit each with a short chain started at its generating θ, and count how
//! often the replicate ppp falls at or below the observed one.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mcmc::{posterior_predictive_pairs, run_rw_metropolis, ChainSpec, PosteriorChain, RwSampler};
use crate::model::{delta, validate_model, Dataset, DeltaSeries, DeltaSource, Model, ParamPoint};
use crate::ppp::{ess_batch_means, indicator_chain, ppp_hat, ppp_value, EssEstimate, PppEstimate, PppVariant};
use crate::rng::{stream, StreamRng};
use crate::uncertainty::{TauSource, TransferTable};

/// Stream indices reserved for the real-data analysis; replicate `j` uses stream `j`.
const REAL_CHAIN_STREAM: u64 = u64::MAX;
const THINNING_STREAM: u64 = u64::MAX - 1;

/// Iterations added per extension under the ESS-target policy.
pub const ESS_EXTENSION: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainLengthPolicy {
    Fixed { m_tilde: usize },
    /// Extend until the replicate's indicator-chain ESS reaches `target`.
    /// `max_iterations = None` means 10·target·τ̂(0.5) from the transfer table.
    EssTarget { target: f64, max_iterations: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thinning {
    Random,
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub r: usize,
    pub policy: ChainLengthPolicy,
    pub thinning: Thinning,
    pub master_seed: u64,
    pub workers: usize,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            r: 100,
            policy: ChainLengthPolicy::EssTarget { target: 100.0, max_iterations: None },
            thinning: Thinning::Systematic,
            master_seed: 0,
            workers: 1,
        }
    }
}

impl CalibrationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return domain("need at least one calibration replicate");
        }
        if self.workers == 0 {
            return domain("need at least one worker");
        }
        match self.policy {
            ChainLengthPolicy::Fixed { m_tilde } if m_tilde < 10 => {
                domain(format!("replicate chain length must be at least 10, got {m_tilde}"))
            }
            ChainLengthPolicy::EssTarget { target, max_iterations } => {
                if !(50.0..=200.0).contains(&target) {
                    return domain(format!("ESS target must lie in [50, 200], got {target}"));
                }
                match max_iterations {
                    Some(max) if (max as f64) < target => {
                        domain(format!("max_iterations {max} below the ESS target {target}"))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Observed ppp used as the calibration threshold. When it came from a count
/// k/m, comparisons `k̃ ≤ m̃·k/m` are done in integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PppThreshold {
    pub value: f64,
    pub ratio: Option<(u64, u64)>,
}

impl PppThreshold {
    pub fn from_count(k: usize, m: usize) -> Self {
        Self { value: k as f64 / m as f64, ratio: Some((k as u64, m as u64)) }
    }

    /// k̃ ≤ m̃ · ppp_y.
    pub fn admits(&self, k_tilde: usize, m_tilde: usize) -> bool {
        match self.ratio {
            Some((k, m)) => (k_tilde as u128) * (m as u128) <= (m_tilde as u128) * (k as u128),
            None => k_tilde as f64 <= m_tilde as f64 * self.value,
        }
    }
}

impl From<f64> for PppThreshold {
    fn from(value: f64) -> Self {
        Self { value, ratio: None }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub generating_theta: ParamPoint,
    pub data_digest: u64,
    pub m_tilde: usize,
    pub k_tilde: usize,
    /// Anti-zero estimate (k̃ + 0.5)/(m̃ + 1).
    pub ppp_hat: f64,
    pub deltas: DeltaSeries,
    /// Transferred integrated autocorrelation time; 1 until filled.
    pub tau_hat: f64,
    /// Batch-means ESS of the replicate's own indicator chain, when computed.
    pub own_ess: Option<EssEstimate>,
    /// ESS target policy gave up at max_iterations.
    pub ess_short: bool,
    pub stream: u64,
}

impl ReplicateResult {
    pub fn ess_hat(&self) -> f64 {
        self.m_tilde as f64 / self.tau_hat
    }
}

/// Real-data chain settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealChainConfig {
    pub m: usize,
    pub burn_in: usize,
    pub mixing: MixingPreset,
    /// Starting proposal scales; the model's defaults when absent.
    pub initial_scales: Option<Vec<f64>>,
}

impl RealChainConfig {
    pub fn new(m: usize, burn_in: usize, mixing: MixingPreset) -> Self {
        Self { m, burn_in, mixing, initial_scales: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingPreset {
    /// Scales adapted during burn-in.
    Good,
    /// Scales adapted in a pilot burn-in, then multiplied by `factor` and frozen.
    Bad { factor: f64 },
}

impl MixingPreset {
    pub const DEFAULT_BAD_FACTOR: f64 = 7.0;

    pub fn bad() -> Self {
        Self::Bad { factor: Self::DEFAULT_BAD_FACTOR }
    }
}

/// Output of the real-data analysis.
#[derive(Debug, Clone)]
pub struct RealDataFit {
    pub chain: PosteriorChain,
    pub deltas: DeltaSeries,
    pub ppp: PppEstimate,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct CpppEstimate {
    pub value: f64,
    pub r: usize,
    pub replicates: Vec<ReplicateResult>,
    pub ppp_y: PppThreshold,
    pub real: PppEstimate,
    pub plan: CalibrationPlan,
    pub replicate_scales: Vec<f64>,
    pub seconds: f64,
}

/// Indices (0-based) of the posterior-predictive pairs used as calibration
/// replicates. Systematic thinning takes 1-based positions round(i·m/r).
pub fn draw_calibration_indices(m: usize, r: usize, thinning: Thinning, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if r == 0 || r > m {
        return domain(format!("cannot draw {r} calibration replicates from {m} pairs"));
    }
    Ok(match thinning {
        Thinning::Systematic => (1..=r).map(|i| (2 * i * m + r) / (2 * r) - 1).collect(),
        Thinning::Random => sample_indices(rng, m, r).into_vec(),
    })
}

/// Select calibration replicates from a stored posterior-predictive stream.
pub fn draw_calibration_replicates<D: Clone>(
    s2: &[(D, ParamPoint)],
    r: usize,
    thinning: Thinning,
    rng: &mut StreamRng,
) -> Result<Vec<(D, ParamPoint)>> {
    let idx = draw_calibration_indices(s2.len(), r, thinning, rng)?;
    Ok(idx.into_iter().map(|i| s2[i].clone()).collect())
}

/// Run the short chain for one calibration replicate, started at the θ that
/// generated it, with no burn-in.
#[allow(clippy::too_many_arguments)]
pub fn run_replicate<M: Model>(
    model: &M,
    index: usize,
    y_tilde: &M::Data,
    theta: &ParamPoint,
    policy: ChainLengthPolicy,
    scales: &[f64],
    default_max_iterations: usize,
    rng: &mut StreamRng,
) -> Result<ReplicateResult> {
    let mut sampler = RwSampler::new(model, y_tilde, theta.values(), scales)?;
    let mut deltas = Vec::new();
    let mut advance = |n: usize, deltas: &mut Vec<f64>, rng: &mut StreamRng| -> Result<()> {
        for _ in 0..n {
            sampler.step(rng);
            let th = sampler.theta();
            let y_star = model.simulate_predictive(th, y_tilde, rng);
            let i = deltas.len();
            deltas.push(delta(model, &y_star, th, y_tilde, i)?);
        }
        Ok(())
    };

    let mut own_ess = None;
    let mut ess_short = false;
    match policy {
        ChainLengthPolicy::Fixed { m_tilde } => advance(m_tilde, &mut deltas, rng)?,
        ChainLengthPolicy::EssTarget { target, max_iterations } => {
            let max = max_iterations.unwrap_or(default_max_iterations).max(target.ceil() as usize);
            let first = (target.ceil() as usize).max(ESS_EXTENSION).min(max);
            advance(first, &mut deltas, rng)?;
            loop {
                let bits: Vec<bool> = deltas.iter().map(|&d| d >= 0.0).collect();
                let e = ess_batch_means(&bits)?;
                own_ess = Some(e);
                if e.ess >= target {
                    break;
                }
                if deltas.len() >= max {
                    ess_short = true;
                    break;
                }
                advance(ESS_EXTENSION.min(max - deltas.len()), &mut deltas, rng)?;
            }
        }
    }

    let series = DeltaSeries::new(deltas, DeltaSource::Replicate(index))?;
    let est = ppp_hat(&indicator_chain(&series), PppVariant::AntiZero);
    Ok(ReplicateResult {
        index,
        generating_theta: theta.clone(),
        data_digest: y_tilde.digest(),
        m_tilde: est.m,
        k_tilde: est.k,
        ppp_hat: est.value,
        deltas: series,
        tau_hat: 1.0,
        own_ess,
        ess_short,
        stream: index as u64,
    })
}

/// (1/r) Σⱼ 1{k̃ⱼ ≤ m̃ⱼ · ppp_y}.
pub fn cppp_value(results: &[ReplicateResult], ppp_y: impl Into<PppThreshold>) -> f64 {
    let t = ppp_y.into();
    count_admitted(results.iter().map(|r| (r.k_tilde, r.m_tilde)), &t) as f64 / results.len() as f64
}

pub(crate) fn count_admitted(counts: impl Iterator<Item = (usize, usize)>, t: &PppThreshold) -> usize {
    counts.filter(|&(k, m)| t.admits(k, m)).count()
}

/// Assemble the cppp estimate from finished replicates.
pub fn cppp_hat(
    results: Vec<ReplicateResult>,
    ppp_y: PppThreshold,
    real: PppEstimate,
    plan: CalibrationPlan,
    replicate_scales: Vec<f64>,
    seconds: f64,
) -> Result<CpppEstimate> {
    if results.is_empty() {
        return domain("no calibration replicates");
    }
    if !(0.0..=1.0).contains(&ppp_y.value) {
        return domain(format!("observed ppp {} outside [0, 1]", ppp_y.value));
    }
    Ok(CpppEstimate {
        value: cppp_value(&results, ppp_y),
        r: results.len(),
        replicates: results,
        ppp_y,
        real,
        plan,
        replicate_scales,
        seconds,
    })
}

/// Fit the real data: chain, Δ stream, ppp̂ with ESS/τ.
pub fn fit_real_data<M: Model>(
    model: &M,
    data: &M::Data,
    config: &RealChainConfig,
    keep: impl FnOnce(usize, &mut StreamRng) -> Result<Vec<usize>>,
    seed: u64,
) -> Result<(RealDataFit, Vec<(M::Data, ParamPoint)>)> {
    let start = Instant::now();
    let mut rng = stream(seed, REAL_CHAIN_STREAM);
    let init = model.initial_point(data);
    let scales = config.initial_scales.clone().unwrap_or_else(|| model.default_proposal_scales(data));
    let chain = match config.mixing {
        MixingPreset::Good => {
            let spec = ChainSpec::new(config.m, config.burn_in, scales, true)?;
            run_rw_metropolis(model, data, &init, &spec, &mut rng)?
        }
        MixingPreset::Bad { factor } => {
            if !(factor.is_finite() && factor > 0.0) {
                return domain(format!("bad-mixing factor must be positive, got {factor}"));
            }
            let pilot_spec = ChainSpec::new(1, config.burn_in.max(1000), scales, true)?;
            let pilot = run_rw_metropolis(model, data, &init, &pilot_spec, &mut rng)?;
            let bad: Vec<f64> = pilot.scales.iter().map(|s| s * factor).collect();
            let spec = ChainSpec::new(config.m, config.burn_in, bad, false)?;
            run_rw_metropolis(model, data, &ParamPoint(pilot.last().to_vec()), &spec, &mut rng)?
        }
    };
    let mut thin_rng = stream(seed, THINNING_STREAM);
    let keep = keep(chain.len(), &mut thin_rng)?;
    let (deltas, pairs) = posterior_predictive_pairs(model, &chain, data, &keep, &mut rng)?;
    let ind = indicator_chain(&deltas);
    let mut ppp = ppp_hat(&ind, PppVariant::Plain);
    if deltas.len() >= crate::ppp::MIN_ESS_LENGTH {
        ppp = ppp.with_ess(ess_batch_means(ind.bits())?);
    }
    let fit = RealDataFit { chain, deltas, ppp, seconds: start.elapsed().as_secs_f64() };
    Ok((fit, pairs))
}

/// End-to-end cppp: real-data chain, calibration replicates in parallel on
/// per-replicate streams, transferred τ̂ for each replicate.
///
/// The result depends only on the inputs and `plan.master_seed`, never on
/// `plan.workers`.
pub fn orchestrate<M: Model>(
    model: &M,
    data: &M::Data,
    real: &RealChainConfig,
    plan: &CalibrationPlan,
    tau_buffer: f64,
) -> Result<(CpppEstimate, RealDataFit, TransferTable)> {
    plan.validate()?;
    let start = Instant::now();
    let report = validate_model(model, data, &mut stream(plan.master_seed, THINNING_STREAM - 1));
    if let Some(c) = report.failures().next() {
        return domain(format!("model validation failed ({}): {}", c.name, c.message));
    }
    let (fit, pairs) = fit_real_data(
        model,
        data,
        real,
        |m, rng| draw_calibration_indices(m, plan.r, plan.thinning, rng),
        plan.master_seed,
    )?;
    let table = TransferTable::new(&fit.deltas, tau_buffer)?;
    let default_max = default_max_iterations(plan.policy, &table);
    let scales = fit.chain.scales.clone();
    let pool = worker_pool(plan.workers)?;
    let results = pool.install(|| run_replicates(model, &pairs, plan.policy, &scales, default_max, plan.master_seed, &table))?;
    let threshold = PppThreshold::from_count(fit.ppp.k, fit.ppp.m);
    let est = cppp_hat(results, threshold, fit.ppp, plan.clone(), scales, start.elapsed().as_secs_f64())?;
    Ok((est, fit, table))
}

/// Cap on replicate length when the ESS-target policy leaves it open:
/// 10·target·τ̂(0.5).
pub fn default_max_iterations(policy: ChainLengthPolicy, tau: &impl TauSource) -> usize {
    match policy {
        ChainLengthPolicy::EssTarget { target, .. } => (10.0 * target * tau.tau(0.5)).ceil() as usize,
        ChainLengthPolicy::Fixed { m_tilde } => m_tilde,
    }
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))
}

/// Run every replicate on stream `j` of `seed` and fill τ̂ⱼ from `tau`.
/// Runs on the current rayon pool; output order follows `pairs`.
pub fn run_replicates<M: Model>(
    model: &M,
    pairs: &[(M::Data, ParamPoint)],
    policy: ChainLengthPolicy,
    scales: &[f64],
    default_max_iterations: usize,
    seed: u64,
    tau: &impl TauSource,
) -> Result<Vec<ReplicateResult>> {
    let results: Vec<Result<ReplicateResult>> = pairs
        .par_iter()
        .enumerate()
        .map(|(j, (y_tilde, theta))| {
            let mut rng = stream(seed, j as u64);
            let mut res = run_replicate(model, j, y_tilde, theta, policy, scales, default_max_iterations, &mut rng)
                .map_err(|e| Error::Replicate { index: j, source: Box::new(e) })?;
            res.tau_hat = tau.tau(res.ppp_hat);
            Ok(res)
        })
        .collect();
    results.into_iter().collect()
}

/// Replicate table with header `j,m_tilde,k_tilde,ppp_hat,tau_hat,ess_hat`.
pub fn write_replicate_csv<W: std::io::Write>(results: &[ReplicateResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "j,m_tilde,k_tilde,ppp_hat,tau_hat,ess_hat")?;
    for r in results {
        writeln!(out, "{},{},{},{},{},{}", r.index, r.m_tilde, r.k_tilde, r.ppp_hat, r.tau_hat, r.ess_hat())?;
    }
    Ok(())
}

/// Estimated calibration time (r·m̃/m)·t_ppp, without parallel speed-up.
pub fn cost_model(r: usize, m_tilde: usize, m: usize, t_ppp_seconds: f64) -> Result<f64> {
    if r == 0 || m_tilde == 0 || m == 0 || !(t_ppp_seconds > 0.0) {
        return domain("cost model inputs must be positive");
    }
    Ok(r as f64 * m_tilde as f64 / m as f64 * t_ppp_seconds)
}

/// Anti-zero ppp̂ for a raw count, re-exported for callers that only hold counts.
pub fn replicate_ppp(k_tilde: usize, m_tilde: usize) -> f64 {
    ppp_value(k_tilde, m_tilde, PppVariant::AntiZero)
}
