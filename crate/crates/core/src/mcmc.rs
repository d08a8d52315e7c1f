//! Componentwise random-walk Metropolis, an exact sampler for the normal
//! model, and the posterior-predictive Δ stream.

use std::io::Write;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{delta, standard_normal, DeltaSeries, DeltaSource, Model, ParamPoint};
use crate::rng::StreamRng;

/// Iterations per adaptation batch during burn-in.
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub proposal_scales: Vec<f64>,
    pub adapt: bool,
    pub adapt_target_rate: f64,
}

impl ChainSpec {
    pub fn new(n_iterations: usize, burn_in: usize, proposal_scales: Vec<f64>, adapt: bool) -> Result<Self> {
        let spec = Self { n_iterations, burn_in, proposal_scales, adapt, adapt_target_rate: 0.44 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_target_rate(mut self, rate: f64) -> Result<Self> {
        self.adapt_target_rate = rate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return domain("chain needs at least one retained iteration");
        }
        if self.proposal_scales.is_empty() {
            return domain("no proposal scales given");
        }
        if let Some(s) = self.proposal_scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return domain(format!("proposal scales must be positive and finite, got {s}"));
        }
        if !(self.adapt_target_rate > 0.0 && self.adapt_target_rate < 1.0) {
            return domain(format!("adaptation target must lie in (0, 1), got {}", self.adapt_target_rate));
        }
        Ok(())
    }
}

/// Retained draws of a posterior sampler run.
#[derive(Debug, Clone)]
pub struct PosteriorChain {
    pub names: Vec<String>,
    dim: usize,
    draws: Vec<f64>,
    /// Accepted component moves per retained iteration.
    pub accepted: Vec<u32>,
    pub acceptance_rate: f64,
    pub spec: ChainSpec,
    /// Proposal scales in force for every retained iteration.
    pub scales: Vec<f64>,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    pub fn param_point(&self, i: usize) -> ParamPoint {
        ParamPoint(self.draw(i).to_vec())
    }

    /// Column `j` across retained iterations.
    pub fn trace(&self, j: usize) -> Vec<f64> {
        self.draws().map(|d| d[j]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.draw(self.len() - 1)
    }

    /// CSV dump with header `iter,<param names>…,accepted`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "iter")?;
        for n in &self.names {
            write!(out, ",{n}")?;
        }
        writeln!(out, ",accepted")?;
        for (i, d) in self.draws().enumerate() {
            write!(out, "{}", i + 1)?;
            for v in d {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{}", self.accepted[i])?;
        }
        Ok(())
    }
}

/// One-at-a-time Gaussian random-walk Metropolis state. Exposed so callers
/// can interleave sampling with other per-iteration work.
pub struct RwSampler<'a, M: Model> {
    model: &'a M,
    data: &'a M::Data,
    theta: Vec<f64>,
    log_post: f64,
    scales: Vec<f64>,
    batch_accepts: Vec<usize>,
    batch_len: usize,
    batches_done: usize,
}

impl<'a, M: Model> RwSampler<'a, M> {
    pub fn new(model: &'a M, data: &'a M::Data, init: &[f64], scales: &[f64]) -> Result<Self> {
        if init.len() != scales.len() {
            return domain(format!(
                "initial point has {} entries but {} proposal scales were given",
                init.len(),
                scales.len()
            ));
        }
        let log_post = model.log_posterior(init, data);
        if !log_post.is_finite() {
            return domain(format!("log posterior at the initial point is {log_post}"));
        }
        Ok(Self {
            model,
            data,
            theta: init.to_vec(),
            log_post,
            scales: scales.to_vec(),
            batch_accepts: vec![0; init.len()],
            batch_len: 0,
            batches_done: 0,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// One sweep over all components; returns the number of accepted moves.
    pub fn step(&mut self, rng: &mut StreamRng) -> u32 {
        let mut accepted = 0;
        for j in 0..self.theta.len() {
            let old = self.theta[j];
            self.theta[j] = old + self.scales[j] * standard_normal(rng);
            let proposal = self.model.log_posterior(&self.theta, self.data);
            let log_u = rng.random::<f64>().ln();
            if proposal.is_finite() && log_u < proposal - self.log_post {
                self.log_post = proposal;
                self.batch_accepts[j] += 1;
                accepted += 1;
            } else {
                self.theta[j] = old;
            }
        }
        self.batch_len += 1;
        accepted
    }

    /// Sweep and then nudge each log-scale toward the target acceptance rate
    /// at batch boundaries, with step size shrinking over batches.
    pub fn adaptive_step(&mut self, rng: &mut StreamRng, target: f64) -> u32 {
        let accepted = self.step(rng);
        if self.batch_len == ADAPT_BATCH {
            self.batches_done += 1;
            let delta = (1.0 / (self.batches_done as f64).sqrt()).min(0.1);
            for j in 0..self.scales.len() {
                let rate = self.batch_accepts[j] as f64 / ADAPT_BATCH as f64;
                let factor = if rate > target { delta.exp() } else { (-delta).exp() };
                self.scales[j] *= factor;
                self.batch_accepts[j] = 0;
            }
            self.batch_len = 0;
        }
        accepted
    }

    fn reset_counters(&mut self) {
        self.batch_accepts.iter_mut().for_each(|a| *a = 0);
        self.batch_len = 0;
    }
}

/// Random-walk Metropolis targeting p(θ | data). With `spec.adapt`, scales
/// are tuned during burn-in only and frozen for the retained draws.
pub fn run_rw_metropolis<M: Model>(
    model: &M,
    data: &M::Data,
    init: &ParamPoint,
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<PosteriorChain> {
    spec.validate()?;
    let rng_seed = rng.get_seed();
    let rng_stream = rng.get_stream();
    let mut sampler = RwSampler::new(model, data, init.values(), &spec.proposal_scales)?;
    for _ in 0..spec.burn_in {
        if spec.adapt {
            sampler.adaptive_step(rng, spec.adapt_target_rate);
        } else {
            sampler.step(rng);
        }
    }
    sampler.reset_counters();
    let scales = sampler.scales().to_vec();
    let dim = init.len();
    let mut draws = Vec::with_capacity(spec.n_iterations * dim);
    let mut accepted = Vec::with_capacity(spec.n_iterations);
    for _ in 0..spec.n_iterations {
        accepted.push(sampler.step(rng));
        draws.extend_from_slice(sampler.theta());
    }
    debug_assert_eq!(sampler.scales(), scales.as_slice());
    let total: u64 = accepted.iter().map(|&a| a as u64).sum();
    Ok(PosteriorChain {
        names: model.param_names(),
        dim,
        acceptance_rate: total as f64 / (spec.n_iterations * dim) as f64,
        draws,
        accepted,
        spec: spec.clone(),
        scales,
        rng_seed,
        rng_stream,
    })
}

/// Independent draws of (μ, log σ) from the exact posterior of a normal
/// sample under a flat prior on (μ, log σ).
pub fn run_conjugate_normal(data: &[f64], m: usize, rng: &mut StreamRng) -> Result<PosteriorChain> {
    let n = data.len();
    if n < 2 {
        return domain("conjugate normal sampler needs at least two observations");
    }
    if m == 0 {
        return domain("need at least one draw");
    }
    let rng_seed = rng.get_seed();
    let rng_stream = rng.get_stream();
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let ss = data.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
    let chi = ChiSquared::new(nf - 1.0).expect("n >= 2");
    let mut draws = Vec::with_capacity(2 * m);
    for _ in 0..m {
        let sigma2 = ss / chi.sample(rng);
        let mu = mean + (sigma2 / nf).sqrt() * standard_normal(rng);
        draws.push(mu);
        draws.push(0.5 * sigma2.ln());
    }
    Ok(PosteriorChain {
        names: vec!["mu".into(), "log_sigma".into()],
        dim: 2,
        draws,
        accepted: vec![2; m],
        acceptance_rate: 1.0,
        spec: ChainSpec { n_iterations: m, burn_in: 0, proposal_scales: vec![1.0, 1.0], adapt: false, adapt_target_rate: 0.44 },
        scales: vec![],
        rng_seed,
        rng_stream,
    })
}

/// For each retained θᵢ draw y*ᵢ ~ p(y* | θᵢ) and record Δᵢ.
pub fn posterior_predictive_stream<M: Model>(
    model: &M,
    chain: &PosteriorChain,
    data: &M::Data,
    rng: &mut StreamRng,
) -> Result<DeltaSeries> {
    posterior_predictive_pairs(model, chain, data, &[], rng).map(|(s, _)| s)
}

/// Like [`posterior_predictive_stream`], additionally keeping the simulated
/// datasets (with their generating θ) at the requested iteration indices.
pub fn posterior_predictive_pairs<M: Model>(
    model: &M,
    chain: &PosteriorChain,
    data: &M::Data,
    keep: &[usize],
    rng: &mut StreamRng,
) -> Result<(DeltaSeries, Vec<(M::Data, ParamPoint)>)> {
    if chain.is_empty() {
        return domain("empty posterior chain");
    }
    if let Some(&bad) = keep.iter().find(|&&i| i >= chain.len()) {
        return domain(format!("requested pair {bad} beyond chain length {}", chain.len()));
    }
    let mut wanted = vec![Vec::new(); chain.len()];
    for (slot, &i) in keep.iter().enumerate() {
        wanted[i].push(slot);
    }
    let mut kept: Vec<Option<(M::Data, ParamPoint)>> = vec![None; keep.len()];
    let mut deltas = Vec::with_capacity(chain.len());
    for (i, theta) in chain.draws().enumerate() {
        let y_star = model.simulate_predictive(theta, data, rng);
        deltas.push(delta(model, &y_star, theta, data, i)?);
        for &slot in &wanted[i] {
            kept[slot] = Some((y_star.clone(), ParamPoint(theta.to_vec())));
        }
    }
    let series = DeltaSeries::new(deltas, DeltaSource::RealData)?;
    let pairs = kept.into_iter().map(|p| p.ok_or_else(|| Error::Domain("missing pair".into()))).collect::<Result<_>>()?;
    Ok((series, pairs))
}
