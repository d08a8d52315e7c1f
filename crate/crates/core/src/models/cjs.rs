//! Cormack-Jolly-Seber capture-recapture.
//!
//! Occasions are 0-based in code (occasion `o` is occasion `o + 1` in the
//! usual 1-based notation). Survival `phi[o]` is the probability of surviving from `o` to
//! `o + 1`; capture `p[o - 1]` is the probability of being seen at `o >= 1`.

use std::path::Path;

use rand::Rng;

use crate::dist::sample_binomial;
use crate::error::{domain, Error, Result};
use crate::model::{Dataset, Model, ParamPoint};
use crate::rng::StreamRng;

/// Binary capture histories conditioned on first capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureHistoryMatrix {
    k: usize,
    histories: Vec<Vec<bool>>,
    first_capture: Vec<usize>,
}

impl CaptureHistoryMatrix {
    pub fn new(histories: Vec<Vec<bool>>) -> Result<Self> {
        let Some(k) = histories.first().map(|h| h.len()) else {
            return domain("no capture histories");
        };
        if k < 2 {
            return domain("need at least two occasions");
        }
        let mut first_capture = Vec::with_capacity(histories.len());
        for (i, h) in histories.iter().enumerate() {
            if h.len() != k {
                return domain(format!("history {i} has {} occasions, expected {k}", h.len()));
            }
            match h.iter().position(|&c| c) {
                Some(f) => first_capture.push(f),
                None => return domain(format!("history {i} has no captures")),
            }
        }
        Ok(Self { k, histories, first_capture })
    }

    pub fn n(&self) -> usize {
        self.histories.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn histories(&self) -> &[Vec<bool>] {
        &self.histories
    }

    /// 0-based first-capture occasion per individual.
    pub fn first_capture(&self) -> &[usize] {
        &self.first_capture
    }

    /// Number of individuals first captured at each occasion.
    pub fn new_releases(&self) -> Vec<u64> {
        let mut out = vec![0; self.k];
        for &f in &self.first_capture {
            out[f] += 1;
        }
        out
    }
}

/// Parse the ASCII capture-history format: one history per line of `0`/`1`
/// characters, optional whitespace-separated multiplicity, `#` comments.
pub fn parse_capture_histories(text: &str) -> Result<CaptureHistoryMatrix> {
    let mut histories = Vec::new();
    let mut k = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut fields = line.split_whitespace();
        let pattern = fields.next().expect("non-empty line");
        let count: usize = match fields.next() {
            Some(c) => c
                .parse()
                .ok()
                .filter(|&c: &usize| c > 0)
                .ok_or_else(|| err(format!("multiplicity {c:?} is not a positive integer")))?,
            None => 1,
        };
        if fields.next().is_some() {
            return Err(err("trailing fields".into()));
        }
        let history: Vec<bool> = pattern
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(err(format!("non-binary symbol {other:?}"))),
            })
            .collect::<Result<_>>()?;
        if !history.iter().any(|&c| c) {
            return Err(err("history has no captures".into()));
        }
        match k {
            None => k = Some(history.len()),
            Some(k) if k != history.len() => {
                return Err(err(format!("history has {} occasions, expected {k}", history.len())))
            }
            _ => {}
        }
        histories.extend(std::iter::repeat_n(history, count));
    }
    CaptureHistoryMatrix::new(histories)
}

pub fn load_capture_histories(path: impl AsRef<Path>) -> Result<CaptureHistoryMatrix> {
    parse_capture_histories(&std::fs::read_to_string(path)?)
}

/// Survival and capture probabilities, always stored time-varying
/// (a time-constant model repeats one value).
#[derive(Debug, Clone, PartialEq)]
pub struct CjsParams {
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
}

impl CjsParams {
    pub fn new(phi: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if phi.is_empty() || phi.len() != p.len() {
            return domain(format!("need k-1 survival and k-1 capture probabilities, got {} and {}", phi.len(), p.len()));
        }
        if let Some(v) = phi.iter().chain(&p).find(|v| !(0.0..=1.0).contains(*v)) {
            return domain(format!("probability {v} outside [0, 1]"));
        }
        Ok(Self { phi, p })
    }

    pub fn constant(k: usize, phi: f64, p: f64) -> Result<Self> {
        Self::new(vec![phi; k - 1], vec![p; k - 1])
    }

    pub fn k(&self) -> usize {
        self.phi.len() + 1
    }

    /// Capture probability at 0-based occasion `o >= 1`.
    fn capture(&self, o: usize) -> f64 {
        self.p[o - 1]
    }
}

/// Log-likelihood by the two-state (alive/dead) forward algorithm, one
/// individual at a time, conditioned on first capture.
pub fn cjs_log_likelihood(params: &CjsParams, data: &CaptureHistoryMatrix) -> Result<f64> {
    if params.k() != data.k() {
        return domain(format!("parameters for {} occasions, data has {}", params.k(), data.k()));
    }
    let mut total = 0.0;
    for (h, &f) in data.histories.iter().zip(&data.first_capture) {
        let (mut alive, mut dead) = (1.0_f64, 0.0_f64);
        for o in f + 1..data.k {
            let survive = params.phi[o - 1];
            dead += alive * (1.0 - survive);
            alive *= survive;
            let p = params.capture(o);
            if h[o] {
                alive *= p;
                dead = 0.0;
            } else {
                alive *= 1.0 - p;
            }
        }
        total += (alive + dead).ln();
    }
    Ok(total)
}

/// Forward-simulate histories: `release_schedule[o]` new individuals are
/// first captured at occasion `o`.
pub fn cjs_simulate<R: Rng + ?Sized>(params: &CjsParams, release_schedule: &[u64], rng: &mut R) -> Result<CaptureHistoryMatrix> {
    let k = params.k();
    if release_schedule.len() != k {
        return domain(format!("release schedule has {} occasions, expected {k}", release_schedule.len()));
    }
    let mut histories = Vec::new();
    for (f, &count) in release_schedule.iter().enumerate() {
        for _ in 0..count {
            let mut h = vec![false; k];
            h[f] = true;
            let mut alive = true;
            for o in f + 1..k {
                alive = alive && rng.random::<f64>() < params.phi[o - 1];
                h[o] = alive && rng.random::<f64>() < params.capture(o);
            }
            histories.push(h);
        }
    }
    CaptureHistoryMatrix::new(histories)
}

/// Releases and first recaptures. Every capture before the last occasion is
/// a release, so an individual contributes one release per capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MArray {
    k: usize,
    /// `counts[s][t]` first recaptures at `t` of releases at `s` (t > s).
    counts: Vec<Vec<u64>>,
    never_seen: Vec<u64>,
}

impl MArray {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Release occasions are `0..k-1`.
    pub fn releases(&self) -> Vec<u64> {
        (0..self.k - 1).map(|s| self.counts[s].iter().sum::<u64>() + self.never_seen[s]).collect()
    }

    pub fn count(&self, s: usize, t: usize) -> u64 {
        self.counts[s][t]
    }

    pub fn never_seen(&self) -> &[u64] {
        &self.never_seen
    }

    fn empty(k: usize) -> Self {
        Self { k, counts: vec![vec![0; k]; k - 1], never_seen: vec![0; k - 1] }
    }
}

pub fn build_marray(data: &CaptureHistoryMatrix) -> MArray {
    let k = data.k;
    let mut out = MArray::empty(k);
    for h in &data.histories {
        let captures: Vec<usize> = (0..k).filter(|&o| h[o]).collect();
        for w in captures.windows(2) {
            out.counts[w[0]][w[1]] += 1;
        }
        if let Some(&last) = captures.last() {
            if last < k - 1 {
                out.never_seen[last] += 1;
            }
        }
    }
    out
}

/// Cell probabilities q[s][t] of first recapture at t after release at s,
/// plus the never-seen-again probability per release occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct MArrayProbabilities {
    pub q: Vec<Vec<f64>>,
    pub never_seen: Vec<f64>,
}

pub fn marray_probabilities(params: &CjsParams) -> MArrayProbabilities {
    let k = params.k();
    let mut q = vec![vec![0.0; k]; k - 1];
    for (s, row) in q.iter_mut().enumerate() {
        let mut missed = 1.0;
        for t in s + 1..k {
            row[t] = missed * params.phi[t - 1] * params.capture(t);
            missed *= params.phi[t - 1] * (1.0 - params.capture(t));
        }
    }
    // χ_s = (1 − φ_s) + φ_s (1 − p_{s+1}) χ_{s+1}, with χ at the last occasion = 1.
    let mut never_seen = vec![0.0; k - 1];
    let mut chi = 1.0;
    for s in (0..k - 1).rev() {
        chi = (1.0 - params.phi[s]) + params.phi[s] * (1.0 - params.capture(s + 1)) * chi;
        never_seen[s] = chi;
    }
    MArrayProbabilities { q, never_seen }
}

/// e[s][t] = R_s · q[s][t].
pub fn expected_marray(params: &CjsParams, releases: &[u64]) -> Result<Vec<Vec<f64>>> {
    if releases.len() + 1 != params.k() {
        return domain(format!("{} release counts for {} occasions", releases.len(), params.k()));
    }
    let probs = marray_probabilities(params);
    Ok(probs
        .q
        .iter()
        .zip(releases)
        .map(|(row, &r)| row.iter().map(|q| r as f64 * q).collect())
        .collect())
}

/// Σ_{s<t} (√z_st − √e_st)².
pub fn freeman_tukey(z: &MArray, e: &[Vec<f64>]) -> Result<f64> {
    if e.len() != z.k - 1 || e.iter().any(|row| row.len() != z.k) {
        return domain("expected-count table does not match the m-array");
    }
    let mut total = 0.0;
    for s in 0..z.k - 1 {
        for t in s + 1..z.k {
            total += ((z.counts[s][t] as f64).sqrt() - e[s][t].sqrt()).powi(2);
        }
    }
    Ok(total)
}

/// Log-likelihood from the m-array (product-multinomial form). Equal to
/// [`cjs_log_likelihood`] on the histories the m-array summarizes.
pub fn marray_log_likelihood(params: &CjsParams, z: &MArray) -> f64 {
    let probs = marray_probabilities(params);
    let mut total = 0.0;
    for s in 0..z.k - 1 {
        for t in s + 1..z.k {
            let c = z.counts[s][t];
            if c > 0 {
                total += c as f64 * probs.q[s][t].ln();
            }
        }
        if z.never_seen[s] > 0 {
            total += z.never_seen[s] as f64 * probs.never_seen[s].ln();
        }
    }
    total
}

/// Capture-recapture data as the model sees it: the m-array plus design.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CjsData {
    marray: MArray,
    new_releases: Vec<u64>,
}

impl CjsData {
    pub fn from_histories(h: &CaptureHistoryMatrix) -> Self {
        Self { marray: build_marray(h), new_releases: h.new_releases() }
    }

    pub fn marray(&self) -> &MArray {
        &self.marray
    }

    pub fn new_releases(&self) -> &[u64] {
        &self.new_releases
    }

    pub fn n(&self) -> u64 {
        self.new_releases.iter().sum()
    }
}

impl Dataset for CjsData {
    fn shape(&self) -> Vec<usize> {
        vec![self.n() as usize, self.marray.k]
    }

    fn is_consistent(&self) -> bool {
        // Releases at s are new individuals plus recaptures arriving at s.
        let releases = self.marray.releases();
        (0..self.marray.k - 1).all(|s| {
            let arrivals: u64 = (0..s).map(|u| self.marray.counts[u][s]).sum();
            releases[s] == self.new_releases[s] + arrivals
        })
    }

    fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.marray.counts.hash(&mut h);
        self.marray.never_seen.hash(&mut h);
        self.new_releases.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CjsVariant {
    /// Constant survival and capture (C/C).
    Constant,
    /// Time-varying survival and capture (T/T).
    TimeVarying,
}

/// CJS model with uniform priors on every probability, sampled on the logit
/// scale. Latent alive states are summed out of the likelihood.
#[derive(Debug, Clone, Copy)]
pub struct CjsModel {
    pub variant: CjsVariant,
    pub k: usize,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl CjsModel {
    pub fn new(variant: CjsVariant, k: usize) -> Self {
        Self { variant, k }
    }

    pub fn params(&self, theta: &[f64]) -> CjsParams {
        let probs: Vec<f64> = theta.iter().map(|&x| logistic(x)).collect();
        match self.variant {
            CjsVariant::Constant => CjsParams { phi: vec![probs[0]; self.k - 1], p: vec![probs[1]; self.k - 1] },
            CjsVariant::TimeVarying => {
                let (phi, p) = probs.split_at(self.k - 1);
                CjsParams { phi: phi.to_vec(), p: p.to_vec() }
            }
        }
    }

    /// Inverse of [`CjsModel::params`] for probabilities in (0, 1).
    pub fn theta(&self, params: &CjsParams) -> ParamPoint {
        match self.variant {
            CjsVariant::Constant => ParamPoint(vec![logit(params.phi[0]), logit(params.p[0])]),
            CjsVariant::TimeVarying => ParamPoint(params.phi.iter().chain(&params.p).map(|&v| logit(v)).collect()),
        }
    }
}

impl Model for CjsModel {
    type Data = CjsData;

    fn param_names(&self) -> Vec<String> {
        match self.variant {
            CjsVariant::Constant => vec!["logit_phi".into(), "logit_p".into()],
            CjsVariant::TimeVarying => (1..self.k)
                .map(|s| format!("logit_phi{s}"))
                .chain((2..=self.k).map(|t| format!("logit_p{t}")))
                .collect(),
        }
    }

    fn dimension(&self) -> usize {
        match self.variant {
            CjsVariant::Constant => 2,
            CjsVariant::TimeVarying => 2 * (self.k - 1),
        }
    }

    fn log_posterior(&self, theta: &[f64], data: &CjsData) -> f64 {
        // Uniform prior on each probability: log-Jacobian of the logistic map
        // is log p + log(1 − p) = −softplus(x) − softplus(−x).
        let jacobian: f64 = theta.iter().map(|&x| -softplus(x) - softplus(-x)).sum();
        marray_log_likelihood(&self.params(theta), &data.marray) + jacobian
    }

    /// Simulates at the m-array level: release cohorts are split into
    /// first-recapture cells by sequential binomial draws, which has the same
    /// law as the m-array of individually simulated histories.
    fn simulate_predictive(&self, theta: &[f64], template: &CjsData, rng: &mut StreamRng) -> CjsData {
        let k = self.k;
        let params = self.params(theta);
        let probs = marray_probabilities(&params);
        let mut marray = MArray::empty(k);
        let mut arrivals = vec![0u64; k];
        for s in 0..k - 1 {
            let mut remaining = template.new_releases[s] + arrivals[s];
            let mut mass_left = 1.0;
            for t in s + 1..k {
                if remaining == 0 {
                    break;
                }
                let q = probs.q[s][t];
                let cond = if mass_left > 0.0 { (q / mass_left).clamp(0.0, 1.0) } else { 0.0 };
                let c = sample_binomial(remaining, cond, rng);
                marray.counts[s][t] = c;
                arrivals[t] += c;
                remaining -= c;
                mass_left -= q;
            }
            marray.never_seen[s] = remaining;
        }
        CjsData { marray, new_releases: template.new_releases.clone() }
    }

    fn discrepancy(&self, data: &CjsData, theta: &[f64]) -> f64 {
        let e = expected_marray(&self.params(theta), &data.marray.releases()).expect("shapes agree");
        freeman_tukey(&data.marray, &e).expect("shapes agree")
    }

    fn initial_point(&self, _data: &CjsData) -> ParamPoint {
        self.theta(&CjsParams::constant(self.k, 0.6, 0.8).expect("valid"))
    }

    fn default_proposal_scales(&self, _data: &CjsData) -> Vec<f64> {
        match self.variant {
            CjsVariant::Constant => vec![0.25, 0.4],
            CjsVariant::TimeVarying => vec![0.6; self.dimension()],
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Release design mimicking the dipper study (294 individuals, 7 occasions).
pub const SIMULATED_RELEASES: [u64; 7] = [22, 42, 45, 48, 48, 47, 42];
pub const SIMULATED_PHI: [f64; 6] = [0.72, 0.45, 0.48, 0.62, 0.60, 0.70];
pub const SIMULATED_P: [f64; 6] = [0.67, 0.87, 0.88, 0.88, 0.91, 0.90];
/// Seed of the bundled simulated T/T dataset.
pub const SIMULATED_SEED: u64 = 28;

/// The simulated time-varying dataset used as an acceptable-fit example.
pub fn simulated_tt_histories(seed: u64) -> CaptureHistoryMatrix {
    let params = CjsParams::new(SIMULATED_PHI.to_vec(), SIMULATED_P.to_vec()).expect("valid");
    cjs_simulate(&params, &SIMULATED_RELEASES, &mut crate::rng::stream(seed, 0)).expect("valid schedule")
}
