use std::path::Path;

use crate::error::{domain, Error, Result};
use crate::model::{digest_f64s, standard_normal, Dataset, Model, ParamPoint};
use crate::models::chi2::PointwiseMoments;
use crate::rng::StreamRng;

const CANONICAL: &str = include_str!("../../data/newcomb.txt");

/// Order statistics used by the discrepancy (1-indexed, ascending).
pub const LOW_ORDER: usize = 6;
pub const HIGH_ORDER: usize = 61;

/// A real-valued sample with cached summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct NewcombData {
    values: Vec<f64>,
    mean: f64,
    centered_ss: f64,
    /// (y_(6), y_(61)) when the sample has at least 61 values.
    order_stats: Option<(f64, f64)>,
}

impl NewcombData {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return domain("empty sample");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("sample contains non-finite values");
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let centered_ss = values.iter().map(|y| (y - mean).powi(2)).sum();
        let order_stats = if values.len() >= HIGH_ORDER {
            let mut scratch = values.clone();
            let (_, low, _) = scratch.select_nth_unstable_by(LOW_ORDER - 1, f64::total_cmp);
            let low = *low;
            let (_, high, _) = scratch.select_nth_unstable_by(HIGH_ORDER - 1, f64::total_cmp);
            Some((low, *high))
        } else {
            None
        };
        Ok(Self { values, mean, centered_ss, order_stats })
    }

    /// The 66 canonical measurements shipped with the crate.
    pub fn canonical() -> Self {
        let values = parse_reals(CANONICAL).expect("bundled data parses");
        Self::new(values).expect("bundled data is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(parse_reals(&text)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// One real per line; blank lines and `#` comments ignored.
pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Error::Parse { line: i + 1, message: format!("{line:?}: {e}") })?;
        out.push(v);
    }
    Ok(out)
}

impl Dataset for NewcombData {
    fn shape(&self) -> Vec<usize> {
        vec![self.values.len()]
    }

    fn digest(&self) -> u64 {
        digest_f64s(self.values.iter().copied())
    }
}

/// |y_(61) − μ| − |y_(6) − μ| with ascending 1-indexed order statistics.
pub fn newcomb_discrepancy(y: &[f64], mu: f64) -> Result<f64> {
    if y.len() < HIGH_ORDER {
        return domain(format!("discrepancy needs at least {HIGH_ORDER} values, got {}", y.len()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((sorted[HIGH_ORDER - 1] - mu).abs() - (sorted[LOW_ORDER - 1] - mu).abs())
}

/// Σ log N(yᵢ; μ, σ²) with σ = exp(log_sigma); the prior is flat in (μ, log σ).
pub fn newcomb_log_posterior(mu: f64, log_sigma: f64, y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return domain("need at least two observations");
    }
    let n = y.len() as f64;
    let ss: f64 = y.iter().map(|v| (v - mu).powi(2)).sum();
    Ok(log_normal_sum(n, ss, log_sigma))
}

/// Gradient of [`newcomb_log_posterior`] with respect to (μ, log σ).
pub fn newcomb_log_posterior_gradient(mu: f64, log_sigma: f64, y: &[f64]) -> [f64; 2] {
    let n = y.len() as f64;
    let inv_var = (-2.0 * log_sigma).exp();
    let resid: f64 = y.iter().map(|v| v - mu).sum();
    let ss: f64 = y.iter().map(|v| (v - mu).powi(2)).sum();
    [resid * inv_var, -n + ss * inv_var]
}

fn log_normal_sum(n: f64, ss: f64, log_sigma: f64) -> f64 {
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - n * log_sigma - 0.5 * ss * (-2.0 * log_sigma).exp()
}

/// Normal model with unknown (μ, log σ), flat prior, and the order-statistic
/// discrepancy sensitive to a heavy lower tail.
#[derive(Debug, Clone, Copy, Default)]
pub struct NewcombModel;

impl Model for NewcombModel {
    type Data = NewcombData;

    fn param_names(&self) -> Vec<String> {
        vec!["mu".into(), "log_sigma".into()]
    }

    fn dimension(&self) -> usize {
        2
    }

    fn log_posterior(&self, theta: &[f64], data: &NewcombData) -> f64 {
        let n = data.values.len() as f64;
        let ss = data.centered_ss + n * (data.mean - theta[0]).powi(2);
        log_normal_sum(n, ss, theta[1])
    }

    fn simulate_predictive(&self, theta: &[f64], template: &NewcombData, rng: &mut StreamRng) -> NewcombData {
        let sigma = theta[1].exp();
        let values = (0..template.len()).map(|_| theta[0] + sigma * standard_normal(rng)).collect();
        NewcombData::new(values).expect("finite draws")
    }

    fn discrepancy(&self, data: &NewcombData, theta: &[f64]) -> f64 {
        match data.order_stats {
            Some((low, high)) => (high - theta[0]).abs() - (low - theta[0]).abs(),
            None => f64::NAN,
        }
    }

    fn initial_point(&self, data: &NewcombData) -> ParamPoint {
        let sd = (data.centered_ss / (data.len() as f64 - 1.0).max(1.0)).sqrt().max(1e-8);
        ParamPoint(vec![data.mean, sd.ln()])
    }

    fn default_proposal_scales(&self, data: &NewcombData) -> Vec<f64> {
        let n = data.len() as f64;
        let sd = (data.centered_ss / (n - 1.0).max(1.0)).sqrt().max(1e-8);
        // Posterior SDs are roughly sd/√n for μ and 1/√(2n) for log σ.
        vec![2.4 * sd / n.sqrt(), 2.4 / (2.0 * n).sqrt()]
    }
}

impl PointwiseMoments for NewcombModel {
    type Data = NewcombData;

    fn moments(&self, data: &NewcombData, theta: &[f64]) -> Vec<(f64, f64)> {
        let var = (2.0 * theta[1]).exp();
        vec![(theta[0], var); data.len()]
    }
}
