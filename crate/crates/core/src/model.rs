//! The contract a Bayesian model implements to be checked: unnormalized
//! posterior density, posterior-predictive simulation, and a discrepancy.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// A point in parameter space, on the model's (unconstrained) sampling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Observation containers expose a shape so simulated data can be checked
/// against the observed data it is supposed to mimic.
pub trait Dataset: Clone + Send + Sync {
    /// Size metadata, e.g. `[n]` for a vector or `[n, k]` for a matrix.
    fn shape(&self) -> Vec<usize>;

    /// Whether the payload agrees with its own metadata.
    fn is_consistent(&self) -> bool {
        true
    }

    /// Stable content digest, recorded alongside calibration replicates.
    fn digest(&self) -> u64;
}

/// Everything the checking pipeline needs from a model.
///
/// Implementations are immutable after construction and shared read-only
/// across replicate workers.
pub trait Model: Send + Sync {
    type Data: Dataset;

    fn param_names(&self) -> Vec<String>;

    fn dimension(&self) -> usize {
        self.param_names().len()
    }

    /// Log posterior up to an additive constant, including any Jacobian of
    /// the sampling-scale transform.
    fn log_posterior(&self, theta: &[f64], data: &Self::Data) -> f64;

    /// Draw y* ~ p(y* | θ). `template` is the dataset being conditioned on;
    /// it supplies design information (sample size, release schedule).
    fn simulate_predictive(&self, theta: &[f64], template: &Self::Data, rng: &mut StreamRng) -> Self::Data;

    /// D(y, θ).
    fn discrepancy(&self, data: &Self::Data, theta: &[f64]) -> f64;

    fn initial_point(&self, data: &Self::Data) -> ParamPoint;

    /// Proposal scales that mix reasonably, used as adaptation starting values.
    fn default_proposal_scales(&self, data: &Self::Data) -> Vec<f64> {
        let _ = data;
        vec![0.1; self.dimension()]
    }
}

/// Where a Δ series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaSource {
    RealData,
    Replicate(usize),
}

/// Δᵢ = D(y*ᵢ, θᵢ) − D(y, θᵢ) in MCMC iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    deltas: Vec<f64>,
    source: DeltaSource,
}

impl DeltaSeries {
    pub fn new(deltas: Vec<f64>, source: DeltaSource) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::Domain("delta series must be non-empty".into()));
        }
        if let Some(index) = deltas.iter().position(|d| !d.is_finite()) {
            return Err(Error::Numeric {
                index,
                message: format!("non-finite discrepancy difference {}", deltas[index]),
            });
        }
        Ok(Self { deltas, source })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn source(&self) -> DeltaSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// D(y*, θ) − D(y, θ). `index` labels the iteration in error reports.
pub fn delta<M: Model>(model: &M, y_star: &M::Data, theta: &[f64], y: &M::Data, index: usize) -> Result<f64> {
    let d_star = model.discrepancy(y_star, theta);
    let d_obs = model.discrepancy(y, theta);
    let d = d_star - d_obs;
    if d.is_nan() {
        return Err(Error::Numeric {
            index,
            message: format!("discrepancy evaluated to NaN (D(y*)={d_star}, D(y)={d_obs})"),
        });
    }
    Ok(d)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Sanity checks run before an expensive calibration. Failures are reported,
/// never raised.
pub fn validate_model<M: Model>(model: &M, data: &M::Data, rng: &mut StreamRng) -> ValidationReport {
    let mut checks = Vec::new();
    let names = model.param_names();
    let init = model.initial_point(data);

    let unique: HashSet<&String> = names.iter().collect();
    let dim_ok = names.len() == model.dimension() && init.len() == names.len() && unique.len() == names.len();
    checks.push(Check {
        name: "parameter_dimension",
        passed: dim_ok,
        message: format!(
            "{} names ({} unique), dimension {}, initial point length {}",
            names.len(),
            unique.len(),
            model.dimension(),
            init.len()
        ),
    });

    checks.push(Check {
        name: "data_consistency",
        passed: data.is_consistent(),
        message: format!("observed data shape {:?}", data.shape()),
    });

    let lp = if dim_ok && init.is_finite() { model.log_posterior(init.values(), data) } else { f64::NAN };
    checks.push(Check {
        name: "log_posterior_finite",
        passed: lp.is_finite(),
        message: format!("log posterior at initial point = {lp}"),
    });

    if dim_ok {
        let y_star = model.simulate_predictive(init.values(), data, rng);
        let same_shape = y_star.shape() == data.shape() && y_star.is_consistent();
        let d_star = model.discrepancy(&y_star, init.values());
        let d_obs = model.discrepancy(data, init.values());
        let passed = same_shape && d_star.is_finite() && d_obs.is_finite();
        checks.push(Check {
            name: "simulate_discrepancy_round_trip",
            passed,
            message: format!(
                "simulated shape {:?} vs observed {:?}; D(y*)={d_star}, D(y)={d_obs}",
                y_star.shape(),
                data.shape()
            ),
        });
    } else {
        checks.push(Check {
            name: "simulate_discrepancy_round_trip",
            passed: false,
            message: "skipped: parameter dimension inconsistent".into(),
        });
    }

    ValidationReport { checks }
}

/// Hash helper for [`Dataset::digest`] implementations.
pub fn digest_f64s(values: impl IntoIterator<Item = f64>) -> u64 {
    use std::hash::Hasher;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in values {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

pub(crate) fn standard_normal(rng: &mut StreamRng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}


#[cfg(test)]
pub(crate) mod sticky {
    //! Flat target on [−1, 1] with Δ = θ: small proposals give a slowly
    //! switching indicator chain.
    use super::testing::Vector;
    use super::*;

    pub struct StickyWalk;

    impl Model for StickyWalk {
        type Data = Vector;

        fn param_names(&self) -> Vec<String> {
            vec!["theta".into()]
        }

        fn log_posterior(&self, theta: &[f64], _data: &Vector) -> f64 {
            if theta[0].abs() <= 1.0 { 0.0 } else { f64::NEG_INFINITY }
        }

        fn simulate_predictive(&self, theta: &[f64], _template: &Vector, _rng: &mut StreamRng) -> Vector {
            Vector(vec![theta[0]])
        }

        fn discrepancy(&self, data: &Vector, _theta: &[f64]) -> f64 {
            data.0[0]
        }

        fn initial_point(&self, _data: &Vector) -> ParamPoint {
            ParamPoint(vec![0.0])
        }
    }
}
