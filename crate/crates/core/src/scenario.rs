//! Budget planning under a Beta null for ppp(Ỹ): k̃ is then Beta-Binomial,
//! so bias and variance of cppp̂ have closed forms for any (r, m̃).

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{beta_binomial_cdf, beta_cdf, beta_quantile, sample_beta, sample_binomial, BetaBinomialParams, BetaParams};
use crate::error::{domain, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub null_shape: BetaParams,
    pub cppp_true: f64,
    pub budget: usize,
    pub m_tilde_grid: Vec<usize>,
}

impl ScenarioSpec {
    pub fn new(null_shape: BetaParams, cppp_true: f64, budget: usize, m_tilde_grid: Vec<usize>) -> Result<Self> {
        let s = Self { null_shape, cppp_true, budget, m_tilde_grid };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cppp_true > 0.0 && self.cppp_true < 1.0) {
            return domain(format!("cppp_true must lie in (0, 1), got {}", self.cppp_true));
        }
        if self.budget == 0 {
            return domain("budget must be positive");
        }
        if let Some(&m) = self.m_tilde_grid.iter().find(|&&m| m == 0 || m > self.budget) {
            return domain(format!("m_tilde {m} must lie in [1, {}]", self.budget));
        }
        Ok(())
    }

    pub fn r_for(&self, m_tilde: usize) -> usize {
        self.budget / m_tilde
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub m_tilde: usize,
    pub r: usize,
    pub ppp_y: f64,
    pub abs_bias: f64,
    pub se: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub rows: Vec<ScenarioRow>,
}

impl ScenarioResult {
    /// Row with the smallest RMSE.
    pub fn best(&self) -> Option<&ScenarioRow> {
        self.rows.iter().min_by(|a, b| a.rmse.total_cmp(&b.rmse))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "m_tilde,r,ppp_y,abs_bias,se,rmse")?;
        for row in &self.rows {
            writeln!(out, "{},{},{},{},{},{}", row.m_tilde, row.r, row.ppp_y, row.abs_bias, row.se, row.rmse)?;
        }
        Ok(())
    }

    /// Layout for sweeps over r at fixed m̃.
    pub fn write_sweep_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "m_tilde,r,abs_bias,se,rmse")?;
        for row in &self.rows {
            writeln!(out, "{},{},{},{},{}", row.m_tilde, row.r, row.abs_bias, row.se, row.rmse)?;
        }
        Ok(())
    }
}

/// ppp_y = F⁻¹_Beta(cppp_true; a, b).
pub fn scenario_ppp_y(spec: &ScenarioSpec) -> Result<f64> {
    beta_quantile(spec.cppp_true, spec.null_shape)
}

/// F_BB(⌊m̃·ppp_y⌋; m̃, a, b).
fn expected_cppp(spec: &ScenarioSpec, ppp_y: f64, m_tilde: usize) -> Result<f64> {
    let bb = BetaBinomialParams::new(m_tilde as u64, spec.null_shape)?;
    Ok(beta_binomial_cdf((m_tilde as f64 * ppp_y).floor() as i64, bb))
}

/// E[cppp̂] − F_Beta(ppp_y).
pub fn scenario_bias(spec: &ScenarioSpec, m_tilde: usize) -> Result<f64> {
    if m_tilde == 0 {
        return domain("m_tilde must be at least 1");
    }
    let ppp_y = scenario_ppp_y(spec)?;
    Ok(expected_cppp(spec, ppp_y, m_tilde)? - beta_cdf(ppp_y, spec.null_shape)?)
}

/// F_BB(1 − F_BB)/r.
pub fn scenario_variance(spec: &ScenarioSpec, m_tilde: usize, r: usize) -> Result<f64> {
    if m_tilde == 0 || r == 0 {
        return domain("m_tilde and r must be at least 1");
    }
    let f = expected_cppp(spec, scenario_ppp_y(spec)?, m_tilde)?;
    Ok(f * (1.0 - f) / r as f64)
}

pub fn scenario_row(spec: &ScenarioSpec, m_tilde: usize, r: usize) -> Result<ScenarioRow> {
    let ppp_y = scenario_ppp_y(spec)?;
    let bias = scenario_bias(spec, m_tilde)?;
    let var = scenario_variance(spec, m_tilde, r)?;
    Ok(ScenarioRow { m_tilde, r, ppp_y, abs_bias: bias.abs(), se: var.sqrt(), rmse: (bias * bias + var).sqrt() })
}

/// One row per m̃ in the grid with r = ⌊c/m̃⌋.
pub fn scenario_grid(spec: &ScenarioSpec) -> Result<ScenarioResult> {
    spec.validate()?;
    if spec.m_tilde_grid.is_empty() {
        return domain("m_tilde grid is empty");
    }
    let rows = spec
        .m_tilde_grid
        .par_iter()
        .map(|&m| scenario_row(spec, m, spec.r_for(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult { rows })
}

/// Rows for a fixed m̃ and a list of replicate counts.
pub fn scenario_sweep_r(spec: &ScenarioSpec, m_tilde: usize, rs: &[usize]) -> Result<ScenarioResult> {
    spec.validate()?;
    let rows = rs.iter().map(|&r| scenario_row(spec, m_tilde, r)).collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioSimulation {
    pub n_outer: usize,
    pub mean: f64,
    pub empirical_bias: f64,
    pub empirical_var: f64,
    /// Monte Carlo SE of the empirical bias.
    pub bias_se: f64,
    /// Approximate Monte Carlo SE of the empirical variance.
    pub var_se: f64,
}

/// Brute-force version of the scenario: per outer repeat draw r ppp's from
/// the null, k̃ ~ Binomial(m̃, ppp), and form cppp̂.
pub fn scenario_simulate(spec: &ScenarioSpec, m_tilde: usize, r: usize, n_outer: usize, seed: u64) -> Result<ScenarioSimulation> {
    if n_outer < 100 {
        return domain(format!("n_outer must be at least 100, got {n_outer}"));
    }
    if m_tilde == 0 || r == 0 {
        return domain("m_tilde and r must be at least 1");
    }
    let ppp_y = scenario_ppp_y(spec)?;
    let limit = m_tilde as f64 * ppp_y;
    let seed = derive_seed(seed, m_tilde as u64 ^ ((r as u64) << 32));
    let draws: Vec<f64> = (0..n_outer)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let hits = (0..r)
                .filter(|_| {
                    let p = sample_beta(spec.null_shape, &mut rng);
                    sample_binomial(m_tilde as u64, p, &mut rng) as f64 <= limit
                })
                .count();
            hits as f64 / r as f64
        })
        .collect();
    let n = n_outer as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let truth = beta_cdf(ppp_y, spec.null_shape)?;
    Ok(ScenarioSimulation {
        n_outer,
        mean,
        empirical_bias: mean - truth,
        empirical_var: var,
        bias_se: (var / n).sqrt(),
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(a: f64, b: f64, cppp: f64, budget: usize, grid: Vec<usize>) -> ScenarioSpec {
        ScenarioSpec::new(BetaParams::new(a, b).unwrap(), cppp, budget, grid).unwrap()
    }

    #[test]
    fn ppp_y_examples() {
        assert!((scenario_ppp_y(&spec(2.0, 2.0, 0.5, 100, vec![10])).unwrap() - 0.5).abs() < 1e-12);
        // Beta(2,2) CDF 3x² − 2x³ at 0.2 is 0.104.
        assert!((scenario_ppp_y(&spec(2.0, 2.0, 0.104, 100, vec![10])).unwrap() - 0.2).abs() < 1e-10);
        assert!((scenario_ppp_y(&spec(1.0, 1.0, 0.37, 100, vec![10])).unwrap() - 0.37).abs() < 1e-12);
    }

    #[test]
    fn uniform_closed_forms() {
        // Beta-Binomial(10, 1, 1) is uniform on 0..=10, so F(5) = 6/11.
        let s = spec(1.0, 1.0, 0.5, 1000, vec![10]);
        assert!((scenario_bias(&s, 10).unwrap() - (6.0 / 11.0 - 0.5)).abs() < 1e-12);
        let v = scenario_variance(&s, 10, 100).unwrap();
        assert!((v - 6.0 / 11.0 * 5.0 / 11.0 / 100.0).abs() < 1e-14);
        assert!((v.sqrt() - 0.0498).abs() < 1e-4);
        assert!((scenario_variance(&s, 10, 200).unwrap() - v / 2.0).abs() < 1e-16);
        assert!(scenario_bias(&s, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bias_vanishes_for_long_chains() {
        let s = spec(2.0, 2.0, 0.2, 1_000_000, vec![100_000]);
        assert!(scenario_bias(&s, 100_000).unwrap().abs() < 0.005);
    }

    #[test]
    fn grid_shape() {
        let grid = vec![10, 20, 50, 100, 200, 500, 1000];
        let s = spec(2.0, 2.0, 0.2, 20_000, grid.clone());
        let res = scenario_grid(&s).unwrap();
        assert_eq!(res.rows.len(), 7);
        let at = |m: usize| res.rows.iter().find(|r| r.m_tilde == m).unwrap().rmse;
        // Reference values from an independent Beta-Binomial implementation.
        for (m, rmse) in [(10, 0.009415922267951085), (100, 0.02852787219821255), (1000, 0.08960890798160814)] {
            assert!((at(m) - rmse).abs() < 1e-9, "m̃ {m}: {}", at(m));
        }
        for row in &res.rows {
            assert_eq!(row.r, 20_000 / row.m_tilde);
            assert!((row.rmse.powi(2) - (row.abs_bias.powi(2) + row.se.powi(2))).abs() < 1e-12);
        }
        let doubled = scenario_grid(&spec(2.0, 2.0, 0.2, 40_000, grid)).unwrap();
        for (a, b) in res.rows.iter().zip(&doubled.rows) {
            assert_eq!(a.abs_bias, b.abs_bias);
            assert!((b.se - a.se / 2f64.sqrt()).abs() < 1e-12 * a.se.max(1e-300));
        }
        let single = scenario_grid(&spec(2.0, 2.0, 0.2, 100, vec![50])).unwrap();
        assert_eq!(single.rows.len(), 1);
    }

    #[test]
    fn sweep_bias_constant_in_r() {
        let s = spec(2.0, 5.0, 0.05, 100_000, vec![100]);
        let sw = scenario_sweep_r(&s, 100, &[10, 100, 1000]).unwrap();
        assert!(sw.rows.windows(2).all(|w| w[0].abs_bias == w[1].abs_bias));
        let mut buf = Vec::new();
        sw.write_sweep_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m_tilde,r,abs_bias,se,rmse\n100,10,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn spec_validation() {
        let shape = BetaParams::new(2.0, 2.0).unwrap();
        assert!(ScenarioSpec::new(shape, 0.0, 10, vec![5]).is_err());
        assert!(ScenarioSpec::new(shape, 0.3, 10, vec![11]).is_err());
        assert!(ScenarioSpec::new(shape, 0.3, 10, vec![0]).is_err());
        assert!(scenario_grid(&ScenarioSpec::new(shape, 0.3, 10, vec![]).unwrap()).is_err());
    }

    #[test]
    fn simulation_matches_analytic() {
        let s = spec(2.0, 2.0, 0.2, 5000, vec![50]);
        let sim = scenario_simulate(&s, 50, 100, 2000, 42).unwrap();
        let bias = scenario_bias(&s, 50).unwrap();
        let var = scenario_variance(&s, 50, 100).unwrap();
        assert!((sim.empirical_bias - bias).abs() < 3.0 * sim.bias_se, "{sim:?} vs {bias}");
        assert!((sim.empirical_var - var).abs() < 3.0 * sim.var_se, "{sim:?} vs {var}");
        let again = scenario_simulate(&s, 50, 100, 2000, 42).unwrap();
        assert_eq!(sim, again);
    }

    #[test]
    fn single_trial_uniform() {
        let s = spec(1.0, 1.0, 0.5, 100, vec![1]);
        assert!(scenario_bias(&s, 1).unwrap().abs() < 1e-12);
        let sim = scenario_simulate(&s, 1, 100, 1000, 7).unwrap();
        assert!(sim.empirical_bias.abs() < 3.0 * sim.bias_se);
        assert!(scenario_simulate(&s, 1, 100, 99, 7).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn rmse_identity_and_scaling(a in 0.3f64..8.0, b in 0.3f64..8.0, c in 0.01f64..0.99, m in 1usize..400, r in 1usize..500) {
                let s = spec(a, b, c, 1_000_000, vec![m]);
                let row = scenario_row(&s, m, r).unwrap();
                prop_assert!((row.rmse.powi(2) - row.abs_bias.powi(2) - row.se.powi(2)).abs() < 1e-12);
                let v2 = scenario_variance(&s, m, 2 * r).unwrap();
                prop_assert!((2.0 * v2 - row.se.powi(2)).abs() < 1e-15);
                prop_assert!(row.se.powi(2) <= 0.25 / r as f64 + 1e-15);
            }
        }
    }
}
