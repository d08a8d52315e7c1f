//! Generalized χ² discrepancy Σ (yᵢ − E[yᵢ|θ])² / V[yᵢ|θ].

use crate::error::{domain, Result};

/// Models that can report per-datum conditional mean and variance.
pub trait PointwiseMoments {
    type Data;
    fn moments(&self, data: &Self::Data, theta: &[f64]) -> Vec<(f64, f64)>;
}

pub fn chi2_discrepancy(y: &[f64], moments: &[(f64, f64)]) -> Result<f64> {
    if y.len() != moments.len() {
        return domain(format!("{} observations but {} moment pairs", y.len(), moments.len()));
    }
    let mut total = 0.0;
    for (i, (&v, &(mean, var))) in y.iter().zip(moments).enumerate() {
        if !(var > 0.0) {
            return domain(format!("conditional variance of datum {i} is {var}"));
        }
        total += (v - mean).powi(2) / var;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal;
    use crate::models::newcomb::{NewcombData, NewcombModel};
    use crate::rng::stream;

    #[test]
    fn zero_at_conditional_mean() {
        assert_eq!(chi2_discrepancy(&[1.0, 2.0], &[(1.0, 3.0), (2.0, 0.5)]).unwrap(), 0.0);
    }

    #[test]
    fn quadrupled_variance_quarters_statistic() {
        let y = [0.3, -1.0, 2.5];
        let m1 = [(0.0, 1.0), (0.5, 2.0), (1.0, 0.7)];
        let m4: Vec<_> = m1.iter().map(|&(m, v)| (m, 4.0 * v)).collect();
        let a = chi2_discrepancy(&y, &m1).unwrap();
        let b = chi2_discrepancy(&y, &m4).unwrap();
        assert!((a - 4.0 * b).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(chi2_discrepancy(&[1.0], &[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn expected_value_is_n_for_normal_model() {
        let n = 20;
        let theta = [3.0, 0.5_f64.ln()];
        let mut rng = stream(31, 0);
        let reps = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let y: Vec<f64> = (0..n).map(|_| theta[0] + 0.5 * standard_normal(&mut rng)).collect();
            let data = NewcombData::new(y.clone()).unwrap();
            let x = chi2_discrepancy(&y, &NewcombModel.moments(&data, &theta)).unwrap();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / reps as f64;
        let se = ((sumsq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - n as f64).abs() < 3.0 * se, "{mean} ± {se}");
    }
}
