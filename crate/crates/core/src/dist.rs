//! Special functions, CDFs, quantiles and the few samplers the rest of the
//! crate needs.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// Shapes of a Beta(a, b) distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return domain(format!("beta shapes must be positive and finite, got ({a}, {b})"));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }
}

/// Beta-Binomial(trials, a, b): the marginal law of a binomial count whose
/// success probability is Beta distributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBinomialParams {
    pub trials: u64,
    pub shape: BetaParams,
}

impl BetaBinomialParams {
    pub fn new(trials: u64, shape: BetaParams) -> Result<Self> {
        if trials == 0 {
            return domain("beta-binomial needs at least one trial");
        }
        Ok(Self { trials, shape })
    }
}

/// Natural log of the gamma function (Lanczos approximation).
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return domain(format!("log_gamma requires finite x > 0, got {x}"));
    }
    Ok(log_gamma_unchecked(x))
}

#[allow(clippy::excessive_precision)]
pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    let mut y = x;
    let tmp = x + 5.242_187_5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in LANCZOS {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

pub(crate) fn log_beta(a: f64, b: f64) -> f64 {
    log_gamma_unchecked(a) + log_gamma_unchecked(b) - log_gamma_unchecked(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn beta_cdf(x: f64, p: BetaParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("beta_cdf requires x in [0, 1], got {x}"));
    }
    Ok(beta_cdf_unchecked(x, p.a, p.b))
}

pub(crate) fn beta_cdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let log_front = a * x.ln() + b * (1.0 - x).ln() - log_beta(a, b);
    let front = log_front.exp();
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    };
    v.clamp(0.0, 1.0)
}

fn beta_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - log_beta(a, b)
}

/// Inverse of [`beta_cdf`] by safeguarded Newton iteration.
pub fn beta_quantile(q: f64, p: BetaParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("beta_quantile requires q in [0, 1], got {q}"));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.a, p.b);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = p.mean();
    for _ in 0..500 {
        let f = beta_cdf_unchecked(x, a, b) - q;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-15 {
            break;
        }
        let dens = beta_log_pdf(x, a, b).exp();
        let newton = x - f / dens;
        x = if dens.is_finite() && dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Log of the Beta-Binomial pmf at `k`.
pub fn beta_binomial_log_pmf(k: u64, p: BetaBinomialParams) -> f64 {
    if k > p.trials {
        return f64::NEG_INFINITY;
    }
    let n = p.trials as f64;
    let kf = k as f64;
    let (a, b) = (p.shape.a, p.shape.b);
    let log_choose = log_gamma_unchecked(n + 1.0)
        - log_gamma_unchecked(kf + 1.0)
        - log_gamma_unchecked(n - kf + 1.0);
    log_choose + log_beta(kf + a, n - kf + b) - log_beta(a, b)
}

/// CDF of the Beta-Binomial, summed in log space.
pub fn beta_binomial_cdf(k: i64, p: BetaBinomialParams) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if k as u64 >= p.trials {
        return 1.0;
    }
    let mut acc = f64::NEG_INFINITY;
    for j in 0..=k as u64 {
        acc = log_add_exp(acc, beta_binomial_log_pmf(j, p));
    }
    acc.exp().clamp(0.0, 1.0)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal CDF with the given mean and variance. Zero variance gives the step
/// function `1{x >= mean}`.
pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if variance < 0.0 || variance.is_nan() {
        return domain(format!("normal_cdf requires variance >= 0, got {variance}"));
    }
    if variance == 0.0 {
        return Ok(if x >= mean { 1.0 } else { 0.0 });
    }
    Ok(std_normal_cdf((x - mean) / variance.sqrt()))
}

/// Standard normal quantile: rational starting point refined by Halley steps.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        return domain(format!("normal quantile requires p in [0, 1], got {p}"));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = std_normal_cdf(x) - p;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Draw from Beta(a, b).
pub fn sample_beta<R: Rng + ?Sized>(p: BetaParams, rng: &mut R) -> f64 {
    // Shapes are validated by BetaParams::new.
    rand_distr::Beta::new(p.a, p.b)
        .expect("validated beta shapes")
        .sample(rng)
}

/// Draw from Binomial(n, prob).
pub fn sample_binomial<R: Rng + ?Sized>(n: u64, prob: f64, rng: &mut R) -> u64 {
    if n == 0 || prob <= 0.0 {
        return 0;
    }
    if prob >= 1.0 {
        return n;
    }
    Binomial::new(n, prob).expect("probability in (0, 1)").sample(rng)
}

/// Inverse-ECDF (type 1) quantile: the smallest element such that the
/// fraction of elements at or below it is at least `q`.
pub fn empirical_quantile(series: &[f64], q: f64) -> Result<f64> {
    if series.is_empty() {
        return domain("empirical_quantile of an empty series");
    }
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("quantile level must lie in [0, 1], got {q}"));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&sorted, q))
}

/// [`empirical_quantile`] on an already ascending slice.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // Guard against q*n landing a rounding error above an integer.
    let rank = (q * n as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}
