//! Repeated calibration runs against one fixed real-data fit, to compare
//! standard-error estimates with the actual run-to-run spread of cppp̂.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{
    count_admitted, default_max_iterations, fit_real_data, run_replicates, worker_pool, ChainLengthPolicy,
    PppThreshold, RealChainConfig, RealDataFit,
};
use crate::error::{domain, Result};
use crate::model::Model;
use crate::rng::{derive_seed, stream};
use crate::uncertainty::{
    bootstrap_mbb, bootstrap_normal, confidence_interval, plugin_variance, TransferTable, VarianceMethod,
    DEFAULT_BOOTSTRAP_ROUNDS,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatSpec {
    pub runs: usize,
    pub r: usize,
    pub m_tilde: usize,
    pub methods: Vec<VarianceMethod>,
    pub b: usize,
    pub block_length: Option<usize>,
    pub level: f64,
    pub master_seed: u64,
    pub workers: usize,
    /// Reference cppp for coverage; rows get `covers` only when set.
    pub reference: Option<f64>,
    /// Every run uses the master seed itself (all runs identical).
    pub same_seed: bool,
}

impl RepeatSpec {
    pub fn new(runs: usize, r: usize, m_tilde: usize) -> Self {
        Self {
            runs,
            r,
            m_tilde,
            methods: vec![VarianceMethod::Plugin],
            b: DEFAULT_BOOTSTRAP_ROUNDS,
            block_length: None,
            level: 0.95,
            master_seed: 0,
            workers: 1,
            reference: None,
            same_seed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatRow {
    pub run: usize,
    pub cppp_hat: f64,
    pub se_plugin: Option<f64>,
    pub se_mbb: Option<f64>,
    pub se_normal: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covers: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatSummary {
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
    pub mean_se_plugin: Option<f64>,
    pub mean_se_mbb: Option<f64>,
    pub mean_se_normal: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatResult {
    pub rows: Vec<RepeatRow>,
    pub summary: RepeatSummary,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RepeatResult {
    /// Per-run rows followed by nothing else; see `write_summary_csv`.
    pub fn write_rows_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "run,cppp_hat,se_plugin,se_mbb,se_normal,ci_lo,ci_hi,covers")?;
        for r in &self.rows {
            let covers = r.covers.map(|c| (c as u8).to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.cppp_hat,
                opt(r.se_plugin),
                opt(r.se_mbb),
                opt(r.se_normal),
                r.ci_lo,
                r.ci_hi,
                covers
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let s = &self.summary;
        writeln!(out, "runs,mean,sd,mean_se_plugin,mean_se_mbb,mean_se_normal,coverage")?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.runs,
            s.mean,
            s.sd,
            opt(s.mean_se_plugin),
            opt(s.mean_se_mbb),
            opt(s.mean_se_normal),
            opt(s.coverage)
        )
    }
}

impl RepeatSpec {
    fn run_seed(&self, run: usize) -> u64 {
        if self.same_seed {
            self.master_seed
        } else {
            derive_seed(self.master_seed, run as u64)
        }
    }

    fn validate(&self, draws: usize) -> Result<()> {
        if self.runs < 2 {
            return domain("need at least two repeats");
        }
        if self.r < 2 || self.r > draws {
            return domain(format!("r = {} must lie in [2, {draws}]", self.r));
        }
        if self.methods.is_empty() {
            return domain("no variance method selected");
        }
        Ok(())
    }
}

/// Run `spec.runs` independent calibrations that share the real-data fit
/// (so ppp_y and τ̂ are fixed). Each run draws r fresh (θ, ỹ) pairs from the
/// posterior draws and refits them with chains of length m̃.
pub fn repeat_calibration<M: Model>(
    model: &M,
    data: &M::Data,
    fit: &RealDataFit,
    table: &TransferTable,
    spec: &RepeatSpec,
) -> Result<RepeatResult> {
    spec.validate(fit.chain.len())?;
    let pool = worker_pool(spec.workers)?;
    let rows = pool.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|run| one_run(model, data, fit, table, spec, run, spec.run_seed(run)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarise(rows, spec))
}

/// Like `repeat_calibration`, but every run also refits the real data with
/// its own seed, so ppp_y and τ̂ vary between runs too.
pub fn repeat_full<M: Model>(
    model: &M,
    data: &M::Data,
    real: &RealChainConfig,
    tau_buffer: f64,
    spec: &RepeatSpec,
) -> Result<RepeatResult> {
    spec.validate(real.m)?;
    let pool = worker_pool(spec.workers)?;
    let rows = pool.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|run| {
                let seed = spec.run_seed(run);
                let (fit, _) = fit_real_data(model, data, real, |_, _| Ok(vec![]), seed)?;
                let table = TransferTable::new(&fit.deltas, tau_buffer)?;
                one_run(model, data, &fit, &table, spec, run, seed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarise(rows, spec))
}

fn one_run<M: Model>(
    model: &M,
    data: &M::Data,
    fit: &RealDataFit,
    table: &TransferTable,
    spec: &RepeatSpec,
    run: usize,
    seed: u64,
) -> Result<RepeatRow> {
    let policy = ChainLengthPolicy::Fixed { m_tilde: spec.m_tilde };
    let threshold = PppThreshold::from_count(fit.ppp.k, fit.ppp.m);
    let mut rng = stream(seed, u64::MAX - 3);
    let picks = sample_indices(&mut rng, fit.chain.len(), spec.r).into_vec();
    let pairs: Vec<_> = picks
        .iter()
        .map(|&i| {
            let theta = fit.chain.param_point(i);
            let y = model.simulate_predictive(theta.values(), data, &mut rng);
            (y, theta)
        })
        .collect();
    let default_max = default_max_iterations(policy, table);
    let results = run_replicates(model, &pairs, policy, &fit.chain.scales, default_max, seed, table)?;
    let cppp = count_admitted(results.iter().map(|r| (r.k_tilde, r.m_tilde)), &threshold) as f64 / spec.r as f64;
    let mut row = RepeatRow {
        run,
        cppp_hat: cppp,
        se_plugin: None,
        se_mbb: None,
        se_normal: None,
        ci_lo: f64::NAN,
        ci_hi: f64::NAN,
        covers: None,
    };
    for &m in &spec.methods {
        let boot_seed = derive_seed(seed, 1 + m as u64);
        match m {
            VarianceMethod::Plugin => row.se_plugin = Some(plugin_variance(&results, threshold.value, table)?.se),
            VarianceMethod::BootstrapMbb => {
                row.se_mbb = Some(bootstrap_mbb(&results, threshold, spec.b, spec.block_length, boot_seed)?.se)
            }
            VarianceMethod::BootstrapNormal => {
                row.se_normal = Some(bootstrap_normal(&results, threshold, spec.b, table, boot_seed)?.se)
            }
        }
    }
    let se = row.se_plugin.or(row.se_mbb).or(row.se_normal).unwrap_or(0.0);
    [row.ci_lo, row.ci_hi] = confidence_interval(cppp, se, spec.level)?;
    row.covers = spec.reference.map(|c| row.ci_lo <= c && c <= row.ci_hi);
    Ok(row)
}

fn summarise(rows: Vec<RepeatRow>, spec: &RepeatSpec) -> RepeatResult {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.cppp_hat).sum::<f64>() / n;
    let sd = (rows.iter().map(|r| (r.cppp_hat - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mean_of = |f: fn(&RepeatRow) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / n)
    };
    let summary = RepeatSummary {
        runs: rows.len(),
        mean,
        sd,
        mean_se_plugin: mean_of(|r| r.se_plugin),
        mean_se_mbb: mean_of(|r| r.se_mbb),
        mean_se_normal: mean_of(|r| r.se_normal),
        coverage: spec.reference.map(|_| rows.iter().filter(|r| r.covers == Some(true)).count() as f64 / n),
    };
    RepeatResult { rows, summary }
}
