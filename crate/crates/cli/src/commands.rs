//! The five subcommands. Each reads a `Settings`, writes its files into the
//! output directory, and prints a short summary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cpppkit::calibration::{fit_real_data, orchestrate, write_replicate_csv, ChainLengthPolicy, CpppEstimate};
use cpppkit::dist::BetaParams;
use cpppkit::model::Model;
use cpppkit::models::cjs::{load_capture_histories, simulated_tt_histories, SIMULATED_SEED};
use cpppkit::models::{CjsData, CjsModel, CjsVariant, NewcombData, NewcombModel};
use cpppkit::repeat::{repeat_calibration, repeat_full, RepeatResult, RepeatSpec};
use cpppkit::scenario::{scenario_grid, scenario_simulate, scenario_sweep_r, ScenarioSpec};
use cpppkit::uncertainty::{
    bootstrap_mbb, bootstrap_normal, plugin_variance, TransferTable, VarianceEstimate, VarianceMethod,
};
use serde_json::{json, Value};

use crate::config::{usage, CliError, CliResult, ModelId, RunConfig, Settings};

/// Something to run against whichever model the config names.
trait ModelTask {
    type Output;
    fn run<M: Model>(self, model: &M, data: &M::Data) -> CliResult<Self::Output>;
}

fn dispatch<T: ModelTask>(cfg: &RunConfig, task: T) -> CliResult<T::Output> {
    let cjs = |variant| -> CliResult<(CjsModel, CjsData)> {
        let h = match &cfg.data {
            Some(p) => load_capture_histories(p)?,
            None => simulated_tt_histories(SIMULATED_SEED),
        };
        Ok((CjsModel::new(variant, h.k()), CjsData::from_histories(&h)))
    };
    match cfg.model {
        ModelId::Newcomb => {
            let data = match &cfg.data {
                Some(p) => NewcombData::load(p)?,
                None => NewcombData::canonical(),
            };
            task.run(&NewcombModel, &data)
        }
        ModelId::DipperCc => {
            let (m, d) = cjs(CjsVariant::Constant)?;
            task.run(&m, &d)
        }
        ModelId::DipperTt | ModelId::SimulatedTt => {
            let (m, d) = cjs(CjsVariant::TimeVarying)?;
            task.run(&m, &d)
        }
    }
}

fn model_name(id: ModelId) -> &'static str {
    match id {
        ModelId::Newcomb => "newcomb",
        ModelId::DipperCc => "dipper_cc",
        ModelId::DipperTt => "dipper_tt",
        ModelId::SimulatedTt => "simulated_tt",
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<fs::File>> {
    let path = dir.join(name);
    fs::File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> CliResult<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn write_timing(dir: &Path, command: &str, workers: usize, seconds: f64) -> CliResult<()> {
    write_json(dir, "timing.json", &json!({ "command": command, "workers": workers, "seconds": seconds }))
}

fn out_dir(cfg_out: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(cfg_out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", cfg_out.display())))?;
    Ok(cfg_out.to_path_buf())
}

// ppp

struct PppTask<'a> {
    cfg: &'a RunConfig,
    settings: &'a Settings,
}

impl ModelTask for PppTask<'_> {
    type Output = ();
    fn run<M: Model>(self, model: &M, data: &M::Data) -> CliResult<()> {
        let cfg = self.cfg;
        let start = Instant::now();
        let (fit, _) = fit_real_data(model, data, &cfg.real, |_, _| Ok(vec![]), cfg.plan.master_seed)?;
        let dir = out_dir(&cfg.out)?;
        let doc = json!({
            "model": model_name(cfg.model),
            "ppp_hat": fit.ppp.value,
            "k": fit.ppp.k,
            "m": fit.ppp.m,
            "ess": fit.ppp.ess,
            "tau": fit.ppp.tau,
            "acceptance_rate": fit.chain.acceptance_rate,
            "config": self.settings.provenance(),
        });
        write_json(&dir, "ppp.json", &doc)?;
        if cfg.chain_csv {
            fit.chain.write_csv(create(&dir, "chain.csv")?)?;
        }
        write_timing(&dir, "ppp", cfg.plan.workers, start.elapsed().as_secs_f64())?;
        println!("ppp = {:.4} (k = {}, m = {})", fit.ppp.value, fit.ppp.k, fit.ppp.m);
        Ok(())
    }
}

pub fn cmd_ppp(settings: &Settings) -> CliResult<()> {
    let cfg = RunConfig::from_settings(settings)?;
    dispatch(&cfg, PppTask { cfg: &cfg, settings })
}

// cppp

fn variances(cfg: &RunConfig, est: &CpppEstimate, table: &TransferTable) -> CliResult<Vec<VarianceEstimate>> {
    let seed = cfg.plan.master_seed;
    cfg.methods
        .iter()
        .map(|&m| {
            let v = match m {
                VarianceMethod::Plugin => plugin_variance(&est.replicates, est.ppp_y.value, table)?,
                VarianceMethod::BootstrapMbb => bootstrap_mbb(&est.replicates, est.ppp_y, cfg.b, cfg.block_length, seed)?,
                VarianceMethod::BootstrapNormal => bootstrap_normal(&est.replicates, est.ppp_y, cfg.b, table, seed)?,
            };
            Ok(v.with_ci(est.value, cfg.level)?)
        })
        .collect()
}

pub fn verdict(ci: [f64; 2], threshold: f64) -> &'static str {
    if ci[0] > threshold {
        "no evidence against model"
    } else if ci[1] < threshold {
        "evidence against model"
    } else {
        "inconclusive, add calibration replicates"
    }
}

fn allocation_label(est: &CpppEstimate) -> String {
    match est.plan.policy {
        ChainLengthPolicy::Fixed { m_tilde } => format!("r={};m_tilde={m_tilde}", est.r),
        ChainLengthPolicy::EssTarget { target, .. } => format!("r={};ess_target={target}", est.r),
    }
}

struct CpppTask<'a> {
    cfg: &'a RunConfig,
    settings: &'a Settings,
}

impl ModelTask for CpppTask<'_> {
    type Output = ();
    fn run<M: Model>(self, model: &M, data: &M::Data) -> CliResult<()> {
        let cfg = self.cfg;
        let start = Instant::now();
        let (est, fit, table) = orchestrate(model, data, &cfg.real, &cfg.plan, cfg.tau_buffer)?;
        let vars = variances(cfg, &est, &table)?;
        let dir = out_dir(&cfg.out)?;

        let replicates: Vec<Value> = est
            .replicates
            .iter()
            .map(|r| {
                json!({
                    "j": r.index,
                    "m_tilde": r.m_tilde,
                    "k_tilde": r.k_tilde,
                    "ppp_hat": r.ppp_hat,
                    "tau_hat": r.tau_hat,
                    "ess_short": r.ess_short,
                    "stream": r.stream,
                    "data_digest": format!("{:016x}", r.data_digest),
                })
            })
            .collect();
        let uncertainty: Vec<Value> = vars
            .iter()
            .map(|v| {
                json!({
                    "method": v.method.name(),
                    "variance": v.variance,
                    "se": v.se,
                    "ci": v.ci,
                    "params": { "b": v.b, "block_length": v.block_length, "level": v.ci_level, "f_bar": v.f_bar },
                })
            })
            .collect();
        let first = &vars[0];
        let text = verdict(first.ci, cfg.threshold);
        let doc = json!({
            "model": model_name(cfg.model),
            "cppp_hat": est.value,
            "r": est.r,
            "allocation": allocation_label(&est),
            "ppp_y": { "value": est.ppp_y.value, "k": fit.ppp.k, "m": fit.ppp.m, "ess": fit.ppp.ess, "tau": fit.ppp.tau },
            "policy": est.plan.policy,
            "thinning": est.plan.thinning,
            "replicate_scales": est.replicate_scales,
            "ess_short_count": est.replicates.iter().filter(|r| r.ess_short).count(),
            "replicates": replicates,
            "uncertainty": uncertainty,
            "verdict": { "threshold": cfg.threshold, "method": first.method.name(), "text": text },
            "config": self.settings.provenance(),
        });
        write_json(&dir, "cppp.json", &doc)?;
        write_replicate_csv(&est.replicates, create(&dir, "replicate.csv")?)?;
        write_timing(&dir, "cppp", cfg.plan.workers, start.elapsed().as_secs_f64())?;
        println!(
            "cppp = {:.4}, {:.0}% CI [{:.4}, {:.4}] ({}): {text} at threshold {}",
            est.value,
            100.0 * cfg.level,
            first.ci[0],
            first.ci[1],
            first.method.name(),
            cfg.threshold
        );
        Ok(())
    }
}

pub fn cmd_cppp(settings: &Settings) -> CliResult<()> {
    let cfg = RunConfig::from_settings(settings)?;
    dispatch(&cfg, CpppTask { cfg: &cfg, settings })
}

// scenario

pub fn cmd_scenario(s: &Settings) -> CliResult<()> {
    let a: f64 = s.get_or("a", 2.0)?;
    let b: f64 = s.get_or("b", 2.0)?;
    let shape = BetaParams::new(a, b).map_err(|e| CliError::Usage(e.to_string()))?;
    let budget: usize = match (s.get("budget")?, s.get("c")?) {
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => 20_000,
    };
    let grid = s.list("grid")?.unwrap_or_else(|| vec![10, 20, 50, 100, 200, 500, 1000]);
    let spec = ScenarioSpec::new(shape, s.get_or("cppp", 0.2)?, budget, grid)?;
    let res = scenario_grid(&spec)?;
    let dir = out_dir(&s.get_or("out", PathBuf::from("."))?)?;
    let seed: u64 = s.get_or("seed", 0)?;

    let mut f = create(&dir, "scenario.csv")?;
    match s.get::<usize>("simulate")? {
        None => res.write_csv(&mut f)?,
        Some(n_outer) => {
            writeln!(f, "m_tilde,r,ppp_y,abs_bias,se,rmse,sim_bias,sim_bias_se,sim_var,sim_var_se")?;
            for row in &res.rows {
                let sim = scenario_simulate(&spec, row.m_tilde, row.r, n_outer, seed)?;
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{},{}",
                    row.m_tilde,
                    row.r,
                    row.ppp_y,
                    row.abs_bias,
                    row.se,
                    row.rmse,
                    sim.empirical_bias,
                    sim.bias_se,
                    sim.empirical_var,
                    sim.var_se
                )?;
            }
        }
    }
    f.flush()?;
    for row in &res.rows {
        if !budget.is_multiple_of(row.m_tilde) {
            println!("note: budget {budget} is not a multiple of m_tilde {}; r floored to {}", row.m_tilde, row.r);
        }
    }
    if let Some(mt) = s.get::<usize>("sweep_m_tilde")? {
        let rs = s.list("sweep_r")?.unwrap_or_else(|| vec![10, 50, 100, 200, 500, 1000, 2000]);
        scenario_sweep_r(&spec, mt, &rs)?.write_sweep_csv(create(&dir, "scenario_sweep.csv")?)?;
    }
    if let Some(best) = res.best() {
        println!(
            "ppp_y = {:.4}; lowest RMSE {:.5} at m_tilde = {} (r = {})",
            best.ppp_y, best.rmse, best.m_tilde, best.r
        );
    }
    Ok(())
}

// repeat

struct RepeatTask<'a> {
    cfg: &'a RunConfig,
    spec: RepeatSpec,
    refit: bool,
}

impl ModelTask for RepeatTask<'_> {
    type Output = RepeatResult;
    fn run<M: Model>(self, model: &M, data: &M::Data) -> CliResult<RepeatResult> {
        if self.refit {
            return Ok(repeat_full(model, data, &self.cfg.real, self.cfg.tau_buffer, &self.spec)?);
        }
        let (fit, _) = fit_real_data(model, data, &self.cfg.real, |_, _| Ok(vec![]), self.cfg.plan.master_seed)?;
        let table = TransferTable::new(&fit.deltas, self.cfg.tau_buffer)?;
        Ok(repeat_calibration(model, data, &fit, &table, &self.spec)?)
    }
}

pub fn cmd_repeat(s: &Settings) -> CliResult<()> {
    let cfg = RunConfig::from_settings(s)?;
    let ChainLengthPolicy::Fixed { m_tilde } = cfg.plan.policy else {
        return usage("repeat needs a fixed m_tilde");
    };
    let mut spec = RepeatSpec::new(s.get_or("runs", 100)?, cfg.plan.r, m_tilde);
    spec.methods = cfg.methods.clone();
    spec.b = cfg.b;
    spec.block_length = cfg.block_length;
    spec.level = cfg.level;
    spec.master_seed = cfg.plan.master_seed;
    spec.workers = cfg.plan.workers;
    spec.reference = s.get("reference")?;
    spec.same_seed = s.get_or("same_seed", false)?;
    if spec.runs < 2 {
        return usage("runs must be at least 2");
    }
    let start = Instant::now();
    let res = dispatch(&cfg, RepeatTask { cfg: &cfg, spec, refit: s.get_or("refit", true)? })?;
    let dir = out_dir(&cfg.out)?;
    res.write_rows_csv(create(&dir, "repeat_summary.csv")?)?;
    res.write_summary_csv(create(&dir, "repeat_stats.csv")?)?;
    write_timing(&dir, "repeat", cfg.plan.workers, start.elapsed().as_secs_f64())?;
    let sm = &res.summary;
    print!("{} runs: mean cppp {:.4}, SD {:.4}", sm.runs, sm.mean, sm.sd);
    for (name, v) in [("plugin", sm.mean_se_plugin), ("mbb", sm.mean_se_mbb), ("normal", sm.mean_se_normal)] {
        if let Some(v) = v {
            print!(", mean SE {name} {v:.4}");
        }
    }
    if let Some(c) = sm.coverage {
        print!(", coverage {c:.3}");
    }
    println!();
    Ok(())
}

// report

struct ResultSet {
    label: String,
    ppp_y: f64,
    ppp_k: u64,
    ppp_m: u64,
    cppp: f64,
    uncertainty: Vec<(String, f64)>,
    /// (k̃, m̃, ppp̂) per replicate from replicate.csv.
    replicates: Vec<(u64, u64, f64)>,
}

fn read_result_set(dir: &Path) -> CliResult<ResultSet> {
    let json_path = dir.join("cppp.json");
    let text = fs::read_to_string(&json_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", json_path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", json_path.display())))?;
    let bad = || CliError::Usage(format!("{} is missing fields", json_path.display()));
    let uncertainty = doc["uncertainty"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|u| Some((u["method"].as_str()?.to_string(), u["se"].as_f64()?)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad)?;

    let csv_path = dir.join("replicate.csv");
    let csv = fs::read_to_string(&csv_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", csv_path.display())))?;
    let mut lines = csv.lines();
    if lines.next() != Some("j,m_tilde,k_tilde,ppp_hat,tau_hat,ess_hat") {
        return usage(format!("{} has an unexpected header", csv_path.display()));
    }
    let replicates = lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parse = || -> Option<(u64, u64, f64)> { Some((f.get(2)?.parse().ok()?, f.get(1)?.parse().ok()?, f.get(3)?.parse().ok()?)) };
            parse().ok_or_else(|| CliError::Usage(format!("{} line {}: malformed row", csv_path.display(), i + 2)))
        })
        .collect::<CliResult<Vec<_>>>()?;

    Ok(ResultSet {
        label: doc["allocation"].as_str().ok_or_else(bad)?.to_string(),
        ppp_y: doc["ppp_y"]["value"].as_f64().ok_or_else(bad)?,
        ppp_k: doc["ppp_y"]["k"].as_u64().ok_or_else(bad)?,
        ppp_m: doc["ppp_y"]["m"].as_u64().ok_or_else(bad)?,
        cppp: doc["cppp_hat"].as_f64().ok_or_else(bad)?,
        uncertainty,
        replicates,
    })
}

pub fn cmd_report(s: &Settings) -> CliResult<()> {
    let out = s.get_or("out", PathBuf::from("."))?;
    let dirs: Vec<PathBuf> = s.list("results")?.unwrap_or_else(|| vec![out.clone()]);
    let bins: usize = s.get_or("bins", 20)?;
    if bins == 0 {
        return usage("bins must be positive");
    }
    let sets = dirs.iter().map(|d| read_result_set(d)).collect::<CliResult<Vec<_>>>()?;
    for (set, dir) in sets.iter().zip(&dirs) {
        if set.replicates.is_empty() {
            return usage(format!("{} has no replicates", dir.display()));
        }
        let admitted = set.replicates.iter().filter(|&&(k, m, _)| k * set.ppp_m <= m * set.ppp_k).count();
        let recomputed = admitted as f64 / set.replicates.len() as f64;
        if recomputed != set.cppp {
            return Err(CliError::Numeric(format!(
                "{}: cppp.json says {} but replicate.csv gives {recomputed}",
                dir.display(),
                set.cppp
            )));
        }
    }
    let dir = out_dir(&out)?;

    let mut h = create(&dir, "ppp_histogram.csv")?;
    writeln!(h, "label,bin_lo,bin_hi,count,observed_ppp")?;
    for set in &sets {
        let mut counts = vec![0usize; bins];
        for &(_, _, p) in &set.replicates {
            counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let w = 1.0 / bins as f64;
            writeln!(h, "{},{},{},{c},{}", set.label, i as f64 * w, (i + 1) as f64 * w, set.ppp_y)?;
        }
    }
    h.flush()?;

    let mut e = create(&dir, "error_bars.csv")?;
    writeln!(e, "label,method,cppp_hat,se,lo,hi")?;
    for set in &sets {
        for (method, se) in &set.uncertainty {
            writeln!(e, "{},{method},{},{se},{},{}", set.label, set.cppp, set.cppp - se, set.cppp + se)?;
        }
    }
    e.flush()?;
    println!("report for {} result set(s) written to {}", sets.len(), dir.display());
    Ok(())
}
