//! key=value configuration: a file plus command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cpppkit::calibration::{CalibrationPlan, ChainLengthPolicy, MixingPreset, RealChainConfig, Thinning};
use cpppkit::uncertainty::VarianceMethod;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, missing files, unreadable input. Exit code 2.
    Usage(String),
    /// Failure inside the numerics. Exit code 1.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Numeric(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<cpppkit::Error> for CliError {
    fn from(e: cpppkit::Error) -> Self {
        use cpppkit::Error::*;
        match e {
            Numeric { .. } | Replicate { .. } => Self::Numeric(e.to_string()),
            Domain(_) | Parse { .. } | Io(_) => Self::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

const KNOWN_KEYS: &[&str] = &[
    "model", "data", "m", "burn_in", "mixing", "bad_factor", "r", "m_tilde", "ess_target", "max_iterations",
    "budget", "thinning", "methods", "b", "block_length", "level", "threshold", "tau_buffer", "out", "seed",
    "workers", "chain_csv", "a", "cppp", "grid", "simulate", "sweep_m_tilde", "sweep_r", "runs", "reference",
    "refit", "same_seed", "results", "bins", "c",
];

/// Raw settings in file order of precedence: file first, overrides last.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut s = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            s.set_pair(line).map_err(|e| CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let Some((k, v)) = pair.split_once('=') else {
            return usage(format!("expected key=value, got '{pair}'"));
        };
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KNOWN_KEYS.contains(&key) {
            return usage(format!("unknown setting '{key}'"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| CliError::Usage(format!("invalid value '{v}' for {key}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| CliError::Usage(format!("invalid entry '{x}' in {key}"))))
            .collect::<CliResult<Vec<T>>>()
            .map(Some)
    }

    /// Settings that define the result, for embedding in output files.
    /// `workers` and `out` are left out so outputs do not depend on them.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "workers" | "out"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Newcomb,
    DipperCc,
    DipperTt,
    SimulatedTt,
}

impl FromStr for ModelId {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "newcomb" => Ok(Self::Newcomb),
            "dipper_cc" => Ok(Self::DipperCc),
            "dipper_tt" => Ok(Self::DipperTt),
            "simulated_tt" => Ok(Self::SimulatedTt),
            _ => Err(()),
        }
    }
}

/// Everything needed for ppp, cppp and repeat runs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelId,
    pub data: Option<PathBuf>,
    pub real: RealChainConfig,
    pub plan: CalibrationPlan,
    pub methods: Vec<VarianceMethod>,
    pub b: usize,
    pub block_length: Option<usize>,
    pub level: f64,
    pub threshold: f64,
    pub tau_buffer: f64,
    pub out: PathBuf,
    pub chain_csv: bool,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let model: ModelId = s.get_or("model", ModelId::Newcomb)?;
        let data: Option<PathBuf> = s.get("data")?;
        if let Some(p) = &data {
            if !p.is_file() {
                return usage(format!("data file {} does not exist", p.display()));
            }
        } else if matches!(model, ModelId::DipperCc | ModelId::DipperTt) {
            return usage("dipper models need data=<capture-history file>");
        }

        let default_m = if model == ModelId::Newcomb { 4000 } else { 10_000 };
        let mixing = match s.raw("mixing").unwrap_or("good") {
            "good" => MixingPreset::Good,
            "bad" => MixingPreset::Bad { factor: s.get_or("bad_factor", MixingPreset::DEFAULT_BAD_FACTOR)? },
            other => return usage(format!("mixing must be good or bad, got '{other}'")),
        };
        let real = RealChainConfig::new(s.get_or("m", default_m)?, s.get_or("burn_in", 1000)?, mixing);

        let m_tilde: Option<usize> = s.get("m_tilde")?;
        let budget: Option<usize> = s.get("budget")?;
        let r = match (s.get::<usize>("r")?, budget, m_tilde) {
            (Some(r), Some(c), Some(mt)) if r * mt > c => {
                return usage(format!("r·m_tilde = {} exceeds budget {c}", r * mt));
            }
            (Some(r), _, _) => r,
            (None, Some(c), Some(mt)) if mt > 0 => c / mt,
            (None, Some(_), None) => return usage("budget needs m_tilde to derive r"),
            _ => 100,
        };
        let policy = match m_tilde {
            Some(m_tilde) => ChainLengthPolicy::Fixed { m_tilde },
            None => ChainLengthPolicy::EssTarget {
                target: s.get_or("ess_target", 100.0)?,
                max_iterations: s.get("max_iterations")?,
            },
        };
        let thinning = match s.raw("thinning").unwrap_or("systematic") {
            "systematic" => Thinning::Systematic,
            "random" => Thinning::Random,
            other => return usage(format!("thinning must be systematic or random, got '{other}'")),
        };
        let plan = CalibrationPlan {
            r,
            policy,
            thinning,
            master_seed: s.get_or("seed", 0)?,
            workers: s.get_or("workers", 1)?,
        };
        let methods = match s.raw("methods") {
            None => vec![VarianceMethod::Plugin],
            Some(v) => v
                .split(',')
                .map(|m| m.trim().parse().map_err(|e: cpppkit::Error| CliError::Usage(e.to_string())))
                .collect::<CliResult<Vec<_>>>()?,
        };
        let level: f64 = s.get_or("level", 0.95)?;
        if !(level > 0.0 && level < 1.0) {
            return usage(format!("level must lie in (0, 1), got {level}"));
        }
        Ok(Self {
            model,
            data,
            real,
            plan,
            methods,
            b: s.get_or("b", cpppkit::uncertainty::DEFAULT_BOOTSTRAP_ROUNDS)?,
            block_length: s.get("block_length")?,
            level,
            threshold: s.get_or("threshold", 0.05)?,
            tau_buffer: s.get_or("tau_buffer", 1.0)?,
            out: s.get_or("out", PathBuf::from("."))?,
            chain_csv: s.get_or("chain_csv", false)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut s = Settings::parse("# comment\nmodel = newcomb\nr=50\n\nm_tilde=200\n").unwrap();
        s.set_pair("r=20").unwrap();
        let cfg = RunConfig::from_settings(&s).unwrap();
        assert_eq!(cfg.plan.r, 20);
        assert_eq!(cfg.plan.policy, ChainLengthPolicy::Fixed { m_tilde: 200 });
        assert!(Settings::parse("bogus=1").is_err());
        assert!(Settings::parse("no equals sign").is_err());
    }

    #[test]
    fn budget_derives_r() {
        let s = Settings::parse("budget=5000\nm_tilde=50").unwrap();
        assert_eq!(RunConfig::from_settings(&s).unwrap().plan.r, 100);
        let s = Settings::parse("budget=5000\nm_tilde=50\nr=200").unwrap();
        assert!(RunConfig::from_settings(&s).is_err());
    }

    #[test]
    fn dipper_needs_data() {
        let s = Settings::parse("model=dipper_cc").unwrap();
        assert_eq!(RunConfig::from_settings(&s).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn provenance_skips_workers() {
        let s = Settings::parse("workers=8\nseed=3\nout=/tmp/x").unwrap();
        let p = s.provenance();
        assert!(p.contains_key("seed") && !p.contains_key("workers") && !p.contains_key("out"));
    }
}
