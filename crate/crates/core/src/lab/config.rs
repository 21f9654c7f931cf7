//! Key-value experiment configs.
//!
//! ```text
//! # comment
//! extends = base.cfg
//! experiment = chaos
//! preset = tanh-drift
//! model.sigma = 0.8
//! n_list = 8, 16, 32, 64
//! ```
//!
//! `extends` loads another file (relative to this one) whose keys this file
//! overrides. `preset` picks the model defaults and `model.*` keys override
//! single parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;

const MAX_EXTENDS_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Chaos,
    ValueRate,
    Stability,
    CrossCheck,
    PartialObs,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Chaos,
        ExperimentKind::ValueRate,
        ExperimentKind::Stability,
        ExperimentKind::CrossCheck,
        ExperimentKind::PartialObs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Chaos => "chaos",
            ExperimentKind::ValueRate => "value-rate",
            ExperimentKind::Stability => "stability",
            ExperimentKind::CrossCheck => "cross-check",
            ExperimentKind::PartialObs => "partialobs",
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            ExperimentKind::Chaos => "tanh-drift",
            ExperimentKind::PartialObs => "partial-obs-lqg",
            _ => "lq",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chaos" => Ok(ExperimentKind::Chaos),
            "value-rate" | "rate" => Ok(ExperimentKind::ValueRate),
            "stability" => Ok(ExperimentKind::Stability),
            "cross-check" | "crosscheck" => Ok(ExperimentKind::CrossCheck),
            "partialobs" | "partial-obs" => Ok(ExperimentKind::PartialObs),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// What the chaos experiment compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChaosVariant {
    /// Interacting cloud against its decoupled copies.
    Coupled,
    /// Decoupled copies against the conditional law.
    Sampling,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub preset: String,
    pub model: ModelParams,
    pub n_list: Vec<usize>,
    /// Monte Carlo replications per N (evaluation paths for stability).
    pub replications: usize,
    pub n_steps: usize,
    /// Outer paths of regression fits.
    pub m_outer: usize,
    /// Inner cloud of the mean-field BSDE.
    pub n_inner: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub variant: ChaosVariant,
    pub reference_factor: usize,
    pub basis_degree: usize,
    pub hjb_n_space: usize,
    pub hjb_n_time: usize,
    /// Gain grid `lo:hi:step` of the partial-observation search.
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub gain_step: f64,
    /// N and replications of the partial-observation search.
    pub search_n: usize,
    pub search_m: usize,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let preset = kind.default_preset().to_string();
        let model = ModelParams::preset(&preset).expect("built-in preset");
        let (n_list, replications): (Vec<usize>, usize) = match kind {
            ExperimentKind::Chaos => (vec![8, 16, 32, 64, 128, 256, 512], 200),
            ExperimentKind::ValueRate => (vec![2, 4, 8, 16, 32, 64], 1),
            ExperimentKind::Stability => (vec![8, 16, 32, 64, 128], 2000),
            ExperimentKind::CrossCheck => (vec![], 1000),
            ExperimentKind::PartialObs => (vec![8, 16, 32, 64, 128, 256], 20_000),
        };
        ExperimentConfig {
            kind,
            preset,
            model,
            n_list,
            replications,
            n_steps: 50,
            m_outer: 10_000,
            n_inner: 2000,
            seed: 1,
            out: PathBuf::from(format!("results/{}", kind.name())),
            variant: ChaosVariant::Coupled,
            reference_factor: 16,
            basis_degree: 3,
            hjb_n_space: 400,
            hjb_n_time: 400,
            gain_lo: 0.0,
            gain_hi: 2.0,
            gain_step: 0.25,
            search_n: 64,
            search_m: 2000,
        }
    }

    /// Parses config text; `extends` is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let pairs = collect(text, base_dir, 0)?;
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let kind: ExperimentKind = pairs
            .get("experiment")
            .ok_or_else(|| Error::Config("missing `experiment`".into()))?
            .parse()?;
        let mut cfg = ExperimentConfig::defaults(kind);
        if let Some(p) = pairs.get("preset") {
            cfg.preset = p.clone();
            cfg.model = ModelParams::preset(p)?;
        }
        for (key, value) in pairs {
            if let Some(param) = key.strip_prefix("model.") {
                cfg.model.set(param, value)?;
                continue;
            }
            match key.as_str() {
                "experiment" | "preset" => {}
                "n_list" => {
                    cfg.n_list = value
                        .split(',')
                        .map(|s| s.trim())
                        .filter(|s| !s.is_empty())
                        .map(|s| number(key, s))
                        .collect::<Result<_>>()?
                }
                "replications" => cfg.replications = number(key, value)?,
                "n_steps" => cfg.n_steps = number(key, value)?,
                "m_outer" => cfg.m_outer = number(key, value)?,
                "n_inner" => cfg.n_inner = number(key, value)?,
                "seed" => cfg.seed = number(key, value)?,
                "out" => cfg.out = PathBuf::from(value),
                "variant" => {
                    cfg.variant = match value.as_str() {
                        "coupled" => ChaosVariant::Coupled,
                        "sampling" => ChaosVariant::Sampling,
                        other => return Err(Error::Config(format!("unknown chaos variant `{other}`"))),
                    }
                }
                "reference_factor" => cfg.reference_factor = number(key, value)?,
                "basis_degree" => cfg.basis_degree = number(key, value)?,
                "hjb.n_space" => cfg.hjb_n_space = number(key, value)?,
                "hjb.n_time" => cfg.hjb_n_time = number(key, value)?,
                "gain_lo" => cfg.gain_lo = number(key, value)?,
                "gain_hi" => cfg.gain_hi = number(key, value)?,
                "gain_step" => cfg.gain_step = number(key, value)?,
                "search_n" => cfg.search_n = number(key, value)?,
                "search_m" => cfg.search_m = number(key, value)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly increasing".into()));
        }
        if self.n_list.first() == Some(&0) {
            return Err(Error::Config("n_list entries must be positive".into()));
        }
        let budgets = [
            ("replications", self.replications),
            ("n_steps", self.n_steps),
            ("m_outer", self.m_outer),
            ("n_inner", self.n_inner),
            ("reference_factor", self.reference_factor),
            ("hjb.n_space", self.hjb_n_space),
            ("hjb.n_time", self.hjb_n_time),
            ("search_n", self.search_n),
            ("search_m", self.search_m),
        ];
        if let Some((name, _)) = budgets.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.gain_step > 0.0) || !(self.gain_hi >= self.gain_lo) {
            return Err(Error::Config("gain grid needs gain_step > 0 and gain_hi >= gain_lo".into()));
        }
        Ok(())
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: `{value}` is not a valid number")))
}

fn collect(text: &str, base_dir: &Path, depth: usize) -> Result<BTreeMap<String, String>> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(Error::Config("`extends` chain is too deep (cycle?)".into()));
    }
    let mut own = Vec::new();
    let mut parent = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if k == "extends" {
            parent = Some(v);
        } else {
            own.push((k, v));
        }
    }
    let mut pairs = match parent {
        Some(p) => {
            let path = base_dir.join(&p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
            collect(&text, path.parent().unwrap_or(base_dir), depth + 1)?
        }
        None => BTreeMap::new(),
    };
    pairs.extend(own);
    Ok(pairs)
}
