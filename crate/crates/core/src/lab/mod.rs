//! Experiment harness: configs, convergence studies, slope fits and the
//! artifacts written by the `mfc-lab` binary.

mod config;
mod experiments;
mod rate;
mod tools;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::Result;

pub use config::{ChaosVariant, ExperimentConfig, ExperimentKind};
pub use experiments::{
    run_chaos_experiment, run_crosscheck, run_partialobs_experiment, run_stability_experiment,
    run_value_rate_experiment, CrossCheck, PartialObsResult, PartialObsRow, ValueRateResult, ValueRateRow,
    MAX_RELATIVE_STDERR,
};
pub use rate::{fit_loglog_slope, RateRow, RateTable, SlopeFit, MIN_EXPERIMENT_POINTS, MIN_FIT_POINTS};
pub use tools::{run_bsde_tool, run_hjb_tool, run_simulate_tool};

pub const SCHEMA_VERSION: u32 = 1;
/// `git describe` of the source tree at build time.
pub const GIT_DESCRIBE: &str = env!("MFC_LAB_GIT_DESCRIBE");

/// Slope bands of the rate experiments.
pub const CHAOS_COUPLED_BAND: (f64, f64) = (-1.25, -0.75);
pub const CHAOS_SAMPLING_BAND: (f64, f64) = (-1.3, -0.7);
pub const VALUE_RATE_BAND: (f64, f64) = (-1.4, -0.6);
pub const STABILITY_MAX_SPREAD: f64 = 10.0;
pub const CROSSCHECK_MAX_RELERR: f64 = 0.025;
pub const PARTIALOBS_MAX_GAP: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

/// Everything an experiment produced, ready to be written.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    /// `results.csv`
    pub csv: String,
    /// Additional CSV files by name.
    pub extra_csv: Vec<(String, String)>,
    pub statistics: serde_json::Value,
    pub checks: Vec<Check>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": self.config.kind.name(),
            "git_describe": GIT_DESCRIBE,
            "seed": self.config.seed,
            "inputs": self.config,
            "statistics": self.statistics,
            "checks": self.checks,
            "passed": self.passed(),
        })
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "experiment: {}", c.kind);
        let _ = writeln!(s, "preset: {}  seed: {}  build: {GIT_DESCRIBE}", c.preset, c.seed);
        let _ = writeln!(s);
        s.push_str(&self.csv);
        let _ = writeln!(s);
        for check in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
        }
        s
    }

    /// Writes `results.csv`, `summary.json`, `report.txt` and the extra CSV
    /// files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), &self.csv)?;
        for (name, body) in &self.extra_csv {
            std::fs::write(dir.join(name), body)?;
        }
        let mut summary = serde_json::to_string_pretty(&self.summary_json())?;
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        std::fs::write(dir.join("report.txt"), self.report())?;
        Ok(())
    }
}

fn slope_check(name: &str, table: &RateTable, band: (f64, f64)) -> Check {
    match (&table.fit, table.exact_zero) {
        (_, true) => Check::new(name, true, "statistic is exactly zero, fit skipped".into()),
        (Some(fit), _) => Check::new(
            name,
            (band.0..=band.1).contains(&fit.slope),
            format!(
                "slope {:.3} (95% CI [{:.3}, {:.3}], R^2 {:.3}) vs band [{}, {}]",
                fit.slope, fit.ci.0, fit.ci.1, fit.r2, band.0, band.1
            ),
        ),
        (None, false) => Check::new(name, false, "no fit".into()),
    }
}

fn stderr_check(rows: &[RateRow]) -> Check {
    let ok = rows.iter().all(|r| r.stat == 0.0 || (r.stderr > 0.0 && r.stderr.is_finite()));
    Check::new("stderr", ok, "every nonzero statistic carries a positive standard error".into())
}

/// Runs the experiment named by `config.kind`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let cfg = config.clone();
    let outcome = match cfg.kind {
        ExperimentKind::Chaos => {
            let table = run_chaos_experiment(&cfg)?;
            let band = match cfg.variant {
                ChaosVariant::Coupled => CHAOS_COUPLED_BAND,
                ChaosVariant::Sampling => CHAOS_SAMPLING_BAND,
            };
            let checks = vec![stderr_check(&table.rows), slope_check("slope", &table, band)];
            ExperimentOutcome {
                csv: table.to_csv(),
                extra_csv: vec![],
                statistics: json!({ "table": table }),
                checks,
                config: cfg,
            }
        }
        ExperimentKind::ValueRate => {
            let result = run_value_rate_experiment(&cfg)?;
            let table = &result.table;
            let mut checks = vec![stderr_check(&table.rows), slope_check("slope", table, VALUE_RATE_BAND)];
            if let (Some(first), Some(last)) = (table.rows.first(), table.rows.last()) {
                checks.push(Check::new(
                    "trend",
                    table.exact_zero || last.stat < first.stat,
                    format!("gap {:.3e} at N = {} vs {:.3e} at N = {}", last.stat, last.n, first.stat, first.n),
                ));
            }
            ExperimentOutcome {
                csv: table.to_csv(),
                extra_csv: vec![],
                statistics: json!({ "table": table, "details": result.details }),
                checks,
                config: cfg,
            }
        }
        ExperimentKind::Stability => {
            let table = run_stability_experiment(&cfg)?;
            let mut csv = String::from("N,stat,stderr,reps,rhs,rhs_stderr,ratio\n");
            for r in &table.rows {
                let ratio = r.ratio.map_or(String::from("nan"), |v| format!("{v:e}"));
                let _ = writeln!(
                    csv,
                    "{},{:e},{:e},{},{:e},{:e},{}",
                    r.n, r.lhs, r.lhs_stderr, cfg.replications, r.rhs, r.rhs_stderr, ratio
                );
            }
            let spread = table.ratio_spread();
            let checks = vec![Check::new(
                "ratio-spread",
                spread.is_none_or(|s| s <= STABILITY_MAX_SPREAD),
                match spread {
                    Some(s) => format!("max/min of lhs/rhs = {s:.3} (limit {STABILITY_MAX_SPREAD})"),
                    None => "both sides vanish".into(),
                },
            )];
            ExperimentOutcome {
                csv,
                extra_csv: vec![],
                statistics: json!({ "table": table, "ratio_spread": spread }),
                checks,
                config: cfg,
            }
        }
        ExperimentKind::CrossCheck => {
            let r = run_crosscheck(&cfg)?;
            let csv = format!(
                "method,value,stderr\npde,{:e},0\nbsde,{:e},{:e}\n",
                r.pde_value, r.bsde_value, r.bsde_stderr
            );
            let checks = vec![Check::new(
                "pde-vs-bsde",
                r.pde_vs_bsde_relerr <= CROSSCHECK_MAX_RELERR,
                format!("relative difference {:.4} (limit {CROSSCHECK_MAX_RELERR})", r.pde_vs_bsde_relerr),
            )];
            ExperimentOutcome {
                csv,
                extra_csv: vec![],
                statistics: json!({
                    "pde_value": r.pde_value,
                    "bsde_value": r.bsde_value,
                    "bsde_stderr": r.bsde_stderr,
                    "pde_vs_bsde_relerr": r.pde_vs_bsde_relerr,
                    "riccati_value": r.riccati_value,
                }),
                checks,
                config: cfg,
            }
        }
        ExperimentKind::PartialObs => {
            let r = run_partialobs_experiment(&cfg)?;
            let mut csv = String::from("N,gain,target,value,stderr,reps\n");
            for row in &r.rows {
                let _ = writeln!(csv, "{},{},{},{:e},{:e},{}", row.n, row.gain, row.target, row.value, row.stderr, row.reps);
            }
            let mut search = String::from("N,gain,target,value,stderr,reps\n");
            for e in &r.search.evaluations {
                let _ = writeln!(search, "{},{},{},{:e},{:e},{}", r.search_n, e.gain, e.target, e.value, e.stderr, r.search_m);
            }
            let mut checks = Vec::new();
            if let Some(last) = r.rows.last() {
                checks.push(Check::new(
                    "certainty-equivalence",
                    last.relative_gap <= PARTIALOBS_MAX_GAP,
                    format!(
                        "N = {}: {:.4} +- {:.4} vs oracle {:.4}, relative gap {:.4} (limit {PARTIALOBS_MAX_GAP})",
                        last.n, last.value, last.stderr, r.oracle_value, last.relative_gap
                    ),
                ));
            }
            checks.push(Check::new(
                "gain-search",
                (r.search.best.gain - r.oracle_gain).abs() <= cfg.gain_step + 1e-12,
                format!("best gain {} vs oracle gain {:.4} (grid step {})", r.search.best.gain, r.oracle_gain, cfg.gain_step),
            ));
            ExperimentOutcome {
                csv,
                extra_csv: vec![("search.csv".into(), search)],
                statistics: serde_json::to_value(&r)?,
                checks,
                config: cfg,
            }
        }
    };
    Ok(outcome)
}

/// Command-line overrides applied after loading a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
    }
}

/// Loads `path`, runs the experiment and writes its artifacts to `cfg.out`.
/// The outcome's [`ExperimentOutcome::passed`] decides the exit status.
pub fn run_config(path: &Path, overrides: &Overrides) -> Result<ExperimentOutcome> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    let outcome = run_experiment(&cfg)?;
    outcome.write(&cfg.out)?;
    Ok(outcome)
}
