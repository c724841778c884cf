//! Batch experiments: simulate a seed range, run the requested analyses and
//! write the artifacts.
//!
//! Layout of the output directory:
//!
//! - `histories/seed-<n>.jsonl` event logs
//! - `seeds/seed-<n>.json` per-seed analysis results
//! - `rewards/seed-<n>.jsonl` reward reports of the final published dag
//! - `utilities.csv`, `deviation.csv` and `summary.json` aggregates
//!
//! Every file is written to a temporary name and renamed into place, and
//! nothing time-dependent goes into it, so reruns are byte-identical.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::analysis::{
    check_desiderata_with, check_safe, deviation_experiment, DesiderataOptions, DesiderataReport, DeviationTable,
    SafetyVerdict,
};
use crate::dag::{BlockId, Color};
use crate::ledger::ledger;
use crate::params::ParamTuple;
use crate::reward::{utility, RewardBook, UtilityReport};
use crate::sim::{run, History, SchedulerConfig, SimError, StrategyKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(SimError),
}

fn config_error(field: impl Into<String>, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig { field, reason } => config_error(format!("config.{field}"), reason),
            other => Self::Sim(other),
        }
    }
}

/// Half-open seed range written as `"a..b"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedRange(pub Range<u64>);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("expected `a..b`, got `{s}`"))?;
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed `{a}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed `{b}`"))?;
        if a >= b {
            return Err(format!("empty seed range `{s}`"));
        }
        Ok(Self(a..b))
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.0.start, self.0.end)
    }
}

impl Serialize for SeedRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeedRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which artifacts to produce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub histories: bool,
    pub safety: bool,
    pub desiderata: bool,
    pub utilities: bool,
    pub ledgers: bool,
    pub rewards: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            histories: true,
            safety: true,
            desiderata: false,
            utilities: true,
            ledgers: false,
            rewards: false,
        }
    }
}

/// Conditions that make the experiment fail.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assertions {
    /// Minimum share of seeds whose history is safe.
    pub min_safe_fraction: Option<f64>,
    /// Safe seeds must show no consistency, growth, quality or revenue
    /// violations.
    pub desiderata_on_safe: bool,
    /// Upper bound on the mean utility gain of the deviating miner.
    pub max_deviation_gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSpec {
    /// Strategy of miner 0; every other miner is honest.
    pub adversary: StrategyKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub config: SchedulerConfig,
    /// One per miner; all honest when omitted.
    #[serde(default)]
    pub strategies: Vec<StrategyKind>,
    pub params: ParamTuple,
    pub seeds: SeedRange,
    /// Ledger color.
    #[serde(default)]
    pub ledger_color: Color,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub assertions: Assertions,
    #[serde(default)]
    pub deviation: Option<DeviationSpec>,
    #[serde(default)]
    pub sampling: DesiderataOptions,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.config.validate()?;
        let n = self.config.miners.len();
        if !self.strategies.is_empty() && self.strategies.len() != n {
            return Err(config_error(
                "strategies",
                format!("{} strategies for {n} miners", self.strategies.len()),
            ));
        }
        if self.params.n_ell == 0 {
            return Err(config_error("params.n_ell", "must be at least 1"));
        }
        if self.params.delta.is_zero() || self.params.delta.to_f64() >= 0.5 {
            return Err(config_error("params.delta", "must lie in (0, 1/2)"));
        }
        if !(self.params.delta_c > 0.0 && self.params.delta_c < 1.0) {
            return Err(config_error("params.delta_c", "must lie in (0, 1)"));
        }
        if self.params.n_colors != self.config.n_colors {
            return Err(config_error("params.n_colors", "must match config.n_colors"));
        }
        if self.params.delta_net != self.config.delta as u32 {
            return Err(config_error("params.delta_net", "must match config.delta"));
        }
        if self.ledger_color >= self.config.n_colors {
            return Err(config_error("ledger_color", "must be below config.n_colors"));
        }
        if self.sampling.ledger_stride == 0 || self.sampling.reward_stride == 0 {
            return Err(config_error("sampling", "strides must be positive"));
        }
        Ok(())
    }

    fn strategy_kinds(&self) -> Vec<StrategyKind> {
        if self.strategies.is_empty() {
            vec![StrategyKind::Honest; self.config.miners.len()]
        } else {
            self.strategies.clone()
        }
    }
}

/// Analysis results of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub blocks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub desiderata: Option<DesiderataReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub utilities: Vec<UtilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<Vec<BlockId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seeds: String,
    pub runs: usize,
    pub safe_runs: Option<usize>,
    pub failures: Vec<String>,
    pub deviation: Option<crate::analysis::DeviationSummary>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub results: Vec<SeedResult>,
    pub deviation: Option<DeviationTable>,
    pub summary: ExperimentSummary,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("results serialize");
    out.push(b'\n');
    out
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("writing to a Vec cannot fail")
}

#[derive(Serialize)]
struct UtilityRow<'a> {
    seed: u64,
    miner: usize,
    strategy: &'a str,
    numerator: u64,
    denominator: u64,
    utility: Option<f64>,
}

fn analyse(spec: &ExperimentSpec, seed: u64, out: &Path) -> Result<SeedResult, ExperimentError> {
    let cfg = SchedulerConfig {
        seed,
        ..spec.config.clone()
    };
    let strategies = spec.strategy_kinds().iter().map(StrategyKind::build).collect();
    let history = run(&cfg, strategies)?;
    let o = &spec.outputs;
    let name = format!("seed-{seed}");
    if o.histories {
        write_atomic(
            &out.join("histories").join(format!("{name}.jsonl")),
            history.to_jsonl().as_bytes(),
        )?;
    }
    if o.rewards {
        write_atomic(
            &out.join("rewards").join(format!("{name}.jsonl")),
            &final_rewards(&history, spec)?,
        )?;
    }
    let n_l = spec.params.n_ell as u32;
    let result = SeedResult {
        seed,
        blocks: history.dag().len() - 1,
        safety: o.safety.then(|| check_safe(&history, &spec.params)),
        desiderata: o
            .desiderata
            .then(|| check_desiderata_with(&history, &spec.params, spec.ledger_color, &spec.sampling)),
        utilities: if o.utilities {
            (0..history.n_miners())
                .filter_map(|i| utility(&history, i, history.horizon(), n_l).ok())
                .collect()
        } else {
            Vec::new()
        },
        ledger: o
            .ledgers
            .then(|| ledger(&history.global_dag(), spec.ledger_color).blocks),
    };
    write_atomic(&out.join("seeds").join(format!("{name}.json")), &json_bytes(&result))?;
    Ok(result)
}

fn final_rewards(history: &History, spec: &ExperimentSpec) -> Result<Vec<u8>, ExperimentError> {
    let mask = history.published_mask(history.horizon());
    let book = RewardBook::new(history.dag(), history.minors(), Some(&mask), spec.params.n_ell as u32);
    let mut out = Vec::new();
    for r in book.reports() {
        serde_json::to_writer(&mut out, &r).expect("reports serialize");
        out.push(b'\n');
    }
    Ok(out)
}

/// Runs every seed (in parallel), writes the artifacts into `out` and
/// evaluates the assertions.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentOutcome, ExperimentError> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|source| ExperimentError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let seeds: Vec<u64> = spec.seeds.0.clone().collect();
    let results: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&seed| analyse(spec, seed, out))
        .collect::<Result<_, _>>()?;

    let kinds = spec.strategy_kinds();
    let names: Vec<String> = kinds.iter().map(|k| k.build().name()).collect();
    if spec.outputs.utilities {
        let rows: Vec<UtilityRow> = results
            .iter()
            .flat_map(|r| {
                r.utilities.iter().map(|u| UtilityRow {
                    seed: r.seed,
                    miner: u.miner,
                    strategy: &names[u.miner],
                    numerator: u.numerator,
                    denominator: u.denominator,
                    utility: u.utility,
                })
            })
            .collect();
        write_atomic(&out.join("utilities.csv"), &csv_bytes(&rows))?;
    }

    let deviation = match &spec.deviation {
        Some(d) => {
            let table = deviation_experiment(
                &spec.config,
                &d.adversary,
                spec.seeds.0.clone(),
                spec.params.n_ell as u32,
            )?;
            write_atomic(&out.join("deviation.csv"), &csv_bytes(&table.rows))?;
            Some(table)
        }
        None => None,
    };

    let mut failures = Vec::new();
    let safe: Option<Vec<bool>> = spec.outputs.safety.then(|| {
        results
            .iter()
            .map(|r| r.safety.as_ref().is_some_and(|s| s.pass))
            .collect()
    });
    if let Some(min) = spec.assertions.min_safe_fraction {
        match &safe {
            Some(s) => {
                let frac = s.iter().filter(|&&x| x).count() as f64 / s.len().max(1) as f64;
                if frac < min {
                    failures.push(format!("safe fraction {frac:.4} below {min}"));
                }
            }
            None => failures.push("min_safe_fraction needs outputs.safety".into()),
        }
    }
    if spec.assertions.desiderata_on_safe {
        match &safe {
            Some(s) if spec.outputs.desiderata => {
                for (r, &ok) in results.iter().zip(s) {
                    let d = r.desiderata.as_ref().expect("requested");
                    if ok && !d.desiderata_hold() {
                        failures.push(format!("seed {}: desiderata violated on a safe history", r.seed));
                    }
                }
            }
            _ => failures.push("desiderata_on_safe needs outputs.safety and outputs.desiderata".into()),
        }
    }
    if let Some(max) = spec.assertions.max_deviation_gain {
        match &deviation {
            Some(t) if t.summary.mean_delta <= max => {}
            Some(t) => failures.push(format!("mean deviation gain {} above {max}", t.summary.mean_delta)),
            None => failures.push("max_deviation_gain needs a deviation section".into()),
        }
    }

    let summary = ExperimentSummary {
        seeds: spec.seeds.to_string(),
        runs: results.len(),
        safe_runs: safe.map(|s| s.iter().filter(|&&x| x).count()),
        passed: failures.is_empty(),
        failures,
        deviation: deviation.as_ref().map(|t| t.summary.clone()),
    };
    write_atomic(&out.join("summary.json"), &json_bytes(&summary))?;
    Ok(ExperimentOutcome {
        results,
        deviation,
        summary,
    })
}
