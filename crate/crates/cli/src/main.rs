//! `colordag` command-line front end.
//!
//! Exit status: 0 when everything checked passes, 1 when a check or
//! assertion fails, 2 for usage, configuration and I/O errors.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use colordag::analysis::{check_desiderata_with, check_safe, DesiderataOptions};
use colordag::experiment::{run_experiment, write_atomic, ExperimentSpec, SeedRange};
use colordag::ledger::{extended_ledger, ledger};
use colordag::params::{check_suitability, solve_min_nl, DeltaCRule, Fraction, ParamTuple};
use colordag::reward::RewardBook;
use colordag::sim::{run, History, SchedulerConfig, StrategyKind};
use colordag::{BlockDag, Color, Minors};
use serde::Serialize;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "COLORDAG_OUT";

#[derive(Parser)]
#[command(name = "colordag", version, about = "Simulate and analyze colordag blockdags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a seed range and write one event log per seed.
    Simulate {
        /// Scheduler configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Strategy per miner as a JSON array; all honest when omitted.
        #[arg(long)]
        strategies: Option<PathBuf>,
        /// Half-open seed range `a..b`.
        #[arg(long)]
        seeds: SeedRange,
        /// Output directory [default: $COLORDAG_OUT or `out`].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a history for safety and the ledger desiderata.
    ///
    /// Exits 1 unless the history is safe and every desideratum holds.
    Check {
        /// Event log written by `simulate`.
        #[arg(long)]
        history: PathBuf,
        /// Parameter tuple (JSON).
        #[arg(long)]
        params: PathBuf,
        /// Ledger color.
        #[arg(long, default_value_t = 0)]
        color: Color,
        /// Rounds between compared ledger views.
        #[arg(long, default_value_t = 100)]
        ledger_stride: u64,
        /// Rounds between compared reward views.
        #[arg(long, default_value_t = 1000)]
        reward_stride: u64,
    },
    /// Print one reward report per block of a dag, as JSON lines.
    Reward {
        /// Dag in line-JSON form.
        #[arg(long)]
        dag: PathBuf,
        /// Acceptability threshold `N_l`.
        #[arg(long)]
        nl: u32,
    },
    /// Print the ledger of a dag as a JSON array of block ids.
    Ledger {
        /// Dag in line-JSON form.
        #[arg(long)]
        dag: PathBuf,
        /// Ledger color.
        #[arg(long)]
        color: Color,
        /// Print the ordering of all acceptable blocks instead.
        #[arg(long, requires = "nl")]
        extended: bool,
        /// Acceptability threshold, needed by `--extended`.
        #[arg(long)]
        nl: Option<u32>,
    },
    /// Parameter suitability checks and solver.
    #[command(subcommand)]
    Params(ParamsCommand),
    /// Run a batch experiment and print its comparison table as CSV.
    ///
    /// Exits 1 when one of the config's assertions fails.
    Experiment {
        /// Experiment specification (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: $COLORDAG_OUT or `out`].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Adversarial power share, as a decimal or a fraction such as `1/3`.
    #[arg(long)]
    alpha: Fraction,
    #[arg(long)]
    epsilon: f64,
    /// Network delay bound.
    #[arg(long)]
    delta_net: u32,
    /// Number of colors.
    #[arg(long)]
    nc: u32,
}

#[derive(Subcommand)]
enum ParamsCommand {
    /// Evaluate every constraint for one tuple; exits 1 if any fails.
    Check {
        #[command(flatten)]
        common: Common,
        /// Ledger depth `N_l`.
        #[arg(long)]
        nl: u64,
        #[arg(long)]
        deltac: f64,
        /// Horizon; defaults to `N_l^2`.
        #[arg(long)]
        tmax: Option<u64>,
    },
    /// Smallest `N_l` that passes with `T_max = N_l^2`.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Fixed `delta_C`.
        #[arg(long, conflicts_with = "deltac_factor", required_unless_present = "deltac_factor")]
        deltac: Option<f64>,
        /// Use `delta_C = f / N_C` instead.
        #[arg(long)]
        deltac_factor: Option<f64>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing {}", path.display()))
}

fn read_dag(path: &Path) -> Result<BlockDag> {
    BlockDag::from_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn status(pass: bool) -> ExitCode {
    ExitCode::from(if pass { 0 } else { 1 })
}

fn simulate(config: &Path, strategies: Option<&Path>, seeds: SeedRange, out: &Path) -> Result<ExitCode> {
    let config: SchedulerConfig = read_json(config)?;
    config.validate().context("invalid scheduler config")?;
    let kinds: Vec<StrategyKind> = match strategies {
        Some(p) => read_json(p)?,
        None => vec![StrategyKind::Honest; config.miners.len()],
    };
    if kinds.len() != config.miners.len() {
        bail!("{} strategies for {} miners", kinds.len(), config.miners.len());
    }
    for seed in seeds.0 {
        let cfg = SchedulerConfig { seed, ..config.clone() };
        let history = run(&cfg, kinds.iter().map(StrategyKind::build).collect())?;
        write_atomic(&out.join(format!("seed-{seed}.jsonl")), history.to_jsonl().as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CheckOutput {
    safety: colordag::analysis::SafetyVerdict,
    desiderata: colordag::analysis::DesiderataReport,
}

fn check(history: &Path, params: &Path, color: Color, opts: DesiderataOptions) -> Result<ExitCode> {
    let file = fs::File::open(history).with_context(|| format!("opening {}", history.display()))?;
    let history =
        History::read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", history.display()))?;
    let params: ParamTuple = read_json(params)?;
    params.validate()?;
    if color >= history.config().n_colors {
        bail!(
            "--color {color} but the history has {} colors",
            history.config().n_colors
        );
    }
    if opts.ledger_stride == 0 || opts.reward_stride == 0 {
        bail!("strides must be positive");
    }
    let out = CheckOutput {
        safety: check_safe(&history, &params),
        desiderata: check_desiderata_with(&history, &params, color, &opts),
    };
    print_json(&out)?;
    Ok(status(out.safety.pass && out.desiderata.desiderata_hold()))
}

fn reward(dag: &Path, nl: u32) -> Result<ExitCode> {
    let dag = read_dag(dag)?;
    let n_colors = dag.blocks().filter_map(|b| b.color()).max().map_or(1, |c| c + 1);
    let minors = Minors::build(&dag, n_colors);
    let book = RewardBook::new(&dag, &minors, None, nl);
    let mut out = io::stdout().lock();
    for r in book.reports() {
        serde_json::to_writer(&mut out, &r)?;
        writeln!(out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn params(cmd: ParamsCommand) -> Result<ExitCode> {
    match cmd {
        ParamsCommand::Check {
            common,
            nl,
            deltac,
            tmax,
        } => {
            let t_max = match tmax {
                Some(t) => t,
                None => nl.checked_mul(nl).context("N_l^2 overflows; pass --tmax")?,
            };
            let tuple = ParamTuple::from_alpha(
                common.alpha,
                common.epsilon,
                common.delta_net,
                common.nc,
                nl,
                deltac,
                t_max,
            )?;
            let verdict = check_suitability(&tuple)?;
            #[derive(Serialize)]
            struct Out {
                tuple: ParamTuple,
                verdict: colordag::params::SuitabilityVerdict,
            }
            let pass = verdict.pass;
            print_json(&Out { tuple, verdict })?;
            Ok(status(pass))
        }
        ParamsCommand::Solve {
            common,
            deltac,
            deltac_factor,
        } => {
            let rule = match (deltac, deltac_factor) {
                (Some(x), _) => DeltaCRule::Fixed(x),
                (None, Some(f)) => DeltaCRule::PerColor(f),
                (None, None) => unreachable!("clap requires one of them"),
            };
            match solve_min_nl(common.alpha, common.epsilon, common.delta_net, common.nc, rule) {
                Ok(sol) => {
                    print_json(&sol)?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(colordag::params::ParamError::NoSolution(why)) => {
                    eprintln!("no solution: {why}");
                    Ok(ExitCode::from(1))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn experiment(config: &Path, out: &Path) -> Result<ExitCode> {
    let spec = ExperimentSpec::from_json(&read(config)?)?;
    let outcome = run_experiment(&spec, out)?;
    let table = if outcome.deviation.is_some() {
        out.join("deviation.csv")
    } else {
        out.join("utilities.csv")
    };
    if table.exists() {
        io::stdout().lock().write_all(&fs::read(&table)?)?;
    }
    for f in &outcome.summary.failures {
        eprintln!("assertion failed: {f}");
    }
    Ok(status(outcome.summary.passed))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            strategies,
            seeds,
            out,
        } => simulate(&config, strategies.as_deref(), seeds, &out_dir(out)),
        Command::Check {
            history,
            params,
            color,
            ledger_stride,
            reward_stride,
        } => check(
            &history,
            &params,
            color,
            DesiderataOptions {
                ledger_stride,
                reward_stride,
            },
        ),
        Command::Reward { dag, nl } => reward(&dag, nl),
        Command::Ledger {
            dag,
            color,
            extended,
            nl,
        } => {
            let dag = read_dag(&dag)?;
            if extended {
                print_json(&extended_ledger(&dag, color, nl.expect("clap enforces --nl")).entries)?;
            } else {
                print_json(&ledger(&dag, color).blocks)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Params(cmd) => params(cmd),
        Command::Experiment { config, out } => experiment(&config, &out_dir(out)),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors by itself.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
