use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use expose_core::attack::{ObservationFile, ScenarioFile};
use expose_core::bfs::{BfsOptions, DEFAULT_CAP, DEFAULT_STOP_THRESHOLD};
use expose_core::harness::Algorithm;
use expose_core::{
    analyze, bfs_detect, expose, make_zone, read_case, run_experiment, simulate_attack, ExperimentConfig, Grid,
    OperatingPoint,
};

#[derive(Parser)]
#[command(name = "expose", version, about = "Failed-line detection and voltage recovery in attacked grid zones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CaseArg {
    /// MATPOWER-style case file.
    #[arg(long)]
    case: PathBuf,
}

#[derive(Args)]
struct OutputArg {
    /// Write JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Rank deficits, covering matching and acyclicity of a zone.
    ZoneAnalyze {
        #[command(flatten)]
        case: CaseArg,
        /// Zone bus ids, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        zone: Vec<usize>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Apply a scenario file and write the resulting observation.
    Simulate {
        #[command(flatten)]
        case: CaseArg,
        /// JSON `{zone_nodes, failed_lines}`.
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Run the detector on an observation.
    Detect {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long)]
        observation: PathBuf,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Exhaustive search over in-zone failure sets.
    Bfs {
        #[command(flatten)]
        case: CaseArg,
        #[arg(long)]
        observation: PathBuf,
        /// Largest zone (in lines) searched without `--no-cap`.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[arg(long)]
        no_cap: bool,
        /// Stop at the first subset with error below the threshold
        /// (default 10 times the power-flow tolerance).
        #[arg(long, num_args = 0..=1, default_missing_value = "default")]
        early_stop: Option<String>,
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Run every scenario of a zone configuration and write metric tables.
    Experiment {
        #[command(flatten)]
        case: CaseArg,
        /// JSON experiment configuration.
        #[arg(long)]
        zones: PathBuf,
        #[arg(long)]
        kmax: Option<usize>,
        /// Comma separated: expose, bfs.
        #[arg(long, value_delimiter = ',')]
        algs: Option<Vec<Algorithm>>,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_grid(case: &CaseArg) -> Result<Grid> {
    read_case(&case.case).with_context(|| format!("reading case {}", case.case.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit<T: Serialize>(value: &T, out: &OutputArg) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &out.output {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ZoneAnalyze { case, zone, out } => {
            let grid = load_grid(&case)?;
            let zone = make_zone(&grid, &zone)?;
            emit(&analyze(&grid, &zone).report(&grid), &out)
        }
        Command::Simulate { case, scenario, out } => {
            let grid = load_grid(&case)?;
            let scenario = read_json::<ScenarioFile>(&scenario)?.resolve(&grid)?;
            let pre = OperatingPoint::solve(&grid).context("pre-attack power flow")?;
            let sim = simulate_attack(&grid, &scenario, &pre)?;
            emit(&sim.observation.to_file(&grid), &out)
        }
        Command::Detect { case, observation, out } => {
            let grid = load_grid(&case)?;
            let obs = read_json::<ObservationFile>(&observation)?.resolve(&grid)?;
            let diag = analyze(&grid, &obs.zone);
            let result = expose(&grid, &obs, &diag)?;
            emit(&result.report(&grid, &obs), &out)
        }
        Command::Bfs {
            case,
            observation,
            cap,
            no_cap,
            early_stop,
            parallel,
            out,
        } => {
            let grid = load_grid(&case)?;
            let obs = read_json::<ObservationFile>(&observation)?.resolve(&grid)?;
            let early_stop = match early_stop.as_deref() {
                None => None,
                Some("default") => Some(DEFAULT_STOP_THRESHOLD),
                Some(v) => Some(v.parse::<f64>().with_context(|| format!("bad threshold `{v}`"))?),
            };
            let options = BfsOptions {
                cap: (!no_cap).then_some(cap),
                early_stop,
                parallel,
            };
            emit(&bfs_detect(&grid, &obs, &options)?.report(&grid), &out)
        }
        Command::Experiment {
            case,
            zones,
            kmax,
            algs,
            parallel,
            out,
        } => {
            let grid = load_grid(&case)?;
            let text = fs::read_to_string(&zones).with_context(|| format!("reading {}", zones.display()))?;
            let mut config = ExperimentConfig::from_json(&text)?;
            if let Some(k) = kmax {
                config.k_max = k;
            }
            if let Some(a) = algs {
                config.algorithms = a;
            }
            config.parallel |= parallel;
            let output = run_experiment(&grid, &config)?;
            output.write(&out)?;
            let rows = output.metrics.len();
            if rows == 0 {
                bail!("no scenarios were run");
            }
            eprintln!(
                "{} scenarios, {} excluded, {rows} metric rows written to {}",
                output.scenarios.len(),
                output.excluded.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
