use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roars_cli::bench::{run_benchmark, write_csv, write_report, BenchConfig};
use roars_cli::config::{ensure_parent, read_json};
use roars_cli::sim::{run_online, RoarsModel, RunSpec, SchedulerKind};
use roars_cli::train::{run_train, sibling, TrainArgs, TrainFile};
use roars_cli::{init_threads, CliError};
use roars_core::policy::load_checkpoint;
use roars_core::rewriter::SearchConfig;
use roars_core::scenario::{generate_scenario, load_scenario, save_scenario, GenConfig};
use roars_core::schedule::{write_schedule_dump, Instance};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "roars", version, about = "Online telescope follow-up scheduling by learned schedule rewriting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario from a generator config.
    Generate {
        /// Generator config (JSON); defaults to the single-site setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a rewriting policy.
    Train {
        /// Generator config (JSON) for training and validation instances.
        #[arg(long)]
        scenario_config: Option<PathBuf>,
        /// Training config (JSON): `{"train": {...}, "search": {...}}`.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Best-validation checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Learning curve CSV; defaults to `<out>.curve.csv`.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Continue from `<out>.state.json` if it exists.
        #[arg(long)]
        resume: bool,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of optimizer steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Run one scheduler online over a scenario.
    Simulate {
        /// Scenario file (JSON) from `generate`.
        #[arg(long)]
        scenario: PathBuf,
        /// Heuristic name (STF, FCFS, ..., SQTF, ...), OFFLINE, ROARS or ROARS-RANDOM.
        #[arg(long, default_value = "FCFS")]
        scheduler: String,
        /// Policy checkpoint, required by ROARS.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Waiting-queue capacity W.
        #[arg(long, default_value_t = roars_core::heuristics::DEFAULT_QUEUE_CAP)]
        queue_cap: usize,
        /// Search budgets (JSON) for ROARS and ROARS-RANDOM.
        #[arg(long)]
        search: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Schedule dump, one JSON assignment per line.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Result row (CSV); printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured scheduler on every configured instance.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for rows.csv, summary.csv, timing.csv and slowdown.svg.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's scheduler seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a built-in generator preset, or summarize a file.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
}

#[derive(Subcommand)]
enum Inspect {
    /// Print a generator preset as JSON.
    Preset {
        /// `intra` (one site) or `distributed` (five sites).
        name: String,
        /// Divide the arrival window by this factor.
        #[arg(long, default_value_t = 1)]
        scale: u32,
    },
    /// Summarize a scenario file.
    Scenario { path: PathBuf },
    /// Print a checkpoint header.
    Checkpoint { path: PathBuf },
}

#[derive(Serialize)]
struct SimRow {
    scheduler: String,
    seed: u64,
    tasks: usize,
    placed: usize,
    dropped: usize,
    avg_slowdown: Option<f64>,
    replans: usize,
}

fn gen_config(path: &Option<PathBuf>) -> Result<GenConfig, CliError> {
    let gen = match path {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    gen.validate()?;
    Ok(gen)
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Generate { config, out, seed } => {
            let gen = gen_config(&config)?;
            let sc = generate_scenario(&gen, seed)?;
            ensure_parent(&out)?;
            save_scenario(&sc, &out)?;
        }
        Command::Train {
            scenario_config,
            train_config,
            out,
            curve,
            resume,
            seed,
            steps,
        } => {
            let gen = gen_config(&scenario_config)?;
            let mut file: TrainFile = match &train_config {
                Some(p) => read_json(p)?,
                None => TrainFile::default(),
            };
            if let Some(s) = seed {
                file.train.seed = s;
            }
            if let Some(s) = steps {
                file.train.steps = s;
            }
            let args = TrainArgs {
                gen,
                file,
                curve: curve.unwrap_or_else(|| sibling(&out, ".curve.csv")),
                state: sibling(&out, ".state.json"),
                out,
                resume,
            };
            let st = run_train(&args)?;
            println!("best validation slowdown {:.4} at step {}", st.best_val, st.best_step);
        }
        Command::Simulate {
            scenario,
            scheduler,
            checkpoint,
            queue_cap,
            search,
            seed,
            dump,
            out,
        } => {
            let kind: SchedulerKind = scheduler.parse()?;
            let inst = Arc::new(Instance::new(load_scenario(&scenario)?)?);
            let search: SearchConfig = match &search {
                Some(p) => read_json(p)?,
                None if inst.num_sites() > 1 => SearchConfig::distributed(),
                None => SearchConfig::intra_site(),
            };
            search.validate().map_err(CliError::Invalid)?;
            let model = match &checkpoint {
                Some(p) => Some(RoarsModel::load(p, search)?),
                None => None,
            };
            let spec = RunSpec {
                kind,
                queue_cap,
                model,
                search,
                seed,
            };
            let (dag, m) = run_online(&inst, &spec)?;
            if let Some(p) = &dump {
                ensure_parent(p)?;
                let f = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
                let mut w = std::io::BufWriter::new(f);
                write_schedule_dump(&dag, &mut w).map_err(|e| CliError::io(p, e))?;
                w.flush().map_err(|e| CliError::io(p, e))?;
            }
            let row = SimRow {
                scheduler: kind.to_string(),
                seed,
                tasks: m.num_tasks,
                placed: m.placed,
                dropped: m.dropped.len(),
                avg_slowdown: m.avg_slowdown,
                replans: m.replans,
            };
            // wall time stays out of the CSV so that reruns are byte-identical
            eprintln!("wall time {:.3}s", m.wall_time);
            match &out {
                Some(p) => write_csv(std::slice::from_ref(&row), p)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    w.serialize(&row)?;
                    w.flush().map_err(|e| CliError::io("stdout", e))?;
                }
            }
        }
        Command::Bench { config, out, seed } => {
            let mut cfg: BenchConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_benchmark(&cfg, config.parent())?;
            write_report(&report, &cfg, &out)?;
            for r in &report.summary {
                let mean = r.mean_avg_slowdown.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into());
                println!("{:<16} {:<14} {:>8} (n={}, errors={})", r.setting, r.scheduler, mean, r.instances, r.errors);
            }
        }
        Command::Inspect { what } => match what {
            Inspect::Scenario { path } => {
                let sc = load_scenario(&path)?;
                let inst = Instance::new(sc)?;
                let sc = inst.scenario();
                println!("seed       {}", sc.rng_seed);
                println!("sites      {}", inst.num_sites());
                println!("filters    {}", inst.num_filters());
                println!("horizon    {} steps of {} min from {}", inst.horizon(), sc.grid.step_minutes, sc.grid.epoch_utc);
                println!("targets    {}", sc.targets.len());
                println!("tasks      {}", inst.num_tasks());
                let total: u64 = inst.tasks().iter().map(|t| t.exposure as u64).sum();
                println!("exposure   {total} steps in total");
            }
            Inspect::Checkpoint { path } => {
                let (net, header) = load_checkpoint(&path, None)?;
                println!("{}", serde_json::to_string_pretty(&header).expect("header serializes"));
                println!("parameters {}", net.num_params());
            }
            Inspect::Preset { name, scale } => {
                let gen = match name.as_str() {
                    "intra" => GenConfig::intra_site(),
                    "distributed" => GenConfig::distributed(),
                    other => return Err(CliError::Invalid(format!("unknown preset {other:?}"))),
                };
                println!("{}", serde_json::to_string_pretty(&gen.scaled(scale)).expect("config serializes"));
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roars: {e}");
            ExitCode::FAILURE
        }
    }
}
