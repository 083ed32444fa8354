use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use mtloop_api::engine::EngineError;
use mtloop_api::http::{router, serve, RouterOptions};
use mtloop_api::{open_engine, ServiceConfig, StartupError};
use mtloop_cli::report::{topk_table, write_comparison, write_simulation};
use mtloop_cli::{compare_strategies, run_simulation, SimError, SimulationConfig};
use mtloop_core::corpus::write_corpus;
use mtloop_core::store::{write_corpus_jsonl, Store, SystemClock};

#[derive(Parser)]
#[command(name = "mtloop", version, about = "Post-editing loop with online quality estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulated annotation campaign and write its report.
    Simulate {
        /// Simulation TOML; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the event log next to the report.
        #[arg(long)]
        events: bool,
    },
    /// Annotations needed per strategy to reach a held-out top-1 target.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "tripartite,random")]
        strategies: Vec<String>,
        /// Number of seeds, starting at the config seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the labelled corpus held in the service's data directory.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with hidden references.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        segments: usize,
        #[arg(long, default_value_t = 5)]
        providers: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Exit status: 2 for configuration problems, 3 for provider failures.
#[derive(Debug)]
enum Failure {
    Config(String),
    Provider(String),
    Other(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Corpus { .. } | SimError::Input { .. } | SimError::BudgetZero => Failure::Config(e.to_string()),
            SimError::Engine(EngineError::Provider(_)) => Failure::Provider(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<StartupError> for Failure {
    fn from(e: StartupError) -> Self {
        match &e {
            StartupError::Config(_) => Failure::Config(e.to_string()),
            StartupError::Engine(EngineError::Provider(_)) | StartupError::Seed { source: EngineError::Provider(_), .. } => {
                Failure::Provider(e.to_string())
            }
            _ => Failure::Other(e.to_string()),
        }
    }
}

fn sim_config(path: Option<&PathBuf>) -> Result<SimulationConfig, Failure> {
    Ok(match path {
        Some(p) => SimulationConfig::load(p)?,
        None => SimulationConfig::default(),
    })
}

fn service_config(path: &Path) -> Result<(ServiceConfig, PathBuf), Failure> {
    let cfg = ServiceConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    Ok((cfg, base))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            events,
        } => {
            let mut cfg = sim_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let run = run_simulation(&cfg)?;
            write_simulation(&out, &run.report, events.then_some(run.events.as_slice()))?;
            print!("{}", topk_table(&run.report));
            println!(
                "held-out top-1 {:.3} (baseline {:.3}), {} human / {} pseudo labels",
                run.report.heldout.top1, run.report.heldout.random_baseline_top1, run.report.human_labels, run.report.pseudo_labels
            );
        }
        Command::Compare {
            config,
            strategies,
            seeds,
            target,
            out,
        } => {
            let cfg = sim_config(config.as_ref())?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let report = compare_strategies(&cfg, &strategies, &seed_list, target)?;
            if let Some(dir) = out {
                write_comparison(&dir, &report)?;
            }
            for s in &report.summary {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
                println!(
                    "{:<20} mean {:>8} std {:>8} reached {}/{}",
                    s.strategy,
                    fmt(s.mean_annotations),
                    fmt(s.std_annotations),
                    s.reached,
                    s.reached + s.unreachable
                );
            }
        }
        Command::Serve { config } => {
            let (cfg, base) = service_config(&config)?;
            let engine = open_engine(&cfg, &base)?;
            let opts = RouterOptions {
                auth_token: cfg.server.auth_token.clone(),
                batch_size: cfg.scheduler.batch_size,
                webapp_dir: cfg.server.webapp_dir.as_ref().map(|d| base.join(d)),
            };
            let app = router(Arc::new(Mutex::new(engine)), opts);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
            rt.block_on(serve(app, &cfg.server.bind)).map_err(|e| Failure::Other(e.to_string()))?;
        }
        Command::Export { config, out } => {
            let (cfg, base) = service_config(&config)?;
            let store = Store::open_dir(&base.join(&cfg.server.data_dir), Box::new(SystemClock)).map_err(|e| Failure::Other(e.to_string()))?;
            let file = std::fs::File::create(&out).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
            let n = write_corpus_jsonl(store.state(), std::io::BufWriter::new(file)).map_err(|e| Failure::Other(e.to_string()))?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Synth {
            out,
            segments,
            providers,
            seed,
        } => {
            let cfg = SimulationConfig {
                segments,
                n_providers: providers,
                ..SimulationConfig::default()
            };
            cfg.validate()?;
            let corpus = mtloop_cli::synth::generate(&cfg.synth(), seed);
            let file = std::fs::File::create(&out).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
            write_corpus(&corpus, std::io::BufWriter::new(file)).map_err(|e| Failure::Other(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Provider(m)) => {
            eprintln!("provider failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
