use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use unipool_core::query::{retrieve, QueryRequirement};
use unipool_core::sim::{generate, red_light_corpus, ScenarioConfig};
use unipool_core::{GeoAnchor, Partition, Planner, RulePlanner};

use unipool::client::Client;
use unipool::config::Config;
use unipool::files;
use unipool::pipeline::Ingestor;
use unipool::planner_process::ProcessPlanner;
use unipool::report::{render_diff, render_table, run_report, write_reports, Arms, EvalOptions};
use unipool::server::{serve, shutdown_signal, Service};
use unipool::store::PoolStore;

#[derive(Parser)]
#[command(name = "unipool", version, about = "Temporally partitioned V2X knowledge pool")]
struct Cli {
    /// TOML config file; `UNIPOOL_<KEY>` variables override it.
    #[arg(long, global = true, env = "UNIPOOL_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pool service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Ingest NDJSON raw records, into a running service or a local store.
    Ingest {
        /// Record file, or `-` for stdin.
        #[arg(long, default_value = "-")]
        input: PathBuf,
        #[arg(long, conflicts_with = "store")]
        addr: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Retrieve the fused context for a requirement and print the payload.
    Query {
        #[arg(long)]
        intent: String,
        /// Query time in microseconds.
        #[arg(long)]
        at: i64,
        #[arg(long, default_value = "")]
        perception: String,
        #[arg(long, default_value = "int-0")]
        intersection: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, default_value_t = 4.5)]
        horizon: f64,
        #[arg(long, conflicts_with = "store")]
        addr: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print one partition as NDJSON sorted by intersection and time.
    Dump {
        #[arg(long)]
        partition: Partition,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Scenario generation.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Evaluate planning over a corpus with and/or without retrieval.
    RunEval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        retrieval: Arms,
        #[arg(long)]
        out: PathBuf,
        /// Also print the metrics table.
        #[arg(long)]
        table: bool,
        /// External planner command; the rule baseline is used otherwise.
        #[arg(long)]
        planner_cmd: Option<String>,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Write one scenario document.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        n_agents: usize,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the emitted raw records as NDJSON.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Write the red-light corpus, one file per scenario.
    RedLight {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open_store(cfg: &Config, store: Option<PathBuf>) -> anyhow::Result<Arc<PoolStore>> {
    let dir = store.unwrap_or_else(|| cfg.store.clone());
    Ok(Arc::new(PoolStore::open(&dir, cfg.store_options.clone()).with_context(|| format!("opening store {}", dir.display()))?))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = Config::load(cli.config.as_deref())?;
    let stdout = std::io::stdout();

    match cli.command {
        Command::Serve { bind, store } => {
            let bind = bind.unwrap_or_else(|| cfg.bind.clone());
            let store = open_store(&cfg, store)?;
            let stats = store.stats();
            log::info!("store: {} static, {} hf, {} sf rows", stats.static_rows, stats.hf, stats.sf);
            let service = Arc::new(Service::new(store, &cfg));
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                log::info!("listening on {}", listener.local_addr()?);
                let every = std::time::Duration::from_secs_f64(cfg.compact_interval_s);
                serve(listener, service, Some(every), shutdown_signal()).await?;
                log::info!("shut down cleanly");
                anyhow::Ok(())
            })?;
        }
        Command::Ingest { input, addr, store } => {
            let records = files::read_records(files::open_input(&input)?)?;
            let report = match addr {
                Some(addr) => Client::connect(addr.as_str())?.ingest(&records)?,
                None => {
                    let store = open_store(&cfg, store)?;
                    let rep = Ingestor::new(store.clone(), cfg.thresholds).with_sync_window(cfg.sync_window_us).ingest(records);
                    store.sync()?;
                    rep
                }
            };
            for e in &report.errors {
                log::warn!("{e}");
            }
            let mut out = stdout.lock();
            writeln!(out, "records={} entries={} stored={} errors={}", report.records, report.entries, report.stored, report.errors.len())?;
        }
        Command::Query { intent, at, perception, intersection, x, y, horizon, addr, store } => {
            let req = QueryRequirement {
                ego_anchor: GeoAnchor::new(intersection, x, y),
                intent,
                perception_summary: perception,
                t_now_us: at,
                horizon_s: horizon,
            };
            let payload = match addr {
                Some(addr) => Client::connect(addr.as_str())?.query(&req)?.payload,
                None => retrieve(&*open_store(&cfg, store)?, &req, &cfg.retrieval)?.payload,
            };
            writeln!(stdout.lock(), "{payload}")?;
        }
        Command::Dump { partition, store } => {
            let store = open_store(&cfg, store)?;
            files::write_ndjson(stdout.lock(), store.scan(partition).iter().map(|e| &**e))?;
        }
        Command::Sim { command } => match command {
            SimCommand::Generate { seed, n_agents, duration, out, records } => {
                let cfg = ScenarioConfig {
                    name: format!("scenario-{seed}"),
                    seed,
                    n_agents,
                    duration_s: duration,
                    ..ScenarioConfig::default()
                };
                if let Err(e) = cfg.validate() {
                    bail!("invalid scenario: {e}");
                }
                let s = generate(&cfg);
                files::write_scenario(&out, &s)?;
                if let Some(path) = records {
                    let f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    files::write_ndjson(f, s.emit_records())?;
                }
            }
            SimCommand::RedLight { n, seed, out } => {
                if n == 0 {
                    bail!("--n must be at least 1");
                }
                let written = files::write_corpus(&out, &red_light_corpus(n, seed))?;
                log::info!("wrote {} scenarios to {}", written.len(), out.display());
            }
        },
        Command::RunEval { corpus, retrieval, out, table, planner_cmd } => {
            let scenarios = files::load_corpus(&corpus)?;
            let planner: Box<dyn Planner> = match planner_cmd.as_deref() {
                Some(cmd) => Box::new(ProcessPlanner::from_command_line(cmd).context("empty --planner-cmd")?),
                None => Box::new(RulePlanner),
            };
            let opts = EvalOptions {
                thresholds: cfg.thresholds,
                params: cfg.retrieval.clone(),
                ..EvalOptions::default()
            };
            let reports: Vec<_> = retrieval
                .flags()
                .iter()
                .map(|&on| run_report(&scenarios, on, planner.as_ref(), &opts))
                .collect();
            write_reports(&out, &reports)?;
            let mut w = stdout.lock();
            if table {
                write!(w, "{}", render_table(&reports))?;
            }
            if let [on, off] = reports.as_slice() {
                write!(w, "{}", render_diff(on, off))?;
            }
            if reports.iter().all(|r| r.n_scenarios == 0) {
                bail!("every scenario failed");
            }
        }
    }
    Ok(())
}
