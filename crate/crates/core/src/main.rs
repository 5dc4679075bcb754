use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use sweepherd::experiment::{expand_forks, parse_descriptor, DescriptorError, ExperimentDescriptor};
use sweepherd::herd::{self, master_run, Worker, WorkerConfig};
use sweepherd::reports::{self, PlotStyle, ReportQuery};
use sweepherd::runner::{run_local, CancelRegistry, ProgressReport, RunState, RunStatus};
use sweepherd::service::{self, ServiceConfig};

#[derive(Parser)]
#[command(name = "sweepherd", version, about = "Run, distribute and report reinforcement-learning parameter sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a descriptor; lists violations and exits 1 when invalid.
    Validate { file: PathBuf },
    /// Print the experimental units a descriptor expands into.
    Expand { file: PathBuf },
    /// Run every unit on this machine.
    RunLocal {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Run the worker daemon.
    Worker {
        #[arg(long)]
        cores: u32,
        /// Job port; defaults to $SIMION_WORKER_PORT or 47357.
        #[arg(long)]
        port: Option<u16>,
        /// UDP discovery port; defaults to $SIMION_DISCOVERY_PORT or 47358.
        #[arg(long)]
        discovery_port: Option<u16>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Serve the HTTP API and the UI bundle.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory with the UI bundle, served under `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Worker job addresses to probe directly.
        #[arg(long, value_delimiter = ',')]
        workers: Vec<String>,
        /// UDP discovery targets; defaults to the local broadcast address.
        #[arg(long, value_delimiter = ',')]
        discover: Vec<String>,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Run every unit on remote workers and wait for the results.
    Launch {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate finished logs into an SVG plot and optionally a CSV table.
    Report {
        dir: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        svg: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn read_descriptor(file: &Path) -> anyhow::Result<ExperimentDescriptor> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    parse_descriptor(&text).map_err(|e| describe(file, e))
}

fn describe(file: &Path, e: DescriptorError) -> anyhow::Error {
    let lines: Vec<String> = e.violations().iter().map(|v| format!("  {v}")).collect();
    anyhow::anyhow!("{} is invalid:\n{}", file.display(), lines.join("\n"))
}

fn resolve(addrs: &[String], default_port: u16) -> anyhow::Result<Vec<SocketAddr>> {
    let mut out = Vec::new();
    for a in addrs.iter().filter(|a| !a.is_empty()) {
        let spec = if a.contains(':') { a.clone() } else { format!("{a}:{default_port}") };
        let resolved = spec.to_socket_addrs().with_context(|| format!("resolving {spec}"))?;
        out.extend(resolved.take(1));
    }
    Ok(out)
}

fn progress_line(r: &ProgressReport) {
    let reward = r.avg_episode_reward.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    eprintln!("{:<28} {:<9} {:>6.1}% avg_reward={reward}", r.unit_id, format!("{:?}", r.state).to_lowercase(), r.fraction_done * 100.0);
}

fn summary(statuses: &BTreeMap<String, RunStatus>) -> bool {
    println!("{:<28} {:<9} {:>8} {:>12} {:>12}", "unit", "state", "progress", "avg_reward", "last_eval");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    for (id, s) in statuses {
        println!(
            "{:<28} {:<9} {:>7.1}% {:>12} {:>12}{}",
            id,
            format!("{:?}", s.state).to_lowercase(),
            s.progress * 100.0,
            opt(s.avg_episode_reward),
            opt(s.last_eval_reward),
            s.diagnostic.as_deref().map(|d| format!("  {d}")).unwrap_or_default()
        );
    }
    statuses.values().all(|s| s.state == RunState::Finished)
}

fn cancel_on_interrupt(cancel: std::sync::Arc<CancelRegistry>) {
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("interrupted; cancelling");
            cancel.cancel_all();
        }
    });
}

fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Validate { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            match parse_descriptor(&text).and_then(|d| expand_forks(&d).map(|u| (d, u.len()))) {
                Ok((d, n)) => {
                    println!("{}: valid, {n} unit(s)", d.name);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    for v in e.violations() {
                        println!("{v}");
                    }
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Expand { file } => {
            let d = read_descriptor(&file)?;
            for u in expand_forks(&d).map_err(|e| describe(&file, e))? {
                let cols: Vec<String> = u.assignments.iter().map(|(k, v)| format!("{k}={}", v.canonical())).collect();
                println!("{}\t{}", u.unit_id, cols.join("\t"));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RunLocal { file, out, jobs } => {
            let d = read_descriptor(&file)?;
            let statuses = run_local(&d, &out, jobs.max(1), &progress_line, &CancelRegistry::new())?;
            Ok(if summary(&statuses) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Worker { cores, port, discovery_port, work_dir, id } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let w = Worker::start(WorkerConfig {
                    bind: (Ipv4Addr::UNSPECIFIED, port.unwrap_or_else(herd::job_port)).into(),
                    discovery: Some((Ipv4Addr::UNSPECIFIED, discovery_port.unwrap_or_else(herd::discovery_port)).into()),
                    cores,
                    work_dir: work_dir.unwrap_or_else(|| std::env::temp_dir().join("sweepherd-worker")),
                    worker_id: id,
                })
                .await?;
                let d = w.descriptor();
                eprintln!("worker {} ({} cores) on {}", d.worker_id, d.total_cores, w.job_addr());
                tokio::signal::ctrl_c().await?;
                w.shutdown();
                w.wait().await;
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Serve { root, bind, static_dir, workers, discover, jobs } => {
            let discovery_targets = if discover.is_empty() {
                vec![SocketAddr::from((Ipv4Addr::BROADCAST, herd::discovery_port()))]
            } else {
                resolve(&discover, herd::discovery_port())?
            };
            let cfg = ServiceConfig { root, static_dir, discovery_targets, static_workers: resolve(&workers, herd::job_port())?, local_jobs: jobs };
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg, bind))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Launch { file, workers, out } => {
            let d = read_descriptor(&file)?;
            let addrs = resolve(&workers, herd::job_port())?;
            if addrs.is_empty() {
                bail!("no worker addresses given");
            }
            let rt = tokio::runtime::Runtime::new()?;
            let statuses = rt.block_on(async {
                let cancel = std::sync::Arc::new(CancelRegistry::new());
                cancel_on_interrupt(cancel.clone());
                master_run(&d, &addrs, &out, &progress_line, &cancel).await
            })?;
            Ok(if summary(&statuses) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Report { dir, query, svg, csv } => {
            let text = std::fs::read_to_string(&query).with_context(|| format!("reading {}", query.display()))?;
            let q: ReportQuery = serde_json::from_str(&text).with_context(|| format!("parsing {}", query.display()))?;
            let results = reports::load_experiment(&dir)?;
            for w in &results.warnings {
                eprintln!("warning: {w}");
            }
            let series = reports::run_query(&results, &q)?;
            let title = match &results.descriptor {
                Some(d) => d.name.clone(),
                None => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            };
            let style = PlotStyle { title, group_by: q.group_by.clone(), ..PlotStyle::default() };
            reports::emit_plot(&series, &style, &svg)?;
            if let Some(csv) = csv {
                reports::emit_table(&series, &csv)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
