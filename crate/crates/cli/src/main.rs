use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use warmstart_core::amp::AmpCondition;
use warmstart_core::data::{load_dataset, FeatureDomain};
use warmstart_core::hkma::HkmaMode;
use warmstart_core::runner::{
    build_report, provider_factory, read_store, run_experiment, spawn_sessions, write_report, ExperimentConfig, Overrides, SessionManager,
};

#[derive(Parser)]
#[command(name = "warmstart-lab", version, about = "Warm-start experiments for multi-objective configuration optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method x dataset x trial cell and write the JSONL store.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Build Markdown/CSV reports from a result store.
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Output directory (default: `report/` next to the store).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start interactive H-DKP sessions and serve the feedback API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Static console build to serve at `/`.
        #[arg(long)]
        console_dir: Option<PathBuf>,
    },
    /// Parse a dataset CSV and print its schema, tier and warnings.
    ValidateData { csv: PathBuf },
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    ucb_kappa: Option<f64>,
    #[arg(long)]
    ucb_budget: Option<usize>,
    #[arg(long)]
    ucb_seed_size: Option<usize>,
    /// AMP ablation condition: number of stages (2, 3 or 4).
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    amp_condition: Option<u8>,
    #[arg(long)]
    dapr_k: Option<usize>,
    #[arg(long)]
    dapr_s: Option<usize>,
    #[arg(long)]
    dapr_n_importance: Option<usize>,
    /// scout_only, rag_only or both.
    #[arg(long, value_parser = |s: &str| s.parse::<HkmaMode>())]
    hkma_mode: Option<HkmaMode>,
    #[arg(long)]
    hkma_bscout: Option<usize>,
    #[arg(long)]
    hkma_gamma: Option<f64>,
    #[arg(long)]
    hkma_topk: Option<usize>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            trials: self.trials,
            master_seed: self.seed,
            workers: self.workers,
            output_dir: self.output_dir,
            ucb_kappa: self.ucb_kappa,
            ucb_budget: self.ucb_budget,
            ucb_seed_size: self.ucb_seed_size,
            amp_condition: self.amp_condition.and_then(AmpCondition::from_stages),
            dapr_k: self.dapr_k,
            dapr_s: self.dapr_s,
            dapr_n_importance: self.dapr_n_importance,
            hkma_mode: self.hkma_mode,
            hkma_b_scout: self.hkma_bscout,
            hkma_gamma: self.hkma_gamma,
            hkma_top_k: self.hkma_topk,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Report { store, out } => report(store, out),
        Command::Serve { config, addr, console_dir } => serve(config, addr, console_dir),
        Command::ValidateData { csv } => validate(csv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(config: PathBuf, overrides: OverrideArgs) -> Result<(), AnyError> {
    let mut cfg = ExperimentConfig::load(&config)?;
    cfg.apply(&overrides.into_overrides());
    let started = std::time::Instant::now();
    let s = run_experiment(&cfg)?;
    println!(
        "{} trial results, {} H-DKP sessions written to {} in {:.1}s",
        s.trials,
        s.sessions,
        s.store.display(),
        started.elapsed().as_secs_f64()
    );
    if s.errors > 0 {
        // failed cells are recorded, not fatal
        println!("warning: {} trial(s) failed; see the error records in the store", s.errors);
    }
    Ok(())
}

fn report(store: PathBuf, out: Option<PathBuf>) -> Result<(), AnyError> {
    let records = read_store(&store)?;
    let report = build_report(&records)?;
    let dir = out.unwrap_or_else(|| store.parent().map(|p| p.join("report")).unwrap_or_else(|| PathBuf::from("report")));
    for f in write_report(&report, &dir)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn validate(csv: PathBuf) -> Result<(), AnyError> {
    let ds = load_dataset(&csv)?;
    println!("{}: {} rows, {} features, {} objectives, tier {}", ds.name, ds.rows.len(), ds.features.len(), ds.objectives.len(), ds.tier);
    for f in &ds.features {
        match &f.domain {
            FeatureDomain::Numeric { lo, hi } => println!("  feature {} numeric [{lo}, {hi}], median {}", f.name, f.median_or_mode),
            FeatureDomain::Symbolic { categories } => {
                println!("  feature {} symbolic {{{}}}, mode {}", f.name, categories.join(", "), f.median_or_mode)
            }
        }
    }
    for o in &ds.objectives {
        println!("  objective {} {:?} [{}, {}]", o.name, o.direction, o.lo, o.hi);
    }
    for w in &ds.warnings {
        println!("  warning: {w}");
    }
    Ok(())
}

fn serve(config: PathBuf, addr: String, console_dir: Option<PathBuf>) -> Result<(), AnyError> {
    let cfg = ExperimentConfig::load(&config)?;
    let manager = Arc::new(SessionManager::new());
    let factory = provider_factory(&cfg.provider)?;
    let threads = spawn_sessions(&cfg, factory, &manager)?;
    log::info!("{} interactive session(s) started", threads.len());

    let mut app = warmstart_lab::router(manager).layer(tower_http::cors::CorsLayer::permissive());
    if let Some(dir) = console_dir {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await
    })?;
    Ok(())
}
