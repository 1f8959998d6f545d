use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use lbt_core::clock::SystemClock;
use lbt_core::materials::QuestionBank;
use lbt_core::service::Platform;
use lbt_core::store::{EventStore, FileStore, MemoryStore};
use lbt_server::{router, scheduler, AppState, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "lbt-server", about = "Learning-by-teaching vocabulary study server")]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    /// Vocabulary bank (JSON).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Accept the simulated-clock header.
    #[arg(long)]
    test_mode: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    };
    if let Some(port) = cli.port {
        config.port = port;
    }
    if let Some(bank) = cli.bank {
        config.bank = bank;
    }

    let bank = QuestionBank::load(&config.bank).with_context(|| format!("loading bank {}", config.bank.display()))?;
    let store: Arc<dyn EventStore> = match &config.events {
        Some(path) => Arc::new(FileStore::open(path).with_context(|| format!("opening {}", path.display()))?),
        None => {
            tracing::warn!("no event log configured; events are kept in memory only");
            Arc::new(MemoryStore::new())
        }
    };
    let mut platform = Platform::new(config.platform.clone(), bank, config.gateway()?, store)?;
    if config.save_bank {
        platform = platform.with_bank_path(config.bank.clone());
    }
    let platform = Arc::new(platform);
    let admin_token = std::env::var(&config.admin_token_env).ok().filter(|t| !t.is_empty());
    if admin_token.is_none() {
        tracing::warn!(var = %config.admin_token_env, "admin token unset; export endpoints are disabled");
    }
    if cli.test_mode {
        tracing::warn!("test mode: the simulated-clock header is honoured");
    }

    let clock = Arc::new(SystemClock);
    scheduler::spawn(platform.clone(), clock.clone(), Duration::from_secs(config.scheduler_seconds.max(1)));
    let app = router(AppState {
        platform,
        clock,
        test_mode: cli.test_mode,
        admin_token,
    });
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
