use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context as _;
use botctl::server::{self, ServeOptions};
use clap::{Parser, Subcommand};
use forgebot::client::live::{LiveForge, LiveSettings, UreqTransport};
use forgebot::clock::SystemClock;
use forgebot::mock::scenario::{run_file, RunOptions};
use forgebot::Config;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "bot", version, about = "Forge automation bot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the webhook server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `listen` from the configuration.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Validate a configuration and print it with defaults filled in.
    CheckConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scenario against the mock forge and print the actions taken.
    Replay {
        scenario: PathBuf,
        /// Deliver every webhook twice with the same delivery id.
        #[arg(long)]
        duplicate_deliveries: bool,
        /// Print the full transcript as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, listen } => serve(config, listen),
        Command::CheckConfig { config } => check_config(config),
        Command::Replay { scenario, duplicate_deliveries, json } => replay(scenario, duplicate_deliveries, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn serve(path: PathBuf, listen: Option<SocketAddr>) -> anyhow::Result<()> {
    let mut config = Config::load(&path)?;
    if let Some(addr) = listen {
        config.listen = addr.to_string();
    }
    let credentials = botctl::load_credentials(&config.secrets, |name| std::env::var(name).ok())?;
    let settings = LiveSettings {
        bot_login: config.bot_handle.clone(),
        runner_url: config.runner.as_ref().map(|r| r.url.clone()),
        label_prefixes: config.labels.clone(),
        ..LiveSettings::default()
    };
    let transport = Arc::new(UreqTransport::new(credentials.github_token, credentials.gitlab_token));
    let forge = Arc::new(LiveForge::new(settings, transport));
    let config = Arc::new(config);

    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("cannot bind {}", config.listen))?;
        server::serve(
            config,
            forge,
            credentials.gateway,
            Arc::new(SystemClock),
            listener,
            ServeOptions::default(),
            server::termination(),
        )
        .await
    })
}

fn check_config(path: PathBuf) -> anyhow::Result<()> {
    let config = Config::load(&path)?;
    for name in [&config.secrets.github_token_env, &config.secrets.gitlab_token_env, &config.secrets.webhook_secret_env] {
        if std::env::var(name).map_or(true, |v| v.is_empty()) {
            eprintln!("note: environment variable {name} is not set");
        }
    }
    print!("{}", config.to_toml());
    Ok(())
}

fn replay(path: PathBuf, duplicate_deliveries: bool, json: bool) -> anyhow::Result<()> {
    let transcript = run_file(&path, RunOptions { duplicate_deliveries })?;
    if json {
        println!("{}", transcript.to_json());
    } else {
        for line in transcript.action_lines() {
            println!("{line}");
        }
        eprintln!("{}: {} events, all expectations met", path.display(), transcript.entries.len());
    }
    Ok(())
}
