use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperwire::broker::{ServeConfig, Server};
use hyperwire::config_service::{DEFAULT_HTTP_ADDR, HTTP_ENV};
use hyperwire::sim::{run_demo_app, run_device, Clock, DemoRequirement, DeviceKind, SimScript};
use hyperwire::transport::{DEFAULT_PORT, PORT_ENV};

#[derive(Parser)]
#[command(name = "hyperwire", version, about = "Device/application input broker")]
struct Cli {
    /// Replace wall-clock timestamps with a per-process counter.
    #[arg(long, global = true)]
    deterministic_clock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker.
    Serve {
        /// Wire protocol address; defaults to 0.0.0.0 on --port.
        #[arg(long)]
        listen: Option<SocketAddr>,
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// HTTP API address.
        #[arg(long, env = HTTP_ENV, default_value = DEFAULT_HTTP_ADDR)]
        http: SocketAddr,
        /// Directory holding one JSON file per profile.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Static files for the configuration UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Run a simulated device.
    Device {
        #[arg(long)]
        kind: DeviceKind,
        /// Broker address; defaults to 127.0.0.1 on HYPERWIRE_PORT.
        #[arg(long)]
        connect: Option<String>,
        /// JSON list of {delay_ms, capability_id, payload} steps.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Replay the script forever.
        #[arg(long, name = "loop")]
        looped: bool,
    },
    /// Run an application.
    App {
        #[command(subcommand)]
        app: AppCommand,
    },
}

#[derive(Subcommand)]
enum AppCommand {
    /// Announce one requirement and print every delivered event as a JSON line.
    Demo {
        #[arg(long)]
        require: DemoRequirement,
        #[arg(long)]
        connect: Option<String>,
        /// Exit after this many events.
        #[arg(long)]
        max_events: Option<u64>,
    },
}

fn default_connect(addr: Option<String>) -> String {
    addr.unwrap_or_else(|| {
        let port = std::env::var(PORT_ENV)
            .ok()
            .and_then(|p| p.parse().ok())
            .unwrap_or(DEFAULT_PORT);
        format!("127.0.0.1:{port}")
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
}

async fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let clock = Clock::new(cli.deterministic_clock);
    match cli.command {
        Command::Serve {
            listen,
            port,
            http,
            profiles,
            ui,
        } => {
            let cfg = ServeConfig {
                listen: listen.unwrap_or_else(|| SocketAddr::from(([0, 0, 0, 0], port))),
                http,
                profiles,
                ui,
            };
            let server = Server::bind(&cfg).await?;
            tracing::info!(tcp = %server.tcp_addr(), http = %server.http_addr(), "broker listening");
            server.run(shutdown_signal()).await?;
        }
        Command::Device {
            kind,
            connect,
            script,
            looped,
        } => {
            let script = script
                .map(|p| SimScript::load(&p))
                .transpose()?
                .map(|mut s| {
                    s.looped |= looped;
                    s
                });
            let stdin = script.is_none();
            run_device(&default_connect(connect), kind, script, stdin, clock).await?;
        }
        Command::App {
            app: AppCommand::Demo {
                require,
                connect,
                max_events,
            },
        } => {
            let mut out = std::io::stdout();
            run_demo_app(&default_connect(connect), require, clock, max_events, &mut out).await?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("HYPERWIRE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("hyperwire: {e}");
            return ExitCode::from(1);
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hyperwire: {e}");
            ExitCode::from(1)
        }
    }
}
