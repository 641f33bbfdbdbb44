use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rowlight_cli::server::AgentFactory;
use rowlight_cli::{repl, stdio, Config, Service};
use rowlight_core::agent::Tape;
use rowlight_core::device::{SimDevice, VirtualFixture};
use rowlight_core::log::replay_file;
use rowlight_core::netlist::{emit_yaml, parse_netlist_xml};

#[derive(Parser)]
#[command(
    name = "rowlight",
    version,
    about = "Breadboard assistant: netlists, board protocol, tests and agent sessions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize a netlist XML file and print it as YAML.
    Parse {
        xml: PathBuf,
        /// Write the YAML here instead of stdout.
        #[arg(long)]
        yaml: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Take requests as JSON lines on stdin instead of listening on HTTP.
        #[arg(long)]
        stdio: bool,
    },
    /// Interactive console for a simulated board.
    Sim {
        #[arg(long)]
        fixture: PathBuf,
    },
    /// Rebuild a session state from its log and print it as JSON.
    Replay { log: PathBuf },
    /// Check that every call in a scripted-agent tape is valid.
    TapeCheck { tape: PathBuf },
}

/// Failure reported as `error: <code>: <message>` with a per-command exit status.
struct Failure {
    status: u8,
    code: String,
    message: String,
}

impl Failure {
    fn new(status: u8, code: &str, message: impl ToString) -> Self {
        Failure { status, code: code.to_string(), message: message.to_string() }
    }
}

const EXIT_GENERAL: u8 = 1;
const EXIT_NETLIST: u8 = 2;
const EXIT_TAPE: u8 = 3;
const EXIT_LOG: u8 = 4;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_GENERAL, "io_error", format!("{}: {e}", path.display())))
}

fn parse(xml: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let bytes =
        std::fs::read(xml).map_err(|e| Failure::new(EXIT_GENERAL, "io_error", format!("{}: {e}", xml.display())))?;
    let netlist = parse_netlist_xml(&bytes).map_err(|e| Failure::new(EXIT_NETLIST, e.code(), &e))?;
    let yaml = emit_yaml(&netlist);
    match out {
        Some(path) => std::fs::write(path, yaml)
            .map_err(|e| Failure::new(EXIT_GENERAL, "io_error", format!("{}: {e}", path.display()))),
        None => io::stdout().write_all(yaml.as_bytes()).map_err(|e| Failure::new(EXIT_GENERAL, "io_error", e)),
    }
}

fn tape_check(path: &Path) -> Result<(), Failure> {
    let tape = Tape::from_yaml(&read(path)?).map_err(|e| Failure::new(EXIT_TAPE, e.code(), &e))?;
    tape.check().map_err(|e| Failure::new(EXIT_TAPE, e.code(), &e))?;
    let calls: usize = tape.replies.values().map(|r| r.calls.len()).sum();
    println!("ok: {} replies, {calls} calls", tape.replies.len());
    Ok(())
}

fn replay(path: &Path) -> Result<(), Failure> {
    let state = replay_file(path).map_err(|e| Failure::new(EXIT_LOG, e.code(), &e))?;
    let json = serde_json::to_string_pretty(&state).expect("state serializes");
    println!("{json}");
    Ok(())
}

fn sim(fixture: &Path) -> Result<(), Failure> {
    let fixture = VirtualFixture::from_yaml(&read(fixture)?).map_err(|e| Failure::new(EXIT_GENERAL, e.code(), &e))?;
    let mut device = SimDevice::open(&fixture).map_err(|e| Failure::new(EXIT_GENERAL, e.code(), &e))?;
    let stdin = io::stdin();
    repl::run(&mut device, BufReader::new(stdin.lock()), io::stdout().lock(), io::stderr().lock())
        .map_err(|e| Failure::new(EXIT_GENERAL, "io_error", e))?;
    Ok(())
}

fn serve(config_path: &Path, use_stdio: bool) -> Result<(), Failure> {
    let config = Config::load(config_path).map_err(|e| Failure::new(EXIT_GENERAL, e.code(), &e))?;
    // fail early on an unusable agent backend
    config.open_agent().map_err(|e| Failure::new(EXIT_GENERAL, e.code(), &e))?;
    let device = config.open_device().map_err(|e| Failure::new(EXIT_GENERAL, e.code(), &e))?;
    let agent_config = config.clone();
    let agent: AgentFactory = Arc::new(move || agent_config.open_agent().map_err(|e| e.to_string()));
    let service = Service::new(device, agent, Some(config.log_dir.clone()))
        .map_err(|e| Failure::new(EXIT_GENERAL, "io_error", format!("{}: {e}", config.log_dir.display())))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_GENERAL, "io_error", e))?;
    runtime
        .block_on(async move {
            let router = service.router();
            if use_stdio {
                let input = tokio::io::BufReader::new(tokio::io::stdin());
                return stdio::serve(router, input, tokio::io::stdout()).await;
            }
            let listener = tokio::net::TcpListener::bind(config.bind).await?;
            tracing::info!(addr = %listener.local_addr()?, "listening");
            axum::serve(listener, router).await
        })
        .map_err(|e| Failure::new(EXIT_GENERAL, "io_error", e))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Parse { xml, yaml } => parse(xml, yaml.as_deref()),
        Command::Serve { config, stdio } => serve(config, *stdio),
        Command::Sim { fixture } => sim(fixture),
        Command::Replay { log } => replay(log),
        Command::TapeCheck { tape } => tape_check(tape),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.message);
            ExitCode::from(f.status)
        }
    }
}
