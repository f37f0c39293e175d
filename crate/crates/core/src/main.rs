use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use modbus_topic_gateway::bench::{run_scenario, BenchError, BenchScenario, ScenarioKind};
use modbus_topic_gateway::config::{load_config, ConfigFormat};
use modbus_topic_gateway::device::DeviceOptions;
use modbus_topic_gateway::gateway::{Gateway, GatewayError, GatewayOptions};
use modbus_topic_gateway::ndjson::{NdjsonClient, DEFAULT_LISTEN};
use modbus_topic_gateway::sim::{load_memory, FaultPolicy, SlaveMemory, Simulator};
use modbus_topic_gateway::TopicRemap;

const EXIT_CONFIG: u8 = 1;
const EXIT_TRANSPORT: u8 = 2;

#[derive(Parser)]
#[command(name = "gateway", version, about = "Modbus/TCP to topic gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poll a device and serve its topics over NDJSON.
    Run(RunArgs),
    /// Print messages of a topic pattern from a running gateway.
    Echo(EchoArgs),
    /// Publish one value to a write topic of a running gateway.
    Pub(PubArgs),
    /// Run the Modbus/TCP slave simulator.
    Sim(SimArgs),
    /// Measure loopback latency against an in-process simulator.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// yaml or json; taken from the file extension when omitted.
    #[arg(long)]
    format: Option<ConfigFormat>,
    #[arg(long, default_value = DEFAULT_LISTEN)]
    listen: String,
    /// Largest unmapped gap read to join two mappings, in registers or bits.
    #[arg(long)]
    max_gap: Option<u16>,
    /// Response timeout in seconds.
    #[arg(long, default_value_t = 1.0)]
    timeout: f64,
    /// Rename a topic and everything below it, as OLD=NEW.
    #[arg(long)]
    remap: Vec<TopicRemap>,
    #[arg(long, default_value_t = modbus_topic_gateway::bus::DEFAULT_QUEUE_DEPTH)]
    queue_depth: usize,
}

#[derive(Args)]
struct EchoArgs {
    #[arg(long)]
    topic: String,
    /// Exit after this many messages.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long, default_value = DEFAULT_LISTEN)]
    connect: String,
}

#[derive(Args)]
struct PubArgs {
    #[arg(long)]
    topic: String,
    /// JSON value, e.g. true, 1.5 or '"text"'.
    #[arg(long)]
    value: String,
    #[arg(long, default_value = DEFAULT_LISTEN)]
    connect: String,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "0.0.0.0:1502")]
    listen: String,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Answer every request on a table with an exception, as table:code.
    #[arg(long = "except")]
    exceptions: Vec<String>,
    /// Initial memory image (YAML or JSON).
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Write the request log here instead of stdout.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Close each connection after this many requests.
    #[arg(long)]
    drop_after: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "read_input_register")]
    scenario: ScenarioKind,
    /// Number of IOs.
    #[arg(long, default_value_t = 1)]
    count: u16,
    /// Hz.
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    /// Seconds.
    #[arg(long, default_value_t = 100.0)]
    duration: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => return run(args).await,
        Command::Echo(args) => echo(args).await,
        Command::Pub(args) => publish(args).await,
        Command::Sim(args) => sim(args).await,
        Command::Bench(args) => bench(args).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(args: RunArgs) -> ExitCode {
    let config = match load_config(&args.config, args.format) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut device = DeviceOptions::for_config(&config);
    if let Some(gap) = args.max_gap {
        device.policy.max_gap_registers = gap;
        device.policy.max_gap_bits = gap;
    }
    match Duration::try_from_secs_f64(args.timeout) {
        Ok(t) if !t.is_zero() => device.timeout = t,
        _ => {
            eprintln!("error: --timeout must be a positive number of seconds");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let options = GatewayOptions {
        listen: Some(args.listen),
        device,
        queue_depth: args.queue_depth,
        remaps: args.remap,
        require_connection: true,
    };
    let gateway = match Gateway::start(config, options).await {
        Ok(g) => g,
        Err(e @ GatewayError::Device(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_TRANSPORT);
        }
    };
    if let Some(addr) = gateway.listen_addr() {
        tracing::info!(%addr, "serving topics");
    }
    let _ = tokio::signal::ctrl_c().await;
    gateway.shutdown().await;
    ExitCode::SUCCESS
}

async fn echo(args: EchoArgs) -> Result<()> {
    let mut client = NdjsonClient::connect(&args.connect)
        .await
        .with_context(|| format!("connecting to {}", args.connect))?;
    client.subscribe(&args.topic).await?;
    let mut seen = 0;
    while args.count.is_none_or(|n| seen < n) {
        let m = client.next_message().await?;
        println!("{}", serde_json::json!({"topic": m.topic, "value": m.value, "ts_us": m.ts_us}));
        seen += 1;
    }
    Ok(())
}

async fn publish(args: PubArgs) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(&args.value).context("--value is not JSON")?;
    let mut client = NdjsonClient::connect(&args.connect)
        .await
        .with_context(|| format!("connecting to {}", args.connect))?;
    client.publish(&args.topic, value).await?;
    Ok(())
}

async fn sim(args: SimArgs) -> Result<()> {
    let mut policy = FaultPolicy {
        latency: Duration::from_millis(args.latency_ms),
        drop_after: args.drop_after,
        ..Default::default()
    };
    for rule in &args.exceptions {
        policy.add_exception_rule(rule)?;
    }
    let memory = match &args.memory {
        Some(path) => load_memory(path).with_context(|| format!("loading {}", path.display()))?,
        None => SlaveMemory::new(),
    };
    let sim = Simulator::bind_with_memory(&args.listen, std::sync::Arc::new(std::sync::Mutex::new(memory)), policy)
        .await
        .with_context(|| format!("listening on {}", args.listen))?;
    tracing::info!(addr = %sim.local_addr(), "slave simulator listening");
    let mut log = sim.subscribe_log();
    let mut out: Box<dyn Write + Send> = match &args.log {
        Some(path) => Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout()),
    };
    loop {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => break,
            entry = log.recv() => match entry {
                Ok(entry) => {
                    writeln!(out, "{}", serde_json::to_string(&entry)?)?;
                    out.flush()?;
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "request log lagged");
                }
                Err(_) => break,
            },
        }
    }
    Ok(())
}

async fn bench(args: BenchArgs) -> Result<()> {
    let scenario = BenchScenario {
        kind: args.scenario,
        io_count: args.count,
        rate: args.rate,
        duration: args.duration,
    };
    let (report, underrun) = match run_scenario(&scenario).await {
        Ok(r) => (r, false),
        Err(BenchError::ScenarioUnderrun(r)) => (*r, true),
        Err(e) => return Err(e.into()),
    };
    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    if underrun {
        anyhow::bail!("expected {} samples, got {}", report.expected_samples, report.samples);
    }
    Ok(())
}
