use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use animo::analytics::{compute_report, hourly_histogram, render_table, StatsOptions};
use animo::config::{Config, CONFIG_ENV};
use animo::engine::{calibrate_baselines, read_heart_rate_csv, HeartRateSample};
use animo::relay::{read_jsonl, replay, write_jsonl, Event, JsonlSink, Relay, ReplayOptions};
use animo::simulator::{simulate_dyads, SimulationConfig};
use animo::{Timestamp, UserId};
use animo_server::{ServerConfig, SystemClock};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "animo",
    version,
    about = "Heart-rate mood sharing relay, simulator and log analytics"
)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the relay over TCP and WebSocket until interrupted.
    Serve(ServeArgs),
    /// Generate a synthetic event log.
    Simulate(SimulateArgs),
    /// Per-dyad usage table from an event log.
    Stats(StatsArgs),
    /// Sends and reads by local hour of day, as CSV.
    Histogram(HistogramArgs),
    /// Derive per-user baselines from calm and stress recordings.
    Calibrate(CalibrateArgs),
    /// Check that an event log replays cleanly.
    Check(CheckArgs),
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long)]
    ttl_secs: Option<i64>,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_path: Option<PathBuf>,
    #[arg(long)]
    registry_path: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    sweep_ms: u64,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    dyads: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    sends_per_day: Option<f64>,
    #[arg(long)]
    read_prob: Option<f64>,
    #[arg(long)]
    reply_prob: Option<f64>,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Unix time of local midnight on the first day.
    #[arg(long)]
    start: Option<Timestamp>,
    #[arg(long)]
    record_state_changes: bool,
    /// Simulation config as TOML; replaces the defaults derived from `--config`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    reply_window_secs: Option<i64>,
}

#[derive(clap::Args)]
struct HistogramArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    utc_offset_secs: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CalibrateArgs {
    /// CSV with header `user_id,timestamp,bpm`.
    #[arg(long)]
    calm: PathBuf,
    #[arg(long)]
    stress: PathBuf,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    log: PathBuf,
    /// Also verify reads happen within this many seconds of delivery.
    #[arg(long)]
    ttl_secs: Option<i64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let closed_pipe = err
            .downcast_ref::<io::Error>()
            .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe);
        if closed_pipe {
            return;
        }
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Serve(args) => serve(config, args),
        Command::Simulate(args) => simulate(config, args),
        Command::Stats(args) => stats(config, args),
        Command::Histogram(args) => histogram(config, args),
        Command::Calibrate(args) => calibrate(args),
        Command::Check(args) => check(args),
    }
}

fn load_log(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn serve(mut config: Config, args: ServeArgs) -> Result<()> {
    if let Some(v) = args.bind {
        config.bind = v;
    }
    if let Some(v) = args.port {
        config.port = v;
    }
    if let Some(v) = args.ws_port {
        config.ws_port = v;
    }
    if let Some(v) = args.ttl_secs {
        config.ttl_secs = v;
    }
    if let Some(v) = args.loss {
        config.loss = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.log_path {
        config.log_path = v;
    }
    if let Some(v) = args.registry_path {
        config.registry_path = Some(v);
    }
    config.validate()?;
    let catalog = config.catalog()?;

    let history = if config.log_path.exists() {
        load_log(&config.log_path)?
    } else {
        Vec::new()
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.log_path)
        .with_context(|| format!("opening {}", config.log_path.display()))?;
    let relay = Relay::resume(config.relay_config(), catalog, JsonlSink::new(file), &history)?;
    log::info!("resumed {} events, {} dyads", history.len(), relay.registry().len());

    let server_cfg = ServerConfig {
        bind: config.bind.clone(),
        tcp_port: config.port,
        ws_port: Some(config.ws_port),
        sweep_interval: Some(Duration::from_millis(args.sweep_ms.max(1))),
        registry_path: Some(config.registry_path()),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = animo_server::start(server_cfg, relay, Arc::new(SystemClock)).await?;
        println!("tcp {} ws {}", handle.tcp_addr, handle.ws_addr.expect("ws enabled"));
        tokio::signal::ctrl_c().await?;
        let relay = handle.shutdown().await;
        log::info!("stopped; {} messages still readable", relay.pending_count());
        Ok(())
    })
}

fn simulate(config: Config, args: SimulateArgs) -> Result<()> {
    let mut sim = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SimulationConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimulationConfig {
            model: config.model.clone(),
            seed: config.seed,
            utc_offset_secs: config.utc_offset_secs,
            ttl_secs: config.ttl_secs,
            reply_window_secs: config.reply_window_secs,
            tracker: config.tracker_config(),
            ..SimulationConfig::default()
        },
    };
    if let Some(v) = args.dyads {
        sim.n_dyads = v;
    }
    if let Some(v) = args.days {
        sim.days = v;
    }
    if let Some(v) = args.sends_per_day {
        sim.model.sends_per_user_per_day = v;
    }
    if let Some(v) = args.read_prob {
        sim.model.read_prob = v;
    }
    if let Some(v) = args.reply_prob {
        sim.model.reply_prob = v;
    }
    if let Some(v) = args.loss {
        sim.model.loss = v;
    }
    if let Some(v) = args.seed {
        sim.seed = v;
    }
    if let Some(v) = args.start {
        sim.start = v;
    }
    sim.record_state_changes |= args.record_state_changes;
    let events = simulate_dyads(&sim, &config.catalog()?)?;
    let mut out = output(args.out.as_deref())?;
    write_jsonl(&mut out, &events)?;
    out.flush()?;
    Ok(())
}

fn stats(config: Config, args: StatsArgs) -> Result<()> {
    let events = load_log(&args.log)?;
    let opts = StatsOptions {
        reply_window_secs: args.reply_window_secs.unwrap_or(config.reply_window_secs),
    };
    if opts.reply_window_secs < 2 {
        bail!("--reply-window-secs must be at least 2");
    }
    let report = compute_report(&events, &opts)?;
    let mut out = output(None)?;
    match args.format {
        Format::Table => write!(out, "{}", render_table(&report))?,
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
    }
    out.flush()?;
    Ok(())
}

fn histogram(config: Config, args: HistogramArgs) -> Result<()> {
    let events = load_log(&args.log)?;
    let hist = hourly_histogram(&events, args.utc_offset_secs.unwrap_or(config.utc_offset_secs))?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(hist.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn read_samples(path: &Path) -> Result<BTreeMap<UserId, Vec<HeartRateSample>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_heart_rate_csv(file).with_context(|| format!("reading {}", path.display()))?;
    let mut by_user: BTreeMap<UserId, Vec<HeartRateSample>> = BTreeMap::new();
    for s in samples {
        by_user.entry(s.user_id.clone()).or_default().push(s);
    }
    Ok(by_user)
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let calm = read_samples(&args.calm)?;
    let stress = read_samples(&args.stress)?;
    if calm.is_empty() {
        bail!("{} has no samples", args.calm.display());
    }
    let mut out = io::stdout().lock();
    for (user, calm_samples) in &calm {
        let Some(stress_samples) = stress.get(user) else {
            bail!("{user} has calm samples but no stress samples");
        };
        let b = calibrate_baselines(calm_samples, stress_samples).with_context(|| format!("calibrating {user}"))?;
        writeln!(out, "{}", serde_json::to_string(&b)?)?;
    }
    if let Some(user) = stress.keys().find(|u| !calm.contains_key(*u)) {
        bail!("{user} has stress samples but no calm samples");
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<()> {
    let events = load_log(&args.log)?;
    let state = replay(
        &events,
        ReplayOptions {
            ttl_secs: args.ttl_secs,
        },
    )?;
    let mut out = output(None)?;
    writeln!(
        out,
        "ok: {} events, {} dyads, {} messages",
        events.len(),
        state.registry.len(),
        state.records.len()
    )?;
    out.flush()?;
    Ok(())
}
