//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime abort,
//! 3 a `--require-safe` check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use platoon::attack::RandomAttack;
use platoon::coordinator::{
    handle_merge, handle_split, isolate_compromised_with, solve_topology, ForbiddenLinks, TopologyMatrix, VehicleId,
};
use platoon::detector::DetectorConfig;
use platoon::dynamics::ActuationLimits;
use platoon::gain_tuning::{feasible_region, string_stability, tune_gains, HeadwaySearch};
use platoon::harness::campaign::{default_base, run_campaign, CampaignConfig};
use platoon::harness::config::{ConfigError, ScenarioConfig};
use platoon::harness::export::{aggregate_text, metrics_text, write_aggregate, write_metrics, write_trace_file};
use platoon::harness::replay::{read_trace_file, replay_detector, write_residuals, Overlay, OverlayKind};
use platoon::harness::sim::run_scenario;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Attack-resilient platoon controller toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize gains and optionally write the feasible (d, h) region.
    Tune(TuneArgs),
    /// Run one scenario file.
    Run(RunArgs),
    /// Randomized attack campaign.
    Campaign(CampaignArgs),
    /// Run the detector offline over a recorded trace.
    Replay(ReplayArgs),
    /// Solve a topology file.
    Coord(CoordArgs),
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    d: f64,
    #[arg(long)]
    v_des: f64,
    #[arg(long, allow_hyphen_values = true)]
    u_min: f64,
    #[arg(long)]
    u_max: f64,
    #[arg(long)]
    v_max: f64,
    #[arg(long, default_value_t = HeadwaySearch::DEFAULT_RESOLUTION)]
    resolution: f64,
    /// Write the feasibility grid over d and h to this CSV.
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    d_max: f64,
    #[arg(long, default_value_t = 2.0)]
    h_max: f64,
    #[arg(long, default_value_t = 100)]
    grid: usize,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-vehicle metrics CSV output.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Exit with code 3 on a collision.
    #[arg(long)]
    require_safe: bool,
}

#[derive(Args)]
struct CampaignArgs {
    /// Campaign file; the built-in 11-vehicle highway campaign when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Full-size campaign of 1000 runs per family.
    #[arg(long, conflicts_with = "runs")]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of constant, sinusoid, filtered_noise.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<RandomAttack>>,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 if any run collided.
    #[arg(long)]
    require_safe: bool,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[arg(long, default_value_t = DetectorConfig::default().gain)]
    gain: f64,
    #[arg(long, default_value_t = DetectorConfig::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = DetectorConfig::default().persistence)]
    persistence: f64,
    /// Sender whose acceleration is forged.
    #[arg(long)]
    sender: Option<u32>,
    /// Replace with a sinusoid of this amplitude.
    #[arg(long, requires = "sender")]
    sinusoid_amplitude: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    sinusoid_freq: f64,
    /// Add Gaussian noise of this standard deviation.
    #[arg(long, requires = "sender", conflicts_with = "sinusoid_amplitude")]
    gaussian_sd: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    /// Residual series CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoordArgs {
    /// Topology listing, one `id pred succ` row per line.
    topology: PathBuf,
    /// Move this compromised vehicle to the tail.
    #[arg(long, conflicts_with_all = ["merge", "split"])]
    isolate: Option<u32>,
    /// Let the leader change when isolating.
    #[arg(long, requires = "isolate")]
    allow_new_leader: bool,
    #[arg(long, conflicts_with = "split")]
    merge: Option<u32>,
    #[arg(long)]
    split: Option<u32>,
    /// Forbidden link `from:to`; repeatable.
    #[arg(long, value_parser = parse_link)]
    forbid: Vec<(u32, u32)>,
    /// Print every optimum instead of the tie-broken choice.
    #[arg(long)]
    all: bool,
}

fn parse_link(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected from:to")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

enum Failure {
    Config(String),
    Runtime(String),
    Unsafe(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Tune(a) => tune(a),
        Cmd::Run(a) => run(a),
        Cmd::Campaign(a) => campaign(a),
        Cmd::Replay(a) => replay(a),
        Cmd::Coord(a) => coord(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Unsafe(m)) => {
            eprintln!("safety check failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn tune(a: TuneArgs) -> Result<(), Failure> {
    let limits = ActuationLimits::new(a.u_min, a.u_max, a.v_max).map_err(config)?;
    let search = HeadwaySearch::with_resolution(a.resolution);
    let g = tune_gains(a.d, a.v_des, &limits, &search).map_err(runtime)?;
    let report = string_stability(&g);
    println!("k = {:.4}", g.k);
    println!("h = {:.4}", g.h);
    println!("c = {:.4}", g.c);
    println!("string stable: {}", report.is_stable());
    if let Some(path) = a.region {
        let d: Vec<f64> = (1..=a.grid).map(|i| a.d_max * i as f64 / a.grid as f64).collect();
        let h: Vec<f64> = (1..=a.grid).map(|i| a.h_max * i as f64 / a.grid as f64).collect();
        let grid = feasible_region(&d, &h, a.v_des, &limits).map_err(config)?;
        grid.write_csv(std::fs::File::create(&path).map_err(runtime)?).map_err(runtime)?;
        println!("feasible cells: {} of {} -> {}", grid.feasible_count(), d.len() * h.len(), path.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(&a.scenario)?;
    let out = run_scenario(&cfg).map_err(runtime)?;
    print!("{}", metrics_text(&out.metrics));
    if let Some(p) = a.trace {
        write_trace_file(&p, &out.trace).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = a.metrics {
        let f = std::fs::File::create(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        write_metrics(f, &out.metrics).map_err(runtime)?;
    }
    if a.require_safe && out.metrics.collided() {
        return Err(Failure::Unsafe("collision".into()));
    }
    Ok(())
}

fn campaign(a: CampaignArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            let c: CampaignConfig = toml::from_str(&text).map_err(config)?;
            c.base.validate()?;
            c
        }
        None => CampaignConfig {
            base: default_base(),
            ..CampaignConfig::default()
        },
    };
    if a.full {
        cfg.runs = 1000;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if cfg.runs == 0 {
        return Err(Failure::Config("runs must be at least 1".into()));
    }
    if let Some(s) = a.seed {
        cfg.base.seed = s;
    }
    if let Some(f) = a.families {
        cfg.families = f;
    }
    let res = run_campaign(&cfg, a.workers).map_err(runtime)?;
    print!("{}", aggregate_text(&res.summary));
    if let Some(p) = a.out {
        let f = std::fs::File::create(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        write_aggregate(f, &res.summary).map_err(runtime)?;
    }
    let collisions: usize = res.summary.iter().map(|f| f.collisions).sum();
    if a.require_safe && collisions > 0 {
        return Err(Failure::Unsafe(format!("{collisions} runs collided")));
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let rows = read_trace_file(&a.trace).map_err(config)?;
    let det = DetectorConfig {
        gain: a.gain,
        threshold: a.threshold,
        persistence: a.persistence,
    };
    let kind = match (a.sinusoid_amplitude, a.gaussian_sd) {
        (Some(amp), _) => Some(OverlayKind::Sinusoid {
            a: amp,
            f: a.sinusoid_freq,
            phi: 0.0,
        }),
        (None, Some(sd)) => Some(OverlayKind::Gaussian { sd, seed: a.seed }),
        (None, None) => None,
    };
    let overlays: Vec<Overlay> = match (kind, a.sender) {
        (Some(kind), Some(sender)) => vec![Overlay {
            sender,
            kind,
            active_from: a.from,
            active_to: f64::INFINITY,
        }],
        _ => Vec::new(),
    };
    let res = replay_detector(&rows, det, &overlays).map_err(config)?;
    println!("max residual: {:.4}", res.max_residual());
    println!("alarms: {}", res.alarms.len());
    for al in &res.alarms {
        println!("  t={:.2} vehicle {} distrusts {}", al.t, al.receiver, al.sender);
    }
    if let Some(p) = a.out {
        let f = std::fs::File::create(&p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        write_residuals(f, &res).map_err(runtime)?;
    }
    Ok(())
}

fn coord(a: CoordArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.topology).map_err(|e| Failure::Config(format!("{}: {e}", a.topology.display())))?;
    let d: TopologyMatrix = text.parse().map_err(config)?;
    let mut forbidden = ForbiddenLinks::new();
    for &(x, y) in &a.forbid {
        forbidden.insert(VehicleId(x), VehicleId(y));
    }
    let chosen = if let Some(c) = a.isolate {
        isolate_compromised_with(&d, VehicleId(c), &mut forbidden, !a.allow_new_leader).map_err(runtime)?
    } else if let Some(m) = a.merge {
        handle_merge(&d, VehicleId(m), &forbidden).map_err(runtime)?
    } else if let Some(s) = a.split {
        handle_split(&d, VehicleId(s), &forbidden).map_err(runtime)?
    } else {
        d.check_well_formed().map_err(config)?;
        let optima = solve_topology(&d, &forbidden).map_err(runtime)?;
        if a.all {
            for (i, o) in optima.iter().enumerate() {
                println!("# optimum {}\n{}", i + 1, o.to_listing());
            }
            return Ok(());
        }
        platoon::coordinator::tie_break(&optima, d.leader()).ok_or_else(|| Failure::Runtime("no feasible ordering".into()))?
    };
    print!("{}", chosen.to_listing());
    Ok(())
}
