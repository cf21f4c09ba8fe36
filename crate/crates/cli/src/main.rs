use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drivebench::bridge::{Bridge, BridgeError, DEFAULT_TIMEOUT};
use drivebench::diagnose::{diagnose, format_table, DiagVariable, DEFAULT_STEPS};
use drivebench::engine::TrajectoryLog;
use drivebench::metrics::{evaluate, MetricConfig};
use drivebench::policies::PolicyKind;
use drivebench::render::{render_svg, DEFAULT_SCALE};
use drivebench::runner::{self, log_file_name, RunError};
use drivebench::scenario::{
    follow_suite, turn_suite, FollowParams, LeadBehavior, Scenario, Suite, SuiteManifest,
    TaskFamily, TurnParams,
};
use drivebench::sensors::SensorConfig;
use serde::Deserialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "drivebench", version, about = "Driving benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite with a builtin policy or an external policy process.
    Run(RunArgs),
    /// Score existing trajectory logs.
    Evaluate(EvaluateArgs),
    /// Steps-per-second table while one world variable is scaled.
    Diagnose(DiagnoseArgs),
    /// Draw a log as SVG.
    Render(RenderArgs),
    /// Write generated scenarios and a suite manifest.
    Generate(GenerateArgs),
}

#[derive(Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunArgs {
    /// Manifest path, generator params file, or one of: turn, turn-empty-left,
    /// follow, follow-simplest.
    #[arg(long)]
    suite: Option<String>,
    /// Builtin policy name.
    #[arg(long)]
    policy: Option<String>,
    /// Overrides scenario seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metric_config: Option<PathBuf>,
    /// Shell command of an external policy process; replaces --policy.
    #[arg(long)]
    bridge_cmd: Option<String>,
    /// Seconds to wait for each bridge reply.
    #[arg(long)]
    bridge_timeout: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Sensor settings; config file only.
    #[arg(skip)]
    sensor: Option<SensorConfig>,
    /// JSON file whose keys override the flags above.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    logs: Vec<PathBuf>,
    #[arg(long)]
    metric_config: Option<PathBuf>,
    /// Also write report.json and report.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "method")]
    method: String,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    variable: DiagVariable,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 20, 50])]
    counts: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: u64,
    /// Print rows as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RenderArgs {
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// SVG units per meter.
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator params file, or one of: turn, turn-empty-left, follow,
    /// follow-simplest.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Contents of a generator params file.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum GeneratorParams {
    Turn(Vec<TurnParams>),
    Follow(FollowParams),
}

impl GeneratorParams {
    fn named(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "turn" => GeneratorParams::Turn(TurnParams::standard(seed)),
            "turn-empty-left" => GeneratorParams::Turn(vec![TurnParams::empty_left(seed)]),
            "follow" => GeneratorParams::Follow(FollowParams {
                behaviors: LeadBehavior::ALL.to_vec(),
                ..FollowParams::simplest(seed)
            }),
            "follow-simplest" => GeneratorParams::Follow(FollowParams::simplest(seed)),
            _ => return None,
        })
    }

    fn reseed(&mut self, seed: u64) {
        match self {
            GeneratorParams::Turn(v) => v.iter_mut().for_each(|p| p.seed = seed),
            GeneratorParams::Follow(p) => p.seed = seed,
        }
    }

    fn manifest(&self, name: &str) -> Result<SuiteManifest> {
        Ok(match self {
            GeneratorParams::Turn(v) => {
                SuiteManifest::from_scenarios(name, TaskFamily::Collaborative, turn_suite(v)?)
            }
            GeneratorParams::Follow(p) => {
                SuiteManifest::from_scenarios(name, TaskFamily::Adaptive, follow_suite(p)?)
            }
        })
    }
}

const DEFAULT_SEED: u64 = 0;

/// A manifest or generator params, with the directory relative paths
/// resolve against.
fn suite_manifest(spec: &str, seed: Option<u64>) -> Result<(SuiteManifest, PathBuf)> {
    if let Some(mut g) = GeneratorParams::named(spec, seed.unwrap_or(DEFAULT_SEED)) {
        g.reseed(seed.unwrap_or(DEFAULT_SEED));
        return Ok((g.manifest(spec)?, PathBuf::from(".")));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read suite {spec}"))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("malformed suite {spec}"))?;
    let is_generator = value
        .as_object()
        .is_some_and(|o| o.len() == 1 && (o.contains_key("turn") || o.contains_key("follow")));
    if is_generator {
        let mut g: GeneratorParams =
            serde_json::from_value(value).with_context(|| format!("malformed generator params {spec}"))?;
        if let Some(s) = seed {
            g.reseed(s);
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok((g.manifest(&name)?, base));
    }
    let mut manifest: SuiteManifest =
        serde_json::from_value(value).with_context(|| format!("malformed suite manifest {spec}"))?;
    if let Some(s) = seed {
        manifest = reseed_manifest(manifest, &base, s)?;
    }
    Ok((manifest, base))
}

fn reseed_manifest(m: SuiteManifest, base: &Path, seed: u64) -> Result<SuiteManifest> {
    use drivebench::scenario::ScenarioEntry;
    let scenarios = m
        .scenarios
        .into_iter()
        .map(|e| {
            let mut s = match e {
                ScenarioEntry::Inline(s) => *s,
                ScenarioEntry::Path(p) => {
                    let mut s = Scenario::load(base.join(&p))?;
                    // Inline scenarios resolve maps against the manifest
                    // directory, not their own file.
                    if let drivebench::scenario::MapSource::Path(mp) = &s.map {
                        let dir = p.parent().unwrap_or(Path::new(""));
                        s.map = drivebench::scenario::MapSource::Path(dir.join(mp));
                    }
                    s
                }
            };
            s.seed = seed;
            Ok(ScenarioEntry::Inline(Box::new(s)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteManifest { scenarios, ..m })
}

fn metric_config(path: Option<&Path>) -> Result<MetricConfig> {
    let cfg: MetricConfig = match path {
        None => MetricConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("malformed metric config {}", p.display()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn with_config_file(mut args: RunArgs) -> Result<RunArgs> {
    let Some(path) = args.config.take() else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: RunArgs =
        serde_json::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
    macro_rules! take {
        ($($f:ident),*) => { $( if file.$f.is_some() { args.$f = file.$f; } )* };
    }
    take!(suite, policy, seed, out, metric_config, bridge_cmd, bridge_timeout, workers, sensor);
    Ok(args)
}

/// Writes to stdout; a closed pipe ends the process quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write output: {e}");
        std::process::exit(2);
    }
}

fn run(args: RunArgs) -> Result<()> {
    let args = with_config_file(args)?;
    let spec = args.suite.as_deref().ok_or_else(|| anyhow!("--suite is required"))?;
    let out = args.out.clone().ok_or_else(|| anyhow!("--out is required"))?;
    let metrics = metric_config(args.metric_config.as_deref())?;
    let (manifest, base) = suite_manifest(spec, args.seed)?;
    let suite: Suite = manifest.resolve(&base)?;
    let sensor = args.sensor.unwrap_or_default();
    let (result, method) = match &args.bridge_cmd {
        Some(cmd) => {
            let timeout = args
                .bridge_timeout
                .map(std::time::Duration::from_secs_f64)
                .unwrap_or(DEFAULT_TIMEOUT);
            let mut bridge = Bridge::spawn(cmd, timeout).map_err(RunError::Process)?;
            let result = runner::run_with_driver(&suite, &mut bridge, sensor, &metrics)?;
            bridge.shutdown().map_err(RunError::Process)?;
            (result, "bridge".to_string())
        }
        None => {
            let kind: PolicyKind = args
                .policy
                .as_deref()
                .unwrap_or("waypoint_follower")
                .parse()
                .map_err(|e: String| anyhow!(e))?;
            let workers = args.workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            (runner::run_builtin(&suite, kind, sensor, &metrics, workers)?, kind.name().to_string())
        }
    };
    runner::write_outputs(&out, &result, &method)?;
    emit(&result.report.to_table(&method));
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    if args.logs.is_empty() {
        bail!("no log files given");
    }
    let cfg = metric_config(args.metric_config.as_deref())?;
    let logs = args
        .logs
        .iter()
        .map(|p| TrajectoryLog::load(p).with_context(|| format!("malformed log {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&logs, &cfg)?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), report.to_json() + "\n")?;
        std::fs::write(out.join("report.csv"), report.to_csv(&args.method))?;
    }
    emit(&(report.to_json() + "\n"));
    Ok(())
}

fn diagnose_cmd(args: DiagnoseArgs) -> Result<()> {
    let rows = diagnose(args.variable, &args.counts, args.steps)?;
    if args.json {
        emit(&(serde_json::to_string_pretty(&rows)? + "\n"));
    } else {
        emit(&format_table(&rows));
    }
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    if args.scale.is_nan() || args.scale <= 0.0 {
        bail!("--scale must be positive");
    }
    let log = TrajectoryLog::load(&args.log).with_context(|| format!("malformed log {}", args.log.display()))?;
    std::fs::write(&args.out, render_svg(&log, args.scale))
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    Ok(())
}

fn generate_cmd(args: GenerateArgs) -> Result<()> {
    let (manifest, base) = suite_manifest(&args.suite, args.seed)?;
    // Validate before writing anything.
    manifest.resolve(&base)?;
    let dir = args.out.join("scenarios");
    std::fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    for e in &manifest.scenarios {
        let drivebench::scenario::ScenarioEntry::Inline(s) = e else {
            bail!("generated suites hold inline scenarios");
        };
        let name = log_file_name(&s.id).replace(".jsonl", ".json");
        std::fs::write(dir.join(&name), serde_json::to_string_pretty(s)? + "\n")?;
        entries.push(drivebench::scenario::ScenarioEntry::Path(PathBuf::from("scenarios").join(name)));
    }
    let out = SuiteManifest {
        scenarios: entries,
        ..manifest
    };
    let path = args.out.join("suite.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
    emit(&format!("{}\n", path.display()));
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// 3 when the policy process failed, 2 for every other error.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(r) = cause.downcast_ref::<RunError>() {
            return r.exit_code() as u8;
        }
        if cause.downcast_ref::<BridgeError>().is_some() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Generate(a) => generate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
