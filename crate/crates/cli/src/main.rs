mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fair_curtail::grid::{builtin_testbed, load_network, Network, Snapshot};
use fair_curtail::simulator::{
    compare_schemes, comparison_panels, generate_duck_curve_with, run_timeseries, DuckCurveParams, Scenario,
    DEFAULT_RESOLUTION_MINUTES,
};
use fair_curtail::solvers::{solve, SolveOptions, DEFAULT_TOLERANCE_KW};
use fair_curtail::welfare::SchemeConfig;
use fair_curtail::Error;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "fair-curtail", version, about = "Fair PV curtailment envelopes for LV feeders")]
struct Cli {
    /// Worker threads for timestep and scheme parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one snapshot for one or more schemes.
    Solve(SolveArgs),
    /// Solve one snapshot for every comparison panel.
    Compare(CompareArgs),
    /// Replay a day, one independent solve per timestep.
    Simulate(SimulateArgs),
    /// Write a synthetic duck-curve scenario CSV.
    GenScenario(GenArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Network TOML file, or `testbed` for the bundled six-bus feeder.
    #[arg(long)]
    network: Option<String>,
    /// Run configuration TOML; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for result files (default: current directory).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Envelope accuracy in kW.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct SchemeArgs {
    /// opf_generation, opf_export, uniform_dynamic_export, egalitarian,
    /// nash_export or utilitarian_mix.
    #[arg(long)]
    scheme: Option<String>,
    /// Export entitlement for uniform_dynamic_export, kW.
    #[arg(long)]
    k: Option<f64>,
    /// Reference curtailment for egalitarian, kW.
    #[arg(long)]
    c_ref: Option<f64>,
    /// Inequality weight for utilitarian_mix.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct SnapshotArgs {
    /// Demand per prosumer, comma-separated kW.
    #[arg(long, value_delimiter = ',', requires = "potential")]
    demand: Option<Vec<f64>>,
    /// PV potential per prosumer, comma-separated kW.
    #[arg(long, value_delimiter = ',', requires = "demand")]
    potential: Option<Vec<f64>>,
    /// Scenario CSV to take the snapshot from.
    #[arg(long, conflicts_with_all = ["generate", "demand"])]
    scenario: Option<PathBuf>,
    /// Generate a duck-curve scenario with this seed and take the snapshot from it.
    #[arg(long, conflicts_with = "demand")]
    generate: Option<u64>,
    /// Timestep label (HH:MM) picked from the scenario.
    #[arg(long, default_value = "12:00")]
    at: String,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Scenario CSV.
    #[arg(long, conflicts_with = "generate")]
    scenario: Option<PathBuf>,
    /// Generate a duck-curve scenario with this seed.
    #[arg(long)]
    generate: Option<u64>,
    /// Minutes per scenario row.
    #[arg(long)]
    resolution: Option<u32>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Duck-curve shape parameters (TOML).
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    network: Option<String>,
    scenario: Option<PathBuf>,
    generate: Option<u64>,
    #[serde(default)]
    schemes: Vec<SchemeConfig>,
    output_dir: Option<PathBuf>,
    tolerance_kw: Option<f64>,
    format: Option<Format>,
    resolution_minutes: Option<u32>,
    duck_curve: Option<DuckCurveParams>,
}

/// Process outcome with its exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "ConfigError".into(),
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config_error() { 1 } else { 2 },
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

struct Settings {
    net: Network,
    config: RunConfig,
    output_dir: PathBuf,
    format: Format,
    opts: SolveOptions,
}

fn load_settings(common: &Common) -> Outcome<Settings> {
    let config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let network = common
        .network
        .clone()
        .or_else(|| config.network.clone())
        .ok_or_else(|| Failure::config("--network is required"))?;
    let net = if network == "testbed" {
        builtin_testbed()
    } else {
        load_network(&network)?
    };
    let tol_kw = common.tolerance.or(config.tolerance_kw).unwrap_or(DEFAULT_TOLERANCE_KW);
    if !(tol_kw > 0.0 && tol_kw.is_finite()) {
        return Err(Failure::config(format!("tolerance must be positive, got {tol_kw}")));
    }
    Ok(Settings {
        output_dir: common
            .output_dir
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        format: common.format.or(config.format).unwrap_or_default(),
        opts: SolveOptions::with_tolerance(tol_kw),
        net,
        config,
    })
}

fn scheme_from_args(args: &SchemeArgs) -> Outcome<Option<SchemeConfig>> {
    let Some(name) = args.scheme.as_deref() else {
        return Ok(None);
    };
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Failure::config(format!("{name} requires --{flag}")));
    let cfg = match name {
        "opf_generation" => SchemeConfig::OpfGeneration,
        "opf_export" => SchemeConfig::OpfExport,
        "uniform_dynamic_export" => SchemeConfig::UniformDynamicExport { k: need(args.k, "k")? },
        "egalitarian" => SchemeConfig::Egalitarian {
            c_ref: need(args.c_ref, "c-ref")?,
        },
        "nash_export" => SchemeConfig::NashExport,
        "utilitarian_mix" => SchemeConfig::UtilitarianMix {
            gamma: args.gamma.unwrap_or(0.0),
        },
        other => return Err(Failure::config(format!("unknown scheme {other:?}"))),
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

/// Schemes from the flags, else from the config file.
fn schemes(args: &SchemeArgs, settings: &Settings) -> Outcome<Vec<SchemeConfig>> {
    let list = match scheme_from_args(args)? {
        Some(cfg) => vec![cfg],
        None => settings.config.schemes.clone(),
    };
    if list.is_empty() {
        return Err(Failure::config("--scheme is required (see --help)"));
    }
    for cfg in &list {
        cfg.validate()?;
    }
    Ok(list)
}

fn read_scenario(path: &Path, net: &Network, resolution: u32) -> Outcome<Scenario> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(Scenario::read_csv(file, net.prosumer_count(), resolution)?)
}

fn generated(settings: &Settings, seed: u64) -> Outcome<Scenario> {
    let params = settings.config.duck_curve.clone().unwrap_or_default();
    Ok(generate_duck_curve_with(&settings.net, seed, &params)?)
}

/// Scenario named by the flags, else by the config file.
fn scenario_source(
    path: Option<&Path>,
    seed: Option<u64>,
    settings: &Settings,
    resolution: u32,
) -> Outcome<Option<Scenario>> {
    let (path, seed) = match (path, seed) {
        (None, None) => (settings.config.scenario.as_deref(), settings.config.generate),
        flags => flags,
    };
    match (path, seed) {
        (Some(_), Some(_)) => Err(Failure::config("scenario and generate are mutually exclusive")),
        (Some(path), None) => read_scenario(path, &settings.net, resolution).map(Some),
        (None, Some(seed)) => generated(settings, seed).map(Some),
        (None, None) => Ok(None),
    }
}

fn pick_snapshot(args: &SnapshotArgs, settings: &Settings) -> Outcome<Snapshot> {
    if let (Some(d), Some(p)) = (&args.demand, &args.potential) {
        let snap = Snapshot::new(d.clone(), p.clone())?;
        snap.check_network(&settings.net)?;
        return Ok(snap);
    }
    let resolution = settings.config.resolution_minutes.unwrap_or(DEFAULT_RESOLUTION_MINUTES);
    let scenario = scenario_source(args.scenario.as_deref(), args.generate, settings, resolution)?.ok_or_else(|| {
        Failure::config("a snapshot is required: --demand/--potential, --scenario or --generate")
    })?;
    scenario
        .snapshots()
        .iter()
        .find(|s| s.timestamp() == Some(args.at.as_str()))
        .cloned()
        .ok_or_else(|| Failure::config(format!("no timestep labelled {:?} in the scenario", args.at)))
}

fn output_path(settings: &Settings, stem: &str, format: Format) -> Outcome<PathBuf> {
    std::fs::create_dir_all(&settings.output_dir).map_err(|e| Error::Io {
        path: settings.output_dir.display().to_string(),
        source: e,
    })?;
    Ok(settings.output_dir.join(format!("{stem}.{}", format.extension())))
}

fn report_errors(errors: &[Error]) -> Outcome {
    for e in errors {
        eprintln!("error: {}: {e}", e.kind());
    }
    match errors.first() {
        Some(first) => Err(Failure {
            code: if errors.iter().all(Error::is_config_error) { 1 } else { 2 },
            kind: first.kind().to_string(),
            message: format!("{} failure(s)", errors.len()),
        }),
        None => Ok(()),
    }
}

fn cmd_solve(args: SolveArgs) -> Outcome {
    let settings = load_settings(&args.common)?;
    let configs = schemes(&args.scheme, &settings)?;
    let snap = pick_snapshot(&args.snapshot, &settings)?;
    let mut rows = Vec::new();
    for cfg in &configs {
        rows.push(solve(&settings.net, &snap, cfg, settings.opts)?);
    }
    let path = output_path(&settings, "solve", settings.format)?;
    output::write_solve(&path, settings.format, &settings.net, &rows)?;
    for r in &rows {
        match r.lambda {
            Some(l) => println!("{}: lambda {l:.4}, total {:.3} kW", r.scheme, r.total()),
            None => println!("{}: welfare {:.6}, total {:.3} kW", r.scheme, r.welfare, r.total()),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Outcome {
    let settings = load_settings(&args.common)?;
    let snap = pick_snapshot(&args.snapshot, &settings)?;
    let configs = if settings.config.schemes.is_empty() {
        comparison_panels(&snap)
    } else {
        settings.config.schemes.clone()
    };
    let results = compare_schemes(&settings.net, &snap, &configs, settings.opts)?;
    let path = output_path(&settings, "compare", settings.format)?;
    output::write_compare(&path, settings.format, &snap, &configs, &results)?;
    let mut errors = Vec::new();
    for (cfg, r) in configs.iter().zip(results) {
        match r {
            Ok(r) => println!("{cfg}: total {:.3} kW", r.total()),
            Err(e) => errors.push(e),
        }
    }
    println!("wrote {}", path.display());
    report_errors(&errors)
}

fn cmd_simulate(args: SimulateArgs) -> Outcome {
    let settings = load_settings(&args.common)?;
    let configs = schemes(&args.scheme, &settings)?;
    let resolution = args
        .resolution
        .or(settings.config.resolution_minutes)
        .unwrap_or(DEFAULT_RESOLUTION_MINUTES);
    let scenario = scenario_source(args.scenario.as_deref(), args.generate, &settings, resolution)?
        .ok_or_else(|| Failure::config("--scenario or --generate is required"))?;
    let mut traces = Vec::new();
    for cfg in &configs {
        let trace = run_timeseries(&settings.net, &scenario, cfg, settings.opts)?;
        let peak = trace
            .peak_voltage()
            .map(|(k, v)| format!("{v:.6} p.u. at {}", trace.steps[k].label))
            .unwrap_or_else(|| "n/a".into());
        let lambda = trace.min_lambda().map(|l| format!("{l:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{cfg}: min lambda {lambda}, peak voltage {peak}, curtailed {:.3} kWh",
            trace.total_curtailed_kwh()
        );
        traces.push(trace);
    }
    let path = output_path(&settings, "trace", settings.format)?;
    output::write_traces(&path, settings.format, &traces)?;
    println!("wrote {}", path.display());
    let errors: Vec<Error> = traces
        .into_iter()
        .flat_map(|t| t.steps.into_iter().filter_map(|s| s.outcome.err()))
        .collect();
    report_errors(&errors)
}

fn cmd_gen_scenario(args: GenArgs) -> Outcome {
    let settings = load_settings(&args.common)?;
    let params = match &args.params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::config(format!("invalid parameters: {e}")))?
        }
        None => settings.config.duck_curve.clone().unwrap_or_default(),
    };
    let scenario = generate_duck_curve_with(&settings.net, args.seed, &params)?;
    // scenarios are always CSV: the profile format is shared with the input side
    let path = output_path(&settings, "scenario", Format::Csv)?;
    let file = std::fs::File::create(&path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    scenario.write_csv(file)?;
    println!("wrote {} ({} steps)", path.display(), scenario.len());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start {jobs} workers: {e}")))?;
    }
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::GenScenario(a) => cmd_gen_scenario(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAIR_CURTAIL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message);
            ExitCode::from(f.code)
        }
    }
}
