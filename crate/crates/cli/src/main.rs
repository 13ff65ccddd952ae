use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetnet_da::data_aided::{da_power_floor, PowerFloor};
use hetnet_da::experiments::{
    load_config_file, parse_sweep, run_sweep, run_sweep_with_threads, table_to_csv, validate, ExperimentSpec, Metric,
    TopologyContext, ValidationOptions,
};
use hetnet_da::Error;

/// Monte Carlo simulator for data-aided channel estimation in decoupled HetNets.
#[derive(Debug, Parser)]
#[command(name = "hetnet-da", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Channel estimation NMSE (dB) per estimator and UE class.
    NmseSweep(SweepArgs),
    /// Uncoded BER per detector and UE class.
    BerSweep(SweepArgs),
    /// Downlink zero-forcing rate per estimator and UE class.
    RateSweep(SweepArgs),
    /// Run the built-in acceptance checks; exits 1 if any fails.
    Validate(ValidateArgs),
    /// Print the high data power limit of the data-aided gain per UE.
    Floor(FloorArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat JSON configuration applied on top of the defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key, applied after --config. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Swept parameter, `name=min:max:step` or `name=v1,v2,...`.
    #[arg(long, value_name = "SPEC")]
    sweep: Option<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "HETNET_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "HETNET_THREADS")]
    threads: Option<usize>,
    /// Also write the report to this file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FloorArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Topology index drawn from the master seed.
    #[arg(long, default_value_t = 0)]
    topology: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::NmseSweep(a) => sweep_command(a, Metric::Nmse, "p_train_dbm"),
        Command::BerSweep(a) => sweep_command(a, Metric::Ber, "p_data_dbm"),
        Command::RateSweep(a) => sweep_command(a, Metric::Rate, "p_data_dbm"),
        Command::Validate(a) => validate_command(a),
        Command::Floor(a) => floor_command(a),
    }
}

fn load_spec(args: &ConfigArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match &args.config {
        Some(path) => load_config_file(path)?,
        None => ExperimentSpec::default(),
    };
    for item in &args.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set '{item}' is not KEY=VALUE")))?;
        spec.set(key.trim(), value)?;
    }
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    Ok(spec)
}

fn dump(spec: &ExperimentSpec) -> Result<ExitCode, Error> {
    let text = serde_json::to_string_pretty(&spec.to_flat_json()).map_err(|e| Error::Parse(e.to_string()))?;
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::from(e).context(path.display().to_string())),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::from),
    }
}

fn sweep_command(args: SweepArgs, metric: Metric, default_param: &str) -> Result<ExitCode, Error> {
    let mut spec = load_spec(&args.config)?;
    spec.metric = metric;
    if let Some(text) = &args.sweep {
        spec.sweep = parse_sweep(text)?;
    } else if spec.sweep == ExperimentSpec::default().sweep {
        // no sweep configured: a single point at the power this metric is plotted against
        spec.sweep.param = default_param.to_string();
        spec.sweep.values = vec![default_value(&spec, default_param)];
    }
    if args.config.dump_config {
        return dump(&spec);
    }
    spec.validate()?;
    log::info!("{} sweep over {} = {:?}", spec.metric, spec.sweep.param, spec.sweep.values);
    let table = match args.threads {
        Some(n) => run_sweep_with_threads(&spec, n)?,
        None => run_sweep(&spec)?,
    };
    emit(&table_to_csv(&table), args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn default_value(spec: &ExperimentSpec, param: &str) -> f64 {
    match param {
        "p_train_dbm" => spec.base.p_train_dbm,
        _ => spec.base.p_data_dbm,
    }
}

fn validate_command(args: ValidateArgs) -> Result<ExitCode, Error> {
    let opts = ValidationOptions {
        master_seed: args.seed,
        threads: args.threads,
        ..ValidationOptions::default()
    };
    let report = validate(&opts);
    let text = report.to_string();
    println!("{text}");
    if let Some(path) = &args.out {
        emit(&format!("{text}\n"), Some(path))?;
    }
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn floor_command(args: FloorArgs) -> Result<ExitCode, Error> {
    let spec = load_spec(&args.config)?;
    if args.config.dump_config {
        return dump(&spec);
    }
    spec.base.validate()?;
    let cfg = &spec.base;
    let ctx = TopologyContext::new(cfg, spec.master_seed, args.topology)?;
    let betas = &ctx.topology.beta_mbs;
    let rho_po = cfg.tau_t as f64 * ctx.powers.p_train / ctx.powers.noise;
    let mut text = String::from("ue,class,ul_bs,dl_bs,predicted_ber,rho_increment_limit,nmse_limit_db\n");
    for k in 0..betas.len() {
        let (limit, nmse) = match da_power_floor(cfg.tau_d, &ctx.predicted_ber, betas, k)? {
            PowerFloor::Finite(f) => (f, -10.0 * (1.0 + (rho_po + f) * betas[k]).log10()),
            PowerFloor::Unbounded => (f64::INFINITY, f64::NEG_INFINITY),
        };
        writeln!(
            text,
            "{k},{},{},{},{:.6e},{:.6e},{:.4}",
            ctx.classes[k].label(),
            ctx.assoc.ul_serving[k],
            ctx.assoc.dl_serving[k],
            ctx.predicted_ber[k],
            limit,
            nmse
        )
        .expect("writing to a String");
    }
    emit(&text, args.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}
