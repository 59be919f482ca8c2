use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ilab::experiments::calibrate::{
    reduced_sweep_config, search_kappa, search_preset, Constants, PresetSearch, ReproductionReport,
    DEFAULT_CONSTANTS_FILE,
};
use ilab::experiments::{emit, run_sweep, ExperimentConfig, Format};
use ilab::kv::Table;
use ilab::verifier::{bound_chain_study, theorem_preset, ChainConfig, HypothesisMode};

#[derive(Parser)]
#[command(name = "ilab", version, about = "Invariance lab: sweeps, presets and the duality verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dimension sweep and write one record per (method, d, seed).
    Sweep(SweepArgs),
    /// Run the bound-chain study on random Gram instances.
    Verify(VerifyArgs),
    /// Print the preset norms and dimension for given sizes and margin.
    Preset(PresetArgs),
    /// Search the constants and write a constants file.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Config file; flags below override its values.
    config: Option<PathBuf>,
    #[arg(long)]
    d_grid: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta2: Option<f64>,
    #[arg(long)]
    rc: Option<f64>,
    #[arg(long)]
    rs: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Source of kappa, max_iters and penalty weights not set elsewhere.
    #[arg(long, default_value = DEFAULT_CONSTANTS_FILE)]
    constants: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta2: f64,
    #[arg(long, default_value_t = 3.0)]
    t: f64,
    /// Write the full study as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    epsilon: f64,
    /// Allow environments of 65 samples or fewer.
    #[arg(long)]
    relaxed: bool,
    #[arg(long, default_value = DEFAULT_CONSTANTS_FILE)]
    constants: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Constants file to write.
    #[arg(long, default_value = DEFAULT_CONSTANTS_FILE)]
    out: PathBuf,
    /// Seeds per preset trial.
    #[arg(long, default_value_t = 100)]
    preset_seeds: u64,
    /// Seeds per kappa trial and for the sweep re-check.
    #[arg(long, default_value_t = 15)]
    sweep_seeds: usize,
    /// Keep the preset constants of the existing file.
    #[arg(long)]
    skip_preset: bool,
    /// Keep the kappa of the existing file.
    #[arg(long)]
    skip_kappa: bool,
}

enum Failure {
    Config(String),
    Partial(String),
}

impl From<ilab::Error> for Failure {
    fn from(e: ilab::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig, ilab::Error> {
    let mut table = match &args.config {
        Some(path) => Table::parse(&std::fs::read_to_string(path)?)?,
        None => Table::default(),
    };
    let overrides = [
        ("d_grid", args.d_grid.clone()),
        ("seeds", args.seeds.map(|v| v.to_string())),
        ("n1", args.n1.map(|v| v.to_string())),
        ("n2", args.n2.map(|v| v.to_string())),
        ("theta1", args.theta1.map(|v| v.to_string())),
        ("theta2", args.theta2.map(|v| v.to_string())),
        ("rc", args.rc.map(|v| v.to_string())),
        ("rs", args.rs.map(|v| v.to_string())),
        ("kappa", args.kappa.map(|v| v.to_string())),
        ("methods", args.methods.clone()),
        ("output", args.out.as_ref().map(|p| p.display().to_string())),
        ("format", args.format.clone()),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            table.set(key, v);
        }
    }
    let consts = Constants::load(&args.constants)?;
    let w = consts.weights;
    let defaults = [
        ("max_iters", consts.max_iters.to_string()),
        ("irm_weight", w.irmv1.to_string()),
        ("vrex_weight", w.vrex.to_string()),
        ("groupdro_weight", w.groupdro.to_string()),
        ("moment_weight", w.moment_match.to_string()),
    ];
    for (key, value) in defaults {
        if table.get(key).is_none() {
            table.set(key, value);
        }
    }
    if table.get("sigma").is_none() && table.get("kappa").is_none() {
        table.set("kappa", consts.kappa.to_string());
    }
    ExperimentConfig::from_table(&table)
}

fn sweep(args: SweepArgs) -> Outcome {
    let cfg = sweep_config(&args)?;
    let records = run_sweep(&cfg)?;
    match &cfg.output_path {
        Some(path) => emit(&records, cfg.format, path).map_err(|e| Failure::Partial(e.to_string()))?,
        None => {
            let stdout = std::io::stdout();
            let written = match cfg.format {
                Format::Csv => ilab::experiments::record::write_csv(&records, stdout.lock()),
                Format::Json => {
                    println!("{}", ilab::experiments::record::to_json(&records));
                    Ok(())
                }
            };
            written.map_err(|e| Failure::Partial(e.to_string()))?;
        }
    }
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Failure::Partial(format!("{failed} of {} runs failed", records.len())));
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Outcome {
    let cfg = ChainConfig {
        instances: args.instances,
        max_attempts: 4 * args.instances.max(1),
        seed: args.seed,
        theta_2: args.theta2,
        t: args.t,
        ..Default::default()
    };
    let study = bound_chain_study(&cfg);
    if let Some(path) = &args.out {
        std::fs::write(path, study.to_json()).map_err(|e| Failure::Partial(e.to_string()))?;
    }
    let holding = study.records.iter().filter(|r| r.chain_holds()).count();
    println!(
        "attempts {}  rejected {}  errors {}  records {}  chain holds {}",
        study.attempts,
        study.rejected,
        study.errors.len(),
        study.records.len(),
        holding
    );
    if let Some(worst) = study.records.iter().map(|r| r.canonical_dual - r.closed_form).reduce(f64::min) {
        println!("min (canonical dual - closed form) {worst:.6e}");
    }
    if study.all_hold() {
        Ok(())
    } else {
        Err(Failure::Partial("bound chain did not hold on every instance".into()))
    }
}

fn preset(args: PresetArgs) -> Outcome {
    let consts = Constants::load(&args.constants)?;
    let mode = if args.relaxed { HypothesisMode::Relaxed } else { HypothesisMode::Strict };
    let p = theorem_preset(args.n1, args.n2, args.gamma, args.epsilon, &consts.preset, mode)?;
    println!("r_c = {:.9e}", p.r_c);
    println!("r_s = {:.9e}", p.r_s);
    println!("d = {}", p.d);
    println!("sigma = {:.9e}", p.sigma);
    println!("d_real = {:.9e}", p.d_real);
    println!("margin_floor = {:.9e}", p.margin_floor);
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Outcome {
    let mut consts = match Constants::load(&args.out) {
        Ok(c) => c,
        Err(_) => Constants::load_default()?,
    };
    if !args.skip_preset {
        let search = PresetSearch { seeds: args.preset_seeds, ..Default::default() };
        let (found, trials) = search_preset(&search)?;
        for t in &trials {
            println!("preset N={} C_r={} multiplier={} hits={:?} passes={}", t.n, t.big_c_r, t.multiplier, t.hits, t.passes);
        }
        consts.preset = found.ok_or_else(|| Failure::Partial("no preset constants met the rates".into()))?;
    }
    if !args.skip_kappa {
        let base = reduced_sweep_config(&consts, args.sweep_seeds);
        let (found, trials) = search_kappa(&base, &[1.0, 1.25, 1.5, 2.0, 3.0])?;
        for t in &trials {
            println!("kappa={} mean_interpolating={:.3} oracle_robust={:.3} passes={}", t.kappa, t.mean_interpolating, t.oracle_robust, t.passes);
        }
        consts.kappa = found.ok_or_else(|| Failure::Partial("no kappa met the interpolation rule".into()))?;
    }
    write_constants(&consts, &args.out)?;
    println!("wrote {}", args.out.display());
    let cfg = reduced_sweep_config(&consts, args.sweep_seeds);
    let records = run_sweep(&cfg)?;
    let report = ReproductionReport::from_records(&records, cfg.d_grid[0], *cfg.d_grid.last().expect("grid"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    let v = report.verdicts();
    println!("sweep re-check: small-d gain {}  large-d agreement {}  two-phase {}  oracle {}", v[0], v[1], v[2], v[3]);
    if v.iter().all(|&ok| ok) {
        Ok(())
    } else {
        Err(Failure::Partial("reduced-scale sweep misses a threshold".into()))
    }
}

fn write_constants(consts: &Constants, path: &Path) -> Result<(), ilab::Error> {
    let header = "# Calibrated constants; regenerate with `ilab calibrate`.\n";
    std::fs::write(path, format!("{header}{}", consts.to_kv()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::Preset(a) => preset(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
