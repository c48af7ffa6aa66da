use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use qdmd::dataio::{self, MatrixFormat};
use qdmd::dmd::{self, RankRule, SnapshotPair};
use qdmd::experiment::{self, ExperimentConfig};
use qdmd::preprocessing;
use qdmd::quantizer::{DitherStream, QuantizerSpec};
use qdmd::systems::{self, SystemSpec, TrajectoryConfig};
use qdmd::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_PARTIAL: u8 = 4;
const EXIT_GUARD: u8 = 5;

#[derive(Parser)]
#[command(name = "qdmd", version, about = "DMD under dither-quantized data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a benchmark system and write the sampled trajectory.
    Simulate(SimulateArgs),
    /// Dither-quantize a matrix.
    Quantize(QuantizeArgs),
    /// Fit a DMD operator to a snapshot sequence.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo word-length sweep.
    Sweep(SweepArgs),
    /// Recover the unregularized operator from quantized snapshots.
    Recover(RecoverArgs),
    /// Summarize a sweep report.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Random seed (echoed; unused by deterministic subcommands).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemKind {
    Pendulum,
    Vanderpol,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Binary => MatrixFormat::Binary,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "pendulum")]
    system: SystemKind,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// System matrix for `--system linear`, rows separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    matrix: Option<String>,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    dt: f64,
    #[arg(long, default_value_t = 10_000.0, value_parser = positive)]
    duration: f64,
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    bits: u32,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    u_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    u_max: f64,
    /// Dither sub-stream of the seed.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Full,
    Reduced,
    Ridge,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Snapshot sequence, one column per time step.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    method: Method,
    /// Delay-embedding dimension.
    #[arg(long, default_value_t = 1)]
    embed: usize,
    /// Fixed reduced rank (overrides --energy).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 0.9999)]
    energy: f64,
    #[arg(long)]
    pinv_tol: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Pendulum,
    Vanderpol,
}

#[derive(Args)]
struct SweepArgs {
    /// Overrides `master_seed` when given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    #[arg(long)]
    training_snapshots: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    phi: PathBuf,
    #[arg(long)]
    phiprime: PathBuf,
    #[arg(long, value_parser = positive)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// Also write every sample as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

/// Failure carrying the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::Cell { .. } | Error::UndefinedReference | Error::NonConvex { .. } | Error::DegenerateData(_) => 1,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn print_config(name: &str, config: &Value) {
    println!("{name} config: {config}");
}

fn format_for(path: &Path, format: Option<FormatArg>) -> MatrixFormat {
    format.map(Into::into).unwrap_or_else(|| MatrixFormat::from_path(path))
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>, Failure> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| config_error(format!("--matrix: {e}")))?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(config_error("--matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let system = match args.system {
        SystemKind::Pendulum => SystemSpec::NegDampedPendulum,
        SystemKind::Vanderpol => SystemSpec::VanDerPol,
        SystemKind::Linear => {
            let m = args
                .matrix
                .as_deref()
                .ok_or_else(|| config_error("--system linear needs --matrix"))?;
            SystemSpec::linear(&parse_matrix(m)?)
        }
    };
    let mut traj = TrajectoryConfig::new(args.dt, args.duration);
    traj.substeps = args.substeps;
    traj.x0 = Some(match args.x0 {
        Some(x0) => x0,
        None => system.default_initial_state()?.as_slice().to_vec(),
    });
    let format = format_for(&args.out, args.format);
    print_config(
        "simulate",
        &json!({"seed": args.common.seed, "system": system, "trajectory": traj, "samples": traj.samples() + 1, "out": args.out, "format": format}),
    );
    let data = systems::simulate(&system, &traj)?;
    dataio::write_matrix(&data, &args.out, format)?;
    let last = data.column(data.ncols() - 1);
    println!("wrote {}x{} trajectory to {}", data.nrows(), data.ncols(), args.out.display());
    println!("final state: {:?}", last.as_slice());
    Ok(0)
}

fn quantize(args: QuantizeArgs) -> Result<u8, Failure> {
    let spec = QuantizerSpec::new(args.u_min, args.u_max, args.bits)?;
    let format = format_for(&args.out, args.format);
    print_config(
        "quantize",
        &json!({"seed": args.common.seed, "stream": args.stream, "bits": args.bits, "u_min": args.u_min,
                "u_max": args.u_max, "epsilon": spec.resolution(), "input": args.input, "out": args.out}),
    );
    let data = dataio::read_matrix(&args.input, None)?;
    let q = spec.quantize_matrix(&data, &mut DitherStream::substream(args.common.seed, args.stream));
    dataio::write_matrix(&q.matrix, &args.out, format)?;
    println!(
        "quantized {}x{} matrix; {} saturated entries",
        data.nrows(),
        data.ncols(),
        q.saturation_count
    );
    Ok(0)
}

fn estimate(args: EstimateArgs) -> Result<u8, Failure> {
    let rule = match args.rank {
        Some(r) => RankRule::Fixed(r),
        None => RankRule::Energy(args.energy),
    };
    let format = format_for(&args.out, args.format);
    let method = match args.method {
        Method::Full => "full",
        Method::Reduced => "reduced",
        Method::Ridge => "ridge",
    };
    print_config(
        "estimate",
        &json!({"seed": args.common.seed, "method": method, "embed": args.embed, "rank_rule": rule,
                "pinv_tol": args.pinv_tol, "gamma": args.gamma, "input": args.input, "out": args.out}),
    );
    let data = dataio::read_matrix(&args.input, None)?;
    let embedded = preprocessing::hankel_embed(&data, args.embed)?;
    let pair = dmd::build_snapshots(&embedded)?;
    let k = match args.method {
        Method::Full => {
            let full = dmd::dmd_full(&pair, args.pinv_tol)?;
            println!("pseudo-inverse rank {}", full.rank);
            full.k
        }
        Method::Reduced => {
            let model = dmd::dmd_reduced(&pair, rule)?;
            println!("reduced rank {}", model.rank);
            for (i, l) in model.eigenvalues.iter().enumerate() {
                println!("lambda_{i} = {:.12} {:+.12}i (|lambda| = {:.12})", l.re, l.im, l.norm());
            }
            if model.ill_conditioned_eigenbasis() {
                println!("warning: eigenbasis condition {:e}", model.eigenbasis_condition);
            }
            model.k_r
        }
        Method::Ridge => dmd::ridge_dmd(&pair, args.gamma)?,
    };
    dataio::write_matrix(&k, &args.out, format)?;
    println!("wrote {}x{} operator to {}", k.nrows(), k.ncols(), args.out.display());
    Ok(0)
}

fn sweep(args: SweepArgs) -> Result<u8, Failure> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        (None, Some(Preset::Pendulum)) => ExperimentConfig::pendulum(),
        (None, Some(Preset::Vanderpol)) => ExperimentConfig::van_der_pol(),
        (None, None) => return Err(config_error("sweep needs --config or --preset")),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(bits) = args.bits {
        cfg.bit_list = bits;
    }
    if let Some(t) = args.training_snapshots {
        cfg.training_snapshots = t;
    }
    cfg.validate()?;
    let margin = cfg.resolved_margin()?;
    let epsilons: Vec<Value> = cfg
        .bit_list
        .iter()
        .map(|&b| Ok(json!({"bits": b, "epsilon": cfg.quantizer(b)?.map(|q| q.resolution())})))
        .collect::<Result<_, Error>>()?;
    print_config(
        "sweep",
        &json!({"seed": cfg.master_seed, "experiment": cfg, "margin": margin, "epsilon": epsilons, "out": args.out}),
    );

    let report = experiment::run_sweep_with_threads(&cfg, args.threads)?;
    dataio::write_report(&report, &args.out)?;
    println!(
        "reference: N = {}, T = {}, reduced rank {}",
        report.reference.observables, report.reference.snapshots, report.reference.reduced_rank
    );
    print_groups(&report);
    for f in &report.failures {
        println!("failed cell bits = {} trial = {}: {}", f.bits, f.trial, f.message);
    }
    println!("wrote report to {}", args.out.display());
    Ok(if report.failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn print_groups(report: &experiment::SweepReport) {
    println!("{:>5} {:>7} {:>14} {:>14} {:>14} {:>10}", "bits", "trials", "full_median", "reduced_median", "pred_median", "saturated");
    for g in &report.groups {
        let med = |s: &Option<qdmd::metrics::BoxStats>| {
            s.as_ref().map_or_else(|| "-".to_string(), |b| format!("{:.6e}", b.median))
        };
        println!(
            "{:>5} {:>7} {:>14} {:>14} {:>14} {:>10}",
            g.bits,
            g.trials.len(),
            med(&g.summary.full_matrix_rel_err),
            med(&g.summary.reduced_matrix_rel_err),
            med(&g.summary.avg_pred_rel_err),
            g.saturation_count
        );
    }
}

fn recover(args: RecoverArgs) -> Result<u8, Failure> {
    let format = format_for(&args.out, args.format);
    print_config(
        "recover",
        &json!({"seed": args.common.seed, "epsilon": args.epsilon, "gamma_nominal": -args.epsilon * args.epsilon / 12.0,
                "phi": args.phi, "phiprime": args.phiprime, "out": args.out}),
    );
    let phi = dataio::read_matrix(&args.phi, None)?;
    let phi_prime = dataio::read_matrix(&args.phiprime, None)?;
    let pair = SnapshotPair::new(phi, phi_prime)?;
    let rec = match dmd::recover_regularized(&pair, args.epsilon) {
        Ok(rec) => rec,
        Err(Error::DegenerateData(msg)) => {
            println!("guard: infeasible");
            return Err(Failure {
                code: EXIT_GUARD,
                message: msg,
            });
        }
        Err(e) => return Err(e.into()),
    };
    println!("lambda_min/T = {:e}", rec.lambda_min_over_t);
    println!("gamma = {:e}", rec.gamma);
    println!("guard: {}", if rec.guarded { "tripped (fallback regularizer used)" } else { "ok" });
    dataio::write_matrix(&rec.k, &args.out, format)?;
    println!("wrote {}x{} operator to {}", rec.k.nrows(), rec.k.ncols(), args.out.display());
    Ok(0)
}

fn report(args: ReportArgs) -> Result<u8, Failure> {
    print_config("report", &json!({"seed": args.common.seed, "input": args.input, "csv": args.csv}));
    let report = dataio::read_report(&args.input)?;
    println!(
        "schema {}; {} groups; {} failed cells",
        report.schema_version,
        report.groups.len(),
        report.failures.len()
    );
    print_groups(&report);
    if let Some(path) = &args.csv {
        let mut out = String::from("bits,trial,full_matrix_rel_err,reduced_matrix_rel_err,avg_pred_rel_err\n");
        for s in report.samples() {
            let full = s.full_matrix_rel_err.map_or_else(String::new, |v| format!("{v:e}"));
            out.push_str(&format!(
                "{},{},{},{:e},{:e}\n",
                s.bits, s.trial, full, s.reduced_matrix_rel_err, s.avg_pred_rel_err
            ));
        }
        std::fs::write(path, out).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        println!("wrote samples to {}", path.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Quantize(a) => quantize(a),
        Command::Estimate(a) => estimate(a),
        Command::Sweep(a) => sweep(a),
        Command::Recover(a) => recover(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
