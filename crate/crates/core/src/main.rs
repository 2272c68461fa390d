use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use miso_wpt::circuit::{
    build_loop_system, load_impedance_file, save_impedance_file, GeometrySpec, ImpedanceMatrix, Preset,
    DEFAULT_FREQUENCY_HZ,
};
use miso_wpt::pipeline::PipelineOptions;
use miso_wpt::qcqp::ConstraintMode;
use miso_wpt::report::{run_sweep, solve_with_policy, workers_from_env, AngleRange, LoadPolicy, SolveRecord, SweepSpec};
use miso_wpt::sdr::SdrForm;
use miso_wpt::{validate, Error, Result};

/// Globally optimal operating points for multi-transmitter wireless power transfer.
///
/// Exit codes: 0 success, 2 invalid input or failed validation, 3 solver
/// failure or infeasible constraints, 4 I/O error. The worker count for
/// sweeps is read from MISO_WPT_WORKERS.
#[derive(Parser, Debug)]
#[command(author, version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize a single system and print a summary plus a JSON record.
    Solve(SolveArgs),
    /// Sweep the receiver angle (and distance) of a preset, writing CSV files.
    Sweep(SweepArgs),
    /// Run the identity checks and the acceptance suite on all presets.
    Validate,
    /// Write the impedance matrix of a preset geometry as JSON.
    GenMatrix(GenArgs),
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Load resistance: auto (closed-form optimum), optimize, or ohms.
    #[arg(long, default_value = "auto")]
    rl: LoadPolicy,
    /// none, nonneg, or caps=<w1,w2,...>.
    #[arg(long, default_value = "nonneg")]
    constraints: ConstraintMode,
    /// SDP tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value = "conic")]
    form: SdrForm,
}

impl SolverArgs {
    fn options(&self) -> Result<PipelineOptions> {
        let mut o = PipelineOptions {
            constraints: self.constraints.clone(),
            ..PipelineOptions::default()
        };
        o.sdr.form = self.form;
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::InvalidArgument(format!("tolerance {tol} must lie in (0, 1)")));
            }
            o.sdr.sdp.tolerance = tol;
        }
        Ok(o)
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    preset: Option<Preset>,
    /// Impedance matrix JSON file.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Receiver distance in wavelengths.
    #[arg(long, default_value_t = 0.1)]
    d: f64,
    /// Receiver angle in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for result.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    preset: Preset,
    /// Comma-separated receiver distances in wavelengths.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    d: Vec<f64>,
    /// start:step:stop in degrees.
    #[arg(long, default_value = "-90:2:90", allow_hyphen_values = true)]
    theta_range: AngleRange,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for sweep.csv and pattern.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    preset: Preset,
    #[arg(long, default_value_t = 0.1)]
    d: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta: f64,
    /// Leave out the mutual radiation resistance between loops.
    #[arg(long)]
    no_mutual_radiation: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn preset_matrix(preset: Preset, d: f64, theta: f64, mutual_radiation: bool) -> Result<ImpedanceMatrix> {
    let mut g = GeometrySpec::preset(preset, DEFAULT_FREQUENCY_HZ, d, theta.to_radians());
    g.mutual_radiation = mutual_radiation;
    build_loop_system(&g, DEFAULT_FREQUENCY_HZ)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let z = match (&args.preset, &args.matrix) {
        (_, Some(path)) => load_impedance_file(path)?,
        (Some(p), None) => preset_matrix(*p, args.d, args.theta, true)?,
        (None, None) => return Err(Error::InvalidArgument("either --preset or --matrix is required".into())),
    };
    let options = args.solver.options()?;
    let result = solve_with_policy(&z, args.solver.rl, &options)?;
    let record = SolveRecord::new(&z, args.solver.rl, &result);
    print!("{}", record.summary());
    let json = serde_json::to_string_pretty(&record)?;
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            fs::write(dir.join("result.json"), json + "\n")?;
        }
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let spec = SweepSpec {
        distances: args.d.clone(),
        theta: args.theta_range,
        load: args.solver.rl,
        options: args.solver.options()?,
        ..SweepSpec::new(args.preset)
    };
    let report = run_sweep(&spec, workers_from_env())?;
    create_dir(&args.out)?;
    report.write_csv(fs::File::create(args.out.join("sweep.csv"))?)?;
    report.write_pattern_csv(fs::File::create(args.out.join("pattern.csv"))?)?;
    let failed = report.failures();
    println!(
        "{} points written to {} ({failed} failed)",
        report.rows.len(),
        args.out.join("sweep.csv").display()
    );
    Ok(if failed > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn run_validate() -> ExitCode {
    let mut ok = true;
    for (tag, report) in validate::identity_suite() {
        let failures = report.failures();
        if failures.is_empty() {
            println!("[PASS] identities {tag}: {} checks", report.checks.len());
        } else {
            ok = false;
            let names: Vec<&str> = failures.iter().map(|c| c.name.as_str()).collect();
            println!("[FAIL] identities {tag}: {}", names.join(", "));
        }
    }
    for outcome in validate::run_acceptance() {
        ok &= outcome.passed;
        println!("{outcome}");
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn gen_matrix(args: GenArgs) -> Result<ExitCode> {
    let z = preset_matrix(args.preset, args.d, args.theta, !args.no_mutual_radiation)?;
    match &args.out {
        Some(path) => save_impedance_file(&z, path)?,
        None => {
            let file = miso_wpt::circuit::ImpedanceFile::from_matrix(&z);
            println!("{}", serde_json::to_string_pretty(&file)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Validate => Ok(run_validate()),
        Command::GenMatrix(a) => gen_matrix(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
