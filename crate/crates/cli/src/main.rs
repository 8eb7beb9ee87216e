//! `fisher`: solve, check and round Fisher-market instances from JSON files.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible or no
//! convergence, 3 verification failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fisher_core::model::{normalize_valuations, MarketInstance, ModelKind};
use fisher_core::nsw::{self, GeneratorParams, NswError, RootRule};
use fisher_core::rational::{self, RationalError};
use fisher_core::solver::{solve, Equilibrium, SolveError, SolveOptions};
use fisher_core::verify::{check_equilibrium_with, CheckOptions, DEFAULT_CHECK_TOL};

#[derive(Parser)]
#[command(name = "fisher", version, about = "Fisher market equilibria and NSW rounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute an equilibrium.
    Solve {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value_t = SolveOptions::default().tolerance)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a claimed equilibrium; exits 3 when it fails.
    Check {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        equilibrium: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CHECK_TOL)]
        tol: f64,
        /// Overrides --tol for the checker.
        #[arg(long)]
        check_tol: Option<f64>,
        /// Scale residuals by the size of the quantities compared.
        #[arg(long)]
        relative: bool,
    },
    /// Turn an equilibrium into an exact rational one on the same support.
    Exactify {
        #[command(flatten)]
        io: Io,
        /// Numeric equilibrium; solved with --model when absent.
        #[arg(long)]
        equilibrium: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Support detection threshold.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Round the SR equilibrium of a unit-cap instance.
    NswRound {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = RootArg::Lowest)]
        root_rule: RootArg,
    },
    /// Exhaustive NSW optimum.
    NswOpt {
        #[command(flatten)]
        io: Io,
    },
    /// SR bound, optimum and worst SRR rounding side by side.
    NswReport {
        #[command(flatten)]
        io: Io,
    },
    /// Write an NSW instance.
    Gen(GenArgs),
}

#[derive(Args)]
struct Io {
    #[arg(long)]
    input: PathBuf,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RootArg {
    Lowest,
    Enumerate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gap,
    Srr,
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    f: f64,
    #[arg(long, default_value_t = 1e4)]
    v: f64,
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = match e {
            SolveError::ModelMismatch(_) | SolveError::InvalidOptions(_) => 1,
            _ => 2,
        };
        fail(code, e)
    }
}

impl From<NswError> for Failure {
    fn from(e: NswError) -> Self {
        match e {
            NswError::Solve(s) => s.into(),
            other => fail(1, other),
        }
    }
}

impl From<RationalError> for Failure {
    fn from(e: RationalError) -> Self {
        let code = match e {
            RationalError::AmbiguousSupport(_) | RationalError::DegenerateSupport(_) => 3,
            _ => 1,
        };
        fail(code, e)
    }
}

fn read_instance(path: &Path) -> Result<MarketInstance, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
    MarketInstance::from_json(&text).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn read_equilibrium(path: &Path) -> Result<Equilibrium, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
    Equilibrium::from_json(&text).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| fail(1, e))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| fail(1, format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct AllocationOut {
    owner: Vec<Option<usize>>,
    utilities: Vec<f64>,
    nsw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    roots: Option<Vec<usize>>,
}

fn allocation_out(inst: &MarketInstance, alloc: nsw::IntegralAllocation, roots: Option<Vec<usize>>) -> AllocationOut {
    let alloc = nsw::IntegralAllocation::new(inst, alloc.owner);
    AllocationOut {
        nsw: nsw::nsw_value(&alloc, inst),
        owner: alloc.owner,
        utilities: alloc.utilities,
        roots,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { io, model, tol, seed } => {
            let inst = read_instance(&io.input)?;
            let opts = SolveOptions {
                tolerance: tol,
                ..SolveOptions::with_seed(seed)
            };
            let eq = solve(&inst, model, &opts)?;
            emit(&eq, io.out.as_deref())
        }
        Command::Check {
            io,
            model,
            equilibrium,
            tol,
            check_tol,
            relative,
        } => {
            let inst = read_instance(&io.input)?;
            let eq = read_equilibrium(&equilibrium)?;
            let opts = CheckOptions {
                tol: check_tol.unwrap_or(tol),
                relative,
            };
            let report = check_equilibrium_with(&inst, &eq, model, opts).map_err(|e| fail(1, e))?;
            emit(&report, io.out.as_deref())?;
            if report.pass {
                Ok(())
            } else {
                Err(fail(3, format!("check failed: largest residual {:e}", report.max_residual())))
            }
        }
        Command::Exactify {
            io,
            equilibrium,
            model,
            tol,
        } => {
            let inst = read_instance(&io.input)?;
            let eq = match (equilibrium, model) {
                (Some(path), _) => read_equilibrium(&path)?,
                (None, Some(model)) => solve(&inst, model, &SolveOptions::default())?,
                (None, None) => return Err(fail(1, "exactify needs --equilibrium or --model")),
            };
            let support = rational::detect_support(&eq, &inst, tol)?;
            let exact = rational::exact_equilibrium(&inst, &support)?;
            if !rational::verify_exact(&exact, &inst, &support) {
                return Err(fail(3, "exact point fails its own constraints"));
            }
            emit(&exact, io.out.as_deref())
        }
        Command::NswRound { io, root_rule } => {
            let inst = read_instance(&io.input)?;
            let eq = solve(&inst, ModelKind::SpendingRestricted, &SolveOptions::default())?;
            let normalized = normalize_valuations(&inst, &eq).map_err(|e| fail(2, e))?;
            let rule = match root_rule {
                RootArg::Lowest => RootRule::LowestIndex,
                RootArg::Enumerate => RootRule::EnumerateAll,
            };
            let (alloc, roots) = nsw::srr_round_rooted(&normalized, &eq, &rule)?;
            emit(&allocation_out(&inst, alloc, Some(roots)), io.out.as_deref())
        }
        Command::NswOpt { io } => {
            let inst = read_instance(&io.input)?;
            let alloc = nsw::brute_force_opt(&inst)?;
            emit(&allocation_out(&inst, alloc, None), io.out.as_deref())
        }
        Command::NswReport { io } => {
            let inst = read_instance(&io.input)?;
            let report = nsw::approximation_report(&inst)?;
            emit(&report, io.out.as_deref())
        }
        Command::Gen(args) => {
            let params = match args.family {
                Family::Gap => GeneratorParams::Gap {
                    n: args.n,
                    f: args.f,
                    v: args.v,
                },
                Family::Srr => GeneratorParams::SrrTight { kappa: args.kappa },
                Family::Random => GeneratorParams::Random {
                    n: args.n,
                    m: args.m,
                    seed: args.seed,
                },
            };
            let inst = nsw::generate_instance(&params)?;
            emit(&inst, args.out.as_deref())
        }
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
