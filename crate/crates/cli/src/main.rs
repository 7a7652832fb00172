use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use isq_core::classical::{self, EhrenfestConfig, EnsembleSpec, PotentialSpec};
use isq_core::dilation::{solve_unitary, DilationProblem};
use isq_core::division::{
    collision_probability_approx, collision_probability_exact, division_report, injectivity_frequency, CorrelationMap,
    Evolution, JointSystem,
};
use isq_core::fock::{build_fock_basis, dyson_propagator, scatter_csv, scatter_table, InteractionHamiltonian};
use isq_core::io::to_json_pretty;
use isq_core::quantum::{HermitianOperator, StateVector};
use isq_core::scenario::{self, Cell, ScenarioError, Table};
use isq_core::stochastic::StochasticMatrix;
use isq_core::Error;

#[derive(Parser)]
#[command(name = "isq", version, about = "Indivisible stochastic processes and their unitary correspondence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// List scenarios with their parameters and defaults.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Search for a unitary dilation of a stochastic matrix.
    Dilate(DilateArgs),
    /// Compare the exact system marginal with the divided law.
    Division(DivisionArgs),
    /// Probability that n draws from m configurations are distinct.
    Collide(CollideArgs),
    /// Classical-limit checks.
    #[command(subcommand)]
    Climit(ClimitCommand),
    /// Dyson-series scattering amplitudes in a box.
    Scatter(ScatterArgs),
}

#[derive(Args)]
struct DilateArgs {
    /// Stochastic matrix JSON: {"dim", "entries" (row-major), "time"}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DivisionArgs {
    /// System Hamiltonian JSON.
    #[arg(long)]
    sys: PathBuf,
    /// Environment Hamiltonian JSON.
    #[arg(long)]
    env: PathBuf,
    /// Correlation map JSON: {"system_dim", "env_dim", "map"}.
    #[arg(long)]
    map: PathBuf,
    /// Initial system state JSON; uniform superposition when omitted.
    #[arg(long)]
    psi: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollideArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    m: u64,
    /// Monte Carlo maps for an injectivity estimate (0 skips).
    #[arg(long, default_value_t = 0)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum ClimitCommand {
    /// Centre-of-mass variance of N independent Gaussian particles.
    Cm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma0: f64,
        #[arg(long, default_value_t = 1)]
        dimension: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Deviation of the ensemble mean from the Newtonian trajectory.
    Ehrenfest {
        #[arg(long, value_enum, default_value_t = PotentialKind::Quartic)]
        potential: PotentialKind,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma0: f64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PotentialKind {
    Harmonic,
    Quartic,
}

#[derive(Args)]
struct ScatterArgs {
    #[arg(long = "L", default_value_t = 10.0)]
    l: f64,
    #[arg(long, default_value_t = 3)]
    n_max: usize,
    #[arg(long, default_value_t = 2)]
    max_particles: usize,
    #[arg(long, default_value_t = 0.1)]
    g: f64,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 64)]
    quad: usize,
    #[arg(long = "in", default_value = "vacuum")]
    in_state: String,
    #[arg(long = "out", default_value = "1,1")]
    out_state: String,
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum Failure {
    Schema(String),
    Module(Error),
    Scenario(&'static str, Error),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Schema(_) => 2,
            Self::Module(_) | Self::Scenario(..) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Module(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Schema(m) => Self::Schema(m),
            ScenarioError::Module { scenario, source } => Self::Scenario(scenario.name(), source),
            ScenarioError::Io(m) => Self::Io(m),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Schema(m) => write!(f, "schema violation: {m}"),
            Self::Module(e) => write!(f, "{e}"),
            Self::Scenario(name, e) => write!(f, "scenario {name} failed: {e}"),
            Self::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

type CliResult = Result<(), Failure>;

fn read_input<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("ISQ_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::Schema(format!("ISQ_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Io(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut cfg = scenario::load_config(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let manifest = scenario::run_scenario(&cfg)?;
            for out in &manifest.outputs {
                println!("{}", cfg.output_dir.join(&out.path).display());
            }
            println!("{}", cfg.output_dir.join("manifest.json").display());
            Ok(())
        }
        Command::List { json } => {
            let list = scenario::list_scenarios();
            if json {
                print!("{}", to_json_pretty(&list)?);
            } else {
                for s in &list {
                    println!("{:<20} [{}] {}", s.name, s.anchor, s.description);
                    for p in &s.params {
                        println!("    {:<18} = {:<24} {}", p.name, s.defaults.get(p.name).map_or("(optional)".into(), |v| v.to_string()), p.doc);
                    }
                }
            }
            Ok(())
        }
        Command::Dilate(a) => {
            let target: StochasticMatrix = read_input(&a.input)?;
            let problem = DilationProblem { max_dilation_factor: a.k_max, restarts: a.restarts, seed: a.seed, residual_tol: a.tol, ..DilationProblem::new(target) };
            let solution = solve_unitary(&problem)?;
            emit(a.out.as_deref(), &to_json_pretty(&solution)?)
        }
        Command::Division(a) => {
            let hs: HermitianOperator = read_input(&a.sys)?;
            let he: HermitianOperator = read_input(&a.env)?;
            let map: CorrelationMap = read_input(&a.map)?;
            let psi = match &a.psi {
                Some(p) => read_input::<StateVector>(p)?,
                None => StateVector::uniform(hs.dim())?,
            };
            let js = JointSystem::new(Evolution::Generator(hs), Evolution::Generator(he), map, psi, a.t0)?;
            emit(a.out.as_deref(), &to_json_pretty(&division_report(&js, a.t)?)?)
        }
        Command::Collide(a) => {
            let exact = collision_probability_exact(a.n, a.m)?;
            let approx = collision_probability_approx(a.n, a.m)?;
            let rel = if exact > 0.0 { (approx - exact).abs() / exact } else { f64::INFINITY };
            let mut header = vec!["n", "m", "exact", "approx", "rel_err"];
            let mut row: Vec<Cell> = vec![Cell::Int(a.n as i64), Cell::Int(a.m as i64), exact.into(), approx.into(), rel.into()];
            if a.draws > 0 {
                let f = injectivity_frequency(a.n as usize, a.m as usize, a.draws, a.seed)?;
                header.extend(["mc_frequency", "mc_stderr"]);
                row.extend([f.frequency.into(), f.stderr.into()]);
            }
            let mut t = Table::new("collision", &header);
            t.push(row);
            emit(None, &t.to_csv())
        }
        Command::Climit(ClimitCommand::Cm { n, sigma0, dimension, samples, seed, csv }) => {
            let spec = EnsembleSpec::gaussian(n, dimension, sigma0, seed)?;
            let st = classical::cm_statistics(&spec, samples)?;
            let mut t = Table::new("cm", &["n", "estimate", "stderr", "expected", "samples", "seed"]);
            t.push(vec![n.into(), st.variance.into(), st.stderr.into(), st.expected_variance.into(), samples.into(), Cell::Int(seed as i64)]);
            emit(csv.as_deref(), &t.to_csv())
        }
        Command::Climit(ClimitCommand::Ehrenfest { potential, k, lambda, n_list, sigma0, mass, dt, t_end, x0, samples, seed, csv }) => {
            let pot = match potential {
                PotentialKind::Harmonic => PotentialSpec::Harmonic { k },
                PotentialKind::Quartic => PotentialSpec::Quartic { k, lambda },
            };
            let spec = EnsembleSpec::gaussian(1, 1, sigma0, seed)?;
            let cfg = EhrenfestConfig { mass, t_end, dt, initial_position: vec![x0], samples };
            let scan = classical::ehrenfest_scan(&pot, &spec, &cfg, &n_list)?;
            let mut t = Table::new("ehrenfest", &["n", "estimate", "energy_drift", "dt", "seed"]);
            for r in &scan.reports {
                t.push(vec![r.n.into(), r.max_deviation.into(), r.energy_drift.into(), dt.into(), Cell::Int(seed as i64)]);
            }
            emit(csv.as_deref(), &t.to_csv())?;
            if let Some(fit) = scan.fit {
                eprintln!("log-log slope {:.4} +/- {:.4}", fit.slope, fit.slope_stderr);
            }
            Ok(())
        }
        Command::Scatter(a) => {
            let basis = build_fock_basis(a.l, a.n_max, a.max_particles)?;
            let (i, f) = (basis.parse_state(&a.in_state)?, basis.parse_state(&a.out_state)?);
            let h = InteractionHamiltonian::pair_creation(basis, a.g)?;
            let exp = dyson_propagator(&h, a.t0, a.t, a.order, a.quad)?;
            emit(a.csv.as_deref(), &scatter_csv(&scatter_table(&exp, i, f)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("isq: {e}");
            ExitCode::from(e.code())
        }
    }
}
