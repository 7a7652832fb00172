//! Config-driven, reproducible experiment runs.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! scenario = "collision"
//! seed = 7
//! output_dir = "out/collision"
//! format = "csv"
//!
//! [params]
//! n = 10
//! m = 10000
//! ```
//!
//! Unknown keys are rejected at every level. Missing parameters take the
//! defaults listed by [`list_scenarios`], and the fully resolved values are
//! echoed into `manifest.json`. Data files depend only on the config, so two
//! runs with the same config produce byte-identical data; manifests differ
//! only in their timestamps.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::classical::{self, EhrenfestConfig, EnsembleSpec, PotentialSpec};
use crate::dilation::{obstruction_test_3x3, solve_unitary, DilationProblem};
use crate::division::{
    collapse_condition, collision_probability_approx, collision_probability_exact, correlated_joint, division_report,
    injectivity_frequency, CorrelationMap, Evolution, JointSystem,
};
use crate::fock::{build_fock_basis, dyson_propagator, scatter_table, InteractionHamiltonian};
use crate::linalg::{c, condition_number, CMatrix};
use crate::quantum::{interference_decompose, HermitianOperator, StateVector};
use crate::rng::{self, StreamRng};
use crate::stochastic::{divisibility_witness, rabi, DivisibilityVerdict, ProbabilityVector, ProcessFamily, StochasticMatrix, TimeSet};
use crate::{Complex64, Error};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RabiIndivisibility,
    Interference,
    Dilation,
    Division,
    Collision,
    Collapse,
    ClassicalLimit,
    Scattering,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        Self::RabiIndivisibility,
        Self::Interference,
        Self::Dilation,
        Self::Division,
        Self::Collision,
        Self::Collapse,
        Self::ClassicalLimit,
        Self::Scattering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RabiIndivisibility => "rabi-indivisibility",
            Self::Interference => "interference",
            Self::Dilation => "dilation",
            Self::Division => "division",
            Self::Collision => "collision",
            Self::Collapse => "collapse",
            Self::ClassicalLimit => "classical-limit",
            Self::Scattering => "scattering",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("scenario {scenario} failed: {source}")]
    Module {
        scenario: ScenarioKind,
        #[source]
        source: Error,
    },
    #[error("output error: {0}")]
    Io(String),
}

impl ScenarioError {
    /// Process exit code: 2 schema, 3 module failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema(_) => 2,
            Self::Module { .. } => 3,
            Self::Io(_) => 4,
        }
    }
}

type ScenarioResult<T> = std::result::Result<T, ScenarioError>;

pub fn parse_config(text: &str) -> ScenarioResult<ScenarioConfig> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    validate_config(&config)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> ScenarioResult<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        ScenarioError::Schema(msg) => ScenarioError::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Checks the scenario's parameter table against its schema.
pub fn validate_config(config: &ScenarioConfig) -> ScenarioResult<Value> {
    fn check<P: Params>(t: &toml::Table) -> ScenarioResult<Value> {
        let p: P = parse_params(t)?;
        p.check().map_err(ScenarioError::Schema)?;
        Ok(serde_json::to_value(&p).expect("params serialize"))
    }
    match config.scenario {
        ScenarioKind::RabiIndivisibility => check::<RabiParams>(&config.params),
        ScenarioKind::Interference => check::<InterferenceParams>(&config.params),
        ScenarioKind::Dilation => check::<DilationParams>(&config.params),
        ScenarioKind::Division => check::<DivisionParams>(&config.params),
        ScenarioKind::Collision => check::<CollisionParams>(&config.params),
        ScenarioKind::Collapse => check::<CollapseParams>(&config.params),
        ScenarioKind::ClassicalLimit => check::<ClassicalParams>(&config.params),
        ScenarioKind::Scattering => check::<ScatteringParams>(&config.params),
    }
}

fn parse_params<P: DeserializeOwned>(t: &toml::Table) -> ScenarioResult<P> {
    toml::Value::Table(t.clone()).try_into().map_err(|e: toml::de::Error| ScenarioError::Schema(e.to_string()))
}

/// A scenario's parameter block. `run` may fill in values it resolved at
/// run time (such as a randomly drawn map) so the manifest records them.
trait Params: Default + Serialize + DeserializeOwned {
    const DOCS: &'static [(&'static str, &'static str)];

    fn check(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    fn run(&mut self, seed: u64) -> crate::Result<Outcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Self::Int(i) => i.to_string(),
            Self::Float(x) => fmt_float(*x),
            Self::Text(s) => s.clone(),
            Self::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Self::Int(i) => json!(i),
            Self::Float(x) if x.is_finite() => json!(x),
            Self::Float(x) => json!(x.to_string()),
            Self::Text(s) => json!(s),
            Self::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Self::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Self::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Self::Text(b.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(o: Option<T>) -> Self {
        o.map_or(Self::Empty, Into::into)
    }
}

/// Shortest round-trip representation, switching to exponent form for very
/// small or large magnitudes.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self { name, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| Value::Object(self.header.iter().zip(row).map(|(h, c)| (h.to_string(), c.json())).collect()))
                .collect(),
        )
    }
}

/// What a scenario produced: a summary document, named JSON documents and
/// tables written in the configured format.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
    pub documents: Vec<(&'static str, Value)>,
    pub tables: Vec<Table>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn random_hermitian(n: usize, rng: &mut StreamRng) -> crate::Result<HermitianOperator> {
    let mut a = CMatrix::zeros(n, n);
    a.iter_mut().for_each(|z| *z = c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    HermitianOperator::new((&a + a.adjoint()) * c(0.5, 0.0))
}

fn random_state(n: usize, rng: &mut StreamRng) -> crate::Result<StateVector> {
    let v = crate::linalg::CVector::from_iterator(n, (0..n).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))));
    StateVector::normalized(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiParams {
    pub t1: f64,
    pub t2: f64,
}

impl Default for RabiParams {
    fn default() -> Self {
        Self { t1: PI / 8.0, t2: PI / 2.0 }
    }
}

impl Params for RabiParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("t1", "intermediate time (0 < t1 < t2)"),
        ("t2", "final time"),
    ];

    fn check(&self) -> std::result::Result<(), String> {
        if !(0.0 < self.t1 && self.t1 < self.t2) {
            return Err(format!("need 0 < t1 < t2, got t1 = {}, t2 = {}", self.t1, self.t2));
        }
        Ok(())
    }

    fn run(&mut self, _seed: u64) -> crate::Result<Outcome> {
        let times = TimeSet::new(vec![0.0, self.t1, self.t2])?;
        let family = ProcessFamily::from_fn(times, |t| Ok(rabi(t)))?;
        let verdict = divisibility_witness(&family, self.t1, self.t2)?;
        let cond = condition_number(family.at(self.t1)?.entries());
        let mut summary_table = Table::new("verdict", &["t1", "t2", "status", "violation", "condition_number"]);
        let violation = match &verdict {
            DivisibilityVerdict::IndivisibleWitness { violation, .. } => Some(*violation),
            _ => None,
        };
        summary_table.push(vec![self.t1.into(), self.t2.into(), verdict.status().into(), violation.into(), cond.into()]);
        let mut factor = Table::new("factor", &["row", "col", "value"]);
        if let DivisibilityVerdict::DivisibleAt { factor: r, .. } | DivisibilityVerdict::IndivisibleWitness { factor: r, .. } = &verdict {
            let n = (r.len() as f64).sqrt() as usize;
            for (k, &x) in r.iter().enumerate() {
                factor.push(vec![(k / n).into(), (k % n).into(), x.into()]);
            }
        }
        let gamma = |t: f64| -> crate::Result<Value> { Ok(to_value(family.at(t)?)) };
        Ok(Outcome {
            summary: json!({ "verdict": verdict, "gamma_t1": gamma(self.t1)?, "gamma_t2": gamma(self.t2)? }),
            documents: vec![],
            tables: vec![summary_table, factor],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceParams {
    pub dim: usize,
    pub pairs: usize,
}

impl Default for InterferenceParams {
    fn default() -> Self {
        Self { dim: 4, pairs: 1000 }
    }
}

impl Params for InterferenceParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("dim", "number of configurations"),
        ("pairs", "random normalized amplitude pairs to decompose"),
    ];

    fn check(&self) -> std::result::Result<(), String> {
        if self.dim == 0 || self.pairs == 0 {
            return Err("dim and pairs must be >= 1".into());
        }
        Ok(())
    }

    fn run(&mut self, seed: u64) -> crate::Result<Outcome> {
        let mut rng = rng::stream(seed, &[2]);
        let mut table = Table::new("terms", &["pair", "config", "direct1", "direct2", "cross", "total", "mod_square"]);
        let mut max_residual = 0.0_f64;
        for pair in 0..self.pairs {
            let a = random_state(self.dim, &mut rng)?;
            let b = random_state(self.dim, &mut rng)?;
            let (a, b): (Vec<Complex64>, Vec<Complex64>) = (a.amplitudes().iter().copied().collect(), b.amplitudes().iter().copied().collect());
            for (i, t) in interference_decompose(&a, &b)?.into_iter().enumerate() {
                let direct = (a[i] + b[i]).norm_sqr();
                max_residual = max_residual.max((t.total() - direct).abs());
                table.push(vec![pair.into(), i.into(), t.direct1.into(), t.direct2.into(), t.cross.into(), t.total().into(), direct.into()]);
            }
        }
        Ok(Outcome { summary: json!({ "pairs": self.pairs, "max_identity_residual": max_residual }), documents: vec![], tables: vec![table] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DilationParams {
    /// Rows of the column-stochastic target.
    pub target: Vec<Vec<f64>>,
    pub k_max: usize,
    pub restarts: usize,
    pub tol: f64,
}

impl Default for DilationParams {
    fn default() -> Self {
        Self {
            target: vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]],
            k_max: crate::dilation::DEFAULT_MAX_DILATION,
            restarts: crate::dilation::DEFAULT_RESTARTS,
            tol: crate::dilation::DEFAULT_RESIDUAL_TOL,
        }
    }
}

impl Params for DilationParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("target", "rows of the column-stochastic matrix to dilate"),
        ("k_max", "largest dilution factor tried"),
        ("restarts", "random restarts per dilution factor"),
        ("tol", "residual accepted as converged"),
    ];

    fn run(&mut self, seed: u64) -> crate::Result<Outcome> {
        let rows: Vec<&[f64]> = self.target.iter().map(Vec::as_slice).collect();
        let target = StochasticMatrix::from_rows(&rows)?;
        let obstruction = if target.dim() <= 3 { Some(obstruction_test_3x3(&target)?) } else { None };
        let problem = DilationProblem {
            max_dilation_factor: self.k_max,
            residual_tol: self.tol,
            restarts: self.restarts,
            seed,
            ..DilationProblem::new(target)
        };
        let solution = solve_unitary(&problem)?;
        let mut trace = Table::new("trace", &["k", "restart", "residual", "iterations", "structurally_infeasible"]);
        for r in &solution.trace {
            trace.push(vec![r.k.into(), r.restart.into(), r.residual.into(), r.iterations.into(), r.structurally_infeasible.into()]);
        }
        Ok(Outcome {
            summary: json!({
                "status": solution.status,
                "dilation_factor": solution.dilation_factor,
                "residual": solution.residual,
                "obstruction": obstruction,
            }),
            documents: vec![("solution", to_value(&solution))],
            tables: vec![trace],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisionParams {
    pub system_dim: usize,
    pub env_dim: usize,
    /// Correlation map; drawn uniformly at random from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<Vec<usize>>,
    pub t0: f64,
    pub t: f64,
}

impl Default for DivisionParams {
    fn default() -> Self {
        Self { system_dim: 3, env_dim: 4, map: None, t0: 0.0, t: 1.0 }
    }
}

impl Params for DivisionParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("system_dim", "system configurations n"),
        ("env_dim", "environment configurations m"),
        ("map", "correlation map e'(i) (optional; random when absent)"),
        ("t0", "end of the correlating interaction"),
        ("t", "evaluation time (t >= t0)"),
    ];

    fn check(&self) -> std::result::Result<(), String> {
        if self.system_dim == 0 || self.env_dim == 0 {
            return Err("system_dim and env_dim must be >= 1".into());
        }
        Ok(())
    }

    fn run(&mut self, seed: u64) -> crate::Result<Outcome> {
        let map = match &self.map {
            Some(m) => CorrelationMap::new(self.env_dim, m.clone())?,
            None => CorrelationMap::random(self.system_dim, self.env_dim, &mut rng::stream(seed, &[3, 2]))?,
        };
        self.map = Some(map.as_slice().to_vec());
        let hs = random_hermitian(self.system_dim, &mut rng::stream(seed, &[3, 0]))?;
        let he = random_hermitian(self.env_dim, &mut rng::stream(seed, &[3, 1]))?;
        let psi = random_state(self.system_dim, &mut rng::stream(seed, &[3, 3]))?;
        let js = JointSystem::new(Evolution::Generator(hs), Evolution::Generator(he), map, psi, self.t0)?;
        let report = division_report(&js, self.t)?;
        let mut table = Table::new("marginal", &["config", "exact_marginal", "division_formula", "abs_error"]);
        for (i, (e, d)) in report.exact_marginal.iter().zip(&report.division_formula).enumerate() {
            table.push(vec![i.into(), (*e).into(), (*d).into(), (e - d).abs().into()]);
        }
        Ok(Outcome {
            summary: json!({ "max_error": report.max_error, "injective": report.injective, "map": self.map }),
            documents: vec![],
            tables: vec![table],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionParams {
    pub n: u64,
    pub m: u64,
    /// Random maps for the Monte Carlo cross-check; 0 skips it.
    pub draws: usize,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self { n: 10, m: 10_000, draws: 100_000 }
    }
}

impl Params for CollisionParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("n", "system configurations drawn"),
        ("m", "environment configurations available"),
        ("draws", "random maps for the Monte Carlo injectivity estimate (0 skips)"),
    ];

    fn run(&mut self, seed: u64) -> crate::Result<Outcome> {
        let exact = collision_probability_exact(self.n, self.m)?;
        let approx = collision_probability_approx(self.n, self.m)?;
        let rel_err = if exact > 0.0 { (approx - exact).abs() / exact } else { f64::INFINITY };
        let mc = if self.draws > 0 {
            Some(injectivity_frequency(self.n as usize, self.m as usize, self.draws, seed)?)
        } else {
            None
        };
        let z = mc.filter(|f| f.stderr > 0.0).map(|f| (f.frequency - exact) / f.stderr);
        let mut table = Table::new("collision", &["n", "m", "exact", "approx", "rel_err", "mc_frequency", "mc_stderr", "mc_z"]);
        table.push(vec![
            Cell::Int(self.n as i64),
            Cell::Int(self.m as i64),
            exact.into(),
            approx.into(),
            rel_err.into(),
            mc.map(|f| f.frequency).into(),
            mc.map(|f| f.stderr).into(),
            z.into(),
        ]);
        Ok(Outcome {
            summary: json!({ "exact": exact, "approx": approx, "rel_err": rel_err, "monte_carlo": mc }),
            documents: vec![],
            tables: vec![table],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseParams {
    pub prior: Vec<f64>,
    pub env_dim: usize,
    pub map: Vec<usize>,
}

impl Default for CollapseParams {
    fn default() -> Self {
        Self { prior: vec![0.5, 0.3, 0.2], env_dim: 3, map: vec![0, 1, 2] }
    }
}

impl Params for CollapseParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("prior", "system probabilities before the measurement"),
        ("env_dim", "environment (pointer) configurations"),
        ("map", "pointer reading e'(i) left by each system configuration"),
    ];

    fn run(&mut self, _seed: u64) -> crate::Result<Outcome> {
        let prior = ProbabilityVector::new(self.prior.clone())?;
        let map = CorrelationMap::new(self.env_dim, self.map.clone())?;
        let joint = correlated_joint(&prior, &map)?;
        let mut table = Table::new("posterior", &["observed", "config", "probability"]);
        let mut unobservable = Vec::new();
        for e in 0..self.env_dim {
            match collapse_condition(&joint, e) {
                Ok(post) => {
                    for (i, &p) in post.as_slice().iter().enumerate() {
                        table.push(vec![e.into(), i.into(), p.into()]);
                    }
                }
                Err(Error::ZeroProbabilityOutcome) => unobservable.push(e),
                Err(err) => return Err(err),
            }
        }
        Ok(Outcome {
            summary: json!({ "injective": map.is_injective(), "unobservable_readings": unobservable }),
            documents: vec![],
            tables: vec![table],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalParams {
    pub dimension: usize,
    pub sigma0: f64,
    pub n_list: Vec<usize>,
    pub samples: usize,
    pub a0: f64,
    pub c: f64,
    pub m_exp: f64,
    pub potential: PotentialSpec,
    pub mass: f64,
    pub dt: f64,
    pub t_end: f64,
    pub initial_position: f64,
    pub jitter_samples: usize,
    pub ehrenfest_n_list: Vec<usize>,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self {
            dimension: 1,
            sigma0: 1.0,
            n_list: vec![1, 10, 100, 1000],
            samples: 100_000,
            a0: 1.0,
            c: 1.0,
            m_exp: 1.0,
            potential: PotentialSpec::Quartic { k: 1.0, lambda: 0.1 },
            mass: 1.0,
            dt: 1e-3,
            t_end: 10.0,
            initial_position: 1.0,
            jitter_samples: 1000,
            ehrenfest_n_list: vec![10, 100, 1000],
        }
    }
}

impl Params for ClassicalParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("dimension", "spatial dimension (1-3)"),
        ("sigma0", "total per-particle positional variance of the Gaussian ensemble"),
        ("n_list", "particle counts for the centre-of-mass variance table"),
        ("samples", "ensemble draws per particle count"),
        ("a0", "radial law strength prefactor, a = a0 N^m_exp"),
        ("c", "radial law amplitude C"),
        ("m_exp", "cohesion exponent m_exp"),
        ("potential", "external potential: {kind = harmonic|quartic|tabulated, ...}"),
        ("mass", "total mass"),
        ("dt", "velocity-Verlet step"),
        ("t_end", "integration horizon"),
        ("initial_position", "starting centre-of-mass position along the first axis"),
        ("jitter_samples", "force samples per step for the ensemble mean"),
        ("ehrenfest_n_list", "particle counts for the Ehrenfest deviation scan"),
    ];

    fn check(&self) -> std::result::Result<(), String> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err("n_list must be non-empty with N >= 1".into());
        }
        Ok(())
    }

    fn run(&mut self, seed: u64) -> crate::Result<Outcome> {
        let base = EnsembleSpec::gaussian(1, self.dimension, self.sigma0, seed)?;
        let mut cm = Table::new("cm", &["n", "variance", "stderr", "expected", "z", "mean_axis0", "mean_stderr_axis0"]);
        let mut scaled = Table::new("scaled_variance", &["n", "sum_of_variances"]);
        for &n in &self.n_list {
            let st = classical::cm_statistics(&base.with_n(n), self.samples)?;
            let z = (st.variance - st.expected_variance) / st.stderr;
            cm.push(vec![n.into(), st.variance.into(), st.stderr.into(), st.expected_variance.into(), z.into(), st.mean[0].into(), st.mean_stderr[0].into()]);
            scaled.push(vec![n.into(), classical::scaled_variance(self.a0, self.c, self.m_exp, n)?.into()]);
        }
        let radial = classical::radial_moment(self.a0, self.c)?;
        let mut start = vec![0.0; self.dimension];
        start[0] = self.initial_position;
        let cfg = EhrenfestConfig { mass: self.mass, t_end: self.t_end, dt: self.dt, initial_position: start, samples: self.jitter_samples };
        let scan = classical::ehrenfest_scan(&self.potential, &base, &cfg, &self.ehrenfest_n_list)?;
        let mut ehr = Table::new("ehrenfest", &["n", "jitter_variance", "max_deviation", "energy_drift"]);
        for r in &scan.reports {
            ehr.push(vec![r.n.into(), r.jitter_variance.into(), r.max_deviation.into(), r.energy_drift.into()]);
        }
        Ok(Outcome {
            summary: json!({ "radial_moment": radial, "ehrenfest_fit": scan.fit }),
            documents: vec![],
            tables: vec![cm, scaled, ehr],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringParams {
    #[serde(alias = "L")]
    pub l: f64,
    pub n_max: usize,
    pub max_particles: usize,
    pub g: f64,
    pub t0: f64,
    pub t: f64,
    pub order: usize,
    pub quad: usize,
    pub in_state: String,
    pub out_state: String,
    /// Box sizes for the convergence sweep; empty skips it.
    pub l_sweep: Vec<f64>,
}

impl Default for ScatteringParams {
    fn default() -> Self {
        Self {
            l: 10.0,
            n_max: 3,
            max_particles: 2,
            g: 0.1,
            t0: 0.0,
            t: 1.0,
            order: 3,
            quad: 64,
            in_state: "vacuum".into(),
            out_state: "1,1".into(),
            l_sweep: vec![],
        }
    }
}

fn scattering_expansion(p: &ScatteringParams, l: f64) -> crate::Result<(crate::fock::DysonExpansion, usize, usize)> {
    let basis = build_fock_basis(l, p.n_max, p.max_particles)?;
    let (i, f) = (basis.parse_state(&p.in_state)?, basis.parse_state(&p.out_state)?);
    let h = InteractionHamiltonian::pair_creation(basis, p.g)?;
    Ok((dyson_propagator(&h, p.t0, p.t, p.order, p.quad)?, i, f))
}

impl Params for ScatteringParams {
    const DOCS: &'static [(&'static str, &'static str)] = &[
        ("l", "box side L (alias \"L\")"),
        ("n_max", "highest momentum index, p_n = n pi / L"),
        ("max_particles", "occupancy cap"),
        ("g", "pair-creation coupling"),
        ("t0", "start time"),
        ("t", "end time"),
        ("order", "Dyson order (<= 4)"),
        ("quad", "quadrature nodes (>= 8)"),
        ("in_state", "initial state: \"vacuum\" or mode list such as \"1,1\""),
        ("out_state", "final state"),
        ("l_sweep", "box sizes for a convergence sweep (empty skips)"),
    ];

    fn run(&mut self, _seed: u64) -> crate::Result<Outcome> {
        let (exp, i, f) = scattering_expansion(self, self.l)?;
        let rows = scatter_table(&exp, i, f)?;
        let mut amps = Table::new("amplitudes", &["order", "re_amplitude", "im_amplitude", "abs2_amplitude", "cumulative_probability", "unitarity_defect"]);
        for r in &rows {
            amps.push(vec![r.order.into(), r.amplitude.re.into(), r.amplitude.im.into(), r.probability.into(), r.cumulative.into(), r.unitarity_defect.into()]);
        }
        let mut sweep = Table::new("box_sweep", &["l", "probability", "unitarity_defect"]);
        for &l in &self.l_sweep {
            let (e, i, f) = scattering_expansion(self, l)?;
            sweep.push(vec![l.into(), e.partial_sum[(f, i)].norm_sqr().into(), e.unitarity_defect().into()]);
        }
        let last = rows.last().expect("order 0 row always present");
        let mut tables = vec![amps];
        if !self.l_sweep.is_empty() {
            tables.push(sweep);
        }
        Ok(Outcome {
            summary: json!({ "probability": last.cumulative, "unitarity_defect": last.unitarity_defect, "dim": exp.dim() }),
            documents: vec![],
            tables,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDoc {
    pub name: &'static str,
    pub doc: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    /// Topic of the underlying argument this scenario reproduces.
    pub anchor: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamDoc>,
    pub defaults: Value,
}

fn info<P: Params>(kind: ScenarioKind, anchor: &'static str, description: &'static str) -> ScenarioInfo {
    ScenarioInfo {
        name: kind.name(),
        anchor,
        description,
        params: P::DOCS.iter().map(|&(name, doc)| ParamDoc { name, doc }).collect(),
        defaults: to_value(&P::default()),
    }
}

pub fn list_scenarios() -> Vec<ScenarioInfo> {
    use ScenarioKind::*;
    vec![
        info::<RabiParams>(RabiIndivisibility, "indivisible processes", "divisibility test of the Rabi transition law between two times"),
        info::<InterferenceParams>(Interference, "interference from mod-squaring", "split |a + b|^2 into direct and cross terms"),
        info::<DilationParams>(Dilation, "unistochastic dilation", "search for a unitary whose mod-squares reproduce a stochastic matrix"),
        info::<DivisionParams>(Division, "division events", "marginal of a correlated system and environment vs the divided law"),
        info::<CollisionParams>(Collision, "environment collisions", "probability that a random correlation map is injective"),
        info::<CollapseParams>(Collapse, "measurement as conditioning", "posterior over system configurations given a pointer reading"),
        info::<ClassicalParams>(ClassicalLimit, "classical limit and Ehrenfest dynamics", "centre-of-mass concentration and Newtonian tracking"),
        info::<ScatteringParams>(Scattering, "Dyson series and the S-matrix", "per-order amplitudes and interference for a toy pair-creation process"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: ScenarioKind,
    pub params: Value,
    pub seed: u64,
    pub format: OutputFormat,
    pub tool_version: String,
    pub workers: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

fn dispatch(config: &ScenarioConfig) -> ScenarioResult<(Value, Outcome)> {
    fn go<P: Params>(config: &ScenarioConfig) -> ScenarioResult<(Value, Outcome)> {
        let mut p: P = parse_params(&config.params)?;
        p.check().map_err(ScenarioError::Schema)?;
        let outcome = p.run(config.seed).map_err(|source| ScenarioError::Module { scenario: config.scenario, source })?;
        Ok((to_value(&p), outcome))
    }
    match config.scenario {
        ScenarioKind::RabiIndivisibility => go::<RabiParams>(config),
        ScenarioKind::Interference => go::<InterferenceParams>(config),
        ScenarioKind::Dilation => go::<DilationParams>(config),
        ScenarioKind::Division => go::<DivisionParams>(config),
        ScenarioKind::Collision => go::<CollisionParams>(config),
        ScenarioKind::Collapse => go::<CollapseParams>(config),
        ScenarioKind::ClassicalLimit => go::<ClassicalParams>(config),
        ScenarioKind::Scattering => go::<ScatteringParams>(config),
    }
}

/// Writes via a temporary file and a rename so readers never see a
/// partially written file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> ScenarioResult<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", dir.join(name).display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, dir.join(name)).map_err(io)
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s.into_bytes()
}

/// Runs the scenario, writes its outputs into `output_dir` and finally the
/// manifest.
pub fn run_scenario(config: &ScenarioConfig) -> ScenarioResult<RunManifest> {
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let (params, outcome) = dispatch(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;

    let mut files: Vec<(String, Vec<u8>)> = vec![("summary.json".into(), pretty(&outcome.summary))];
    for (name, doc) in &outcome.documents {
        files.push((format!("{name}.json"), pretty(doc)));
    }
    for table in &outcome.tables {
        match config.format {
            OutputFormat::Csv => files.push((format!("{}.csv", table.name), table.to_csv().into_bytes())),
            OutputFormat::Json => files.push((format!("{}.json", table.name), pretty(&table.to_json()))),
        }
    }
    let mut outputs = Vec::new();
    for (name, bytes) in &files {
        write_atomic(dir, name, bytes)?;
        outputs.push(OutputFile { path: name.clone(), bytes: bytes.len(), sha256: hex::encode(Sha256::digest(bytes)) });
    }
    let manifest = RunManifest {
        scenario: config.scenario,
        params,
        seed: config.seed,
        format: config.format,
        tool_version: TOOL_VERSION.to_string(),
        workers: rayon::current_num_threads(),
        started_at,
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        outputs,
    };
    write_atomic(dir, "manifest.json", &pretty(&to_value(&manifest)))?;
    Ok(manifest)
}
