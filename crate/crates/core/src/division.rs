//! System plus environment after a perfect-correlation interaction.
//!
//! At the end of the interaction (time `t0`) the joint amplitude is
//! `<i,e|Psi> = psi_i delta(e, e'(i))`, where `e'` is the correlation map.
//! Afterwards system and environment evolve independently. Marginalizing
//! over the environment leaves the system law
//!
//! ```text
//! p(i;t) = sum_{a,b} conj(U^S_ia psi_a) U^S_ib psi_b * sum_e conj(U^E_{e,e'(a)}) U^E_{e,e'(b)}
//! ```
//!
//! When `e'` is injective the environment factor is `delta(a, b)` and the
//! marginal reduces to the classical chain `|U^S|^2 |psi|^2`: a division
//! event. A non-injective map keeps cross terms between system branches
//! that share an environment configuration.

use std::collections::HashSet;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, CMatrix, RMatrix};
use crate::quantum::{born_probabilities, evolve_unitary, schur_mod_square, HermitianOperator, Propagator, StateVector};
use crate::rng;
use crate::stochastic::{ProbabilityVector, EPS_STOCH};
use crate::{Error, Result};

/// Largest `n * m` represented densely.
pub const MAX_JOINT_DIM: usize = 1 << 14;

/// Assignment `e'(i)` of an environment configuration to each system
/// configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CorrelationMapJson", into = "CorrelationMapJson")]
pub struct CorrelationMap {
    env_dim: usize,
    map: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationMapJson {
    system_dim: usize,
    env_dim: usize,
    map: Vec<usize>,
}

impl TryFrom<CorrelationMapJson> for CorrelationMap {
    type Error = Error;

    fn try_from(j: CorrelationMapJson) -> Result<Self> {
        if j.map.len() != j.system_dim {
            return Err(Error::DimensionMismatch { expected: j.system_dim, found: j.map.len() });
        }
        Self::new(j.env_dim, j.map)
    }
}

impl From<CorrelationMap> for CorrelationMapJson {
    fn from(m: CorrelationMap) -> Self {
        Self { system_dim: m.map.len(), env_dim: m.env_dim, map: m.map }
    }
}

impl CorrelationMap {
    pub fn new(env_dim: usize, map: Vec<usize>) -> Result<Self> {
        if map.is_empty() || env_dim == 0 {
            return Err(Error::InvalidArgs("correlation map needs n >= 1 and m >= 1".into()));
        }
        if let Some(&e) = map.iter().find(|&&e| e >= env_dim) {
            return Err(Error::IndexOutOfRange { index: e, dim: env_dim });
        }
        Ok(Self { env_dim, map })
    }

    /// Uniformly random map from `n` system to `m` environment configurations.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgs("env_dim must be >= 1".into()));
        }
        Self::new(m, (0..n).map(|_| rng.random_range(0..m)).collect())
    }

    pub fn system_dim(&self) -> usize {
        self.map.len()
    }

    pub fn env_dim(&self) -> usize {
        self.env_dim
    }

    pub fn image(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// Distinct system configurations always leave distinct environment records.
    pub fn is_injective(&self) -> bool {
        is_injective(&self.map)
    }
}

fn is_injective(map: &[usize]) -> bool {
    let mut seen = HashSet::with_capacity(map.len());
    map.iter().all(|e| seen.insert(*e))
}

/// How a subsystem evolves from `t0` to `t`.
#[derive(Debug, Clone)]
pub enum Evolution {
    /// `exp(-i H (t - t0))`.
    Generator(HermitianOperator),
    /// A fixed propagator applied for every `t > t0` (identity at `t = t0`).
    Fixed(Propagator),
}

impl Evolution {
    pub fn dim(&self) -> usize {
        match self {
            Self::Generator(h) => h.dim(),
            Self::Fixed(u) => u.dim(),
        }
    }

    pub fn propagator(&self, elapsed: f64) -> Result<Propagator> {
        match self {
            Self::Generator(h) => evolve_unitary(h, elapsed),
            Self::Fixed(u) if elapsed > 0.0 => Ok(u.clone()),
            Self::Fixed(u) => Ok(Propagator::identity(u.dim())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointSystem {
    system: Evolution,
    environment: Evolution,
    correlation: CorrelationMap,
    initial: StateVector,
    t0: f64,
}

impl JointSystem {
    pub fn new(
        system: Evolution,
        environment: Evolution,
        correlation: CorrelationMap,
        initial: StateVector,
        t0: f64,
    ) -> Result<Self> {
        let (n, m) = (system.dim(), environment.dim());
        if correlation.system_dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: correlation.system_dim() });
        }
        if correlation.env_dim() != m {
            return Err(Error::DimensionMismatch { expected: m, found: correlation.env_dim() });
        }
        if initial.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: initial.dim() });
        }
        if n * m > MAX_JOINT_DIM {
            return Err(Error::JointTooLarge(n * m));
        }
        Ok(Self { system, environment, correlation, initial, t0 })
    }

    pub fn correlation(&self) -> &CorrelationMap {
        &self.correlation
    }

    pub fn initial_state(&self) -> &StateVector {
        &self.initial
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    fn propagators(&self, t: f64) -> Result<(Propagator, Propagator)> {
        if t < self.t0 {
            return Err(Error::TimeBeforeInteraction { t, t0: self.t0 });
        }
        Ok((self.system.propagator(t - self.t0)?, self.environment.propagator(t - self.t0)?))
    }
}

/// `<i,e|Psi(t)>` as an `n x m` matrix.
pub fn joint_amplitude(js: &JointSystem, t: f64) -> Result<CMatrix> {
    let (us, ue) = js.propagators(t)?;
    let (us, ue) = (us.entries(), ue.entries());
    let psi = js.initial.amplitudes();
    let n = psi.len();
    let m = ue.nrows();
    let mut amp = CMatrix::zeros(n, m);
    for ip in 0..n {
        let ep = js.correlation.image(ip);
        for i in 0..n {
            let a = us[(i, ip)] * psi[ip];
            for e in 0..m {
                amp[(i, e)] += a * ue[(e, ep)];
            }
        }
    }
    Ok(amp)
}

/// `sum_e |<i,e|Psi(t)>|^2`, computed from the joint amplitude.
pub fn brute_force_marginal(js: &JointSystem, t: f64) -> Result<ProbabilityVector> {
    let amp = joint_amplitude(js, t)?;
    ProbabilityVector::from_vector(DVector::from_iterator(amp.nrows(), amp.row_iter().map(|r| r.norm_squared())))
}

/// The system marginal by the double sum over branches `a, b` with the
/// environment overlap `sum_e conj(U^E_{e,e'(a)}) U^E_{e,e'(b)}` evaluated
/// explicitly (no appeal to unitarity).
pub fn exact_marginal(js: &JointSystem, t: f64) -> Result<ProbabilityVector> {
    let (us, ue) = js.propagators(t)?;
    let (us, ue) = (us.entries(), ue.entries());
    let psi = js.initial.amplitudes();
    let n = psi.len();
    let overlap = CMatrix::from_fn(n, n, |a, b| {
        let (ea, eb) = (js.correlation.image(a), js.correlation.image(b));
        ue.column(ea).iter().zip(ue.column(eb).iter()).map(|(x, y)| x.conj() * y).sum()
    });
    let probs = (0..n).map(|i| {
        let branch: Vec<_> = (0..n).map(|a| us[(i, a)] * psi[a]).collect();
        let mut acc = c(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                acc += branch[a].conj() * branch[b] * overlap[(a, b)];
            }
        }
        acc.re
    });
    ProbabilityVector::from_vector(DVector::from_iterator(n, probs))
}

/// The classical chain `|U^S|^2 |psi(t0)|^2`, which discards coherence
/// between system branches.
pub fn division_formula(js: &JointSystem, t: f64) -> Result<ProbabilityVector> {
    let (us, _) = js.propagators(t)?;
    schur_mod_square(&us)?.marginalize(&born_probabilities(&js.initial)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct DivisionReport {
    pub exact_marginal: Vec<f64>,
    pub division_formula: Vec<f64>,
    pub max_error: f64,
    pub injective: bool,
}

pub fn division_report(js: &JointSystem, t: f64) -> Result<DivisionReport> {
    let exact = exact_marginal(js, t)?;
    let divided = division_formula(js, t)?;
    Ok(DivisionReport {
        max_error: exact.max_abs_diff(&divided),
        exact_marginal: exact.as_slice().to_vec(),
        division_formula: divided.as_slice().to_vec(),
        injective: js.correlation.is_injective(),
    })
}

fn check_counts(n: u64, m: u64) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgs(format!("need n >= 1 and m >= 1, got n = {n}, m = {m}")));
    }
    Ok(())
}

/// Probability that `n` uniform draws from `m` configurations are all
/// distinct, `prod_{k<n} (1 - k/m)`.
pub fn collision_probability_exact(n: u64, m: u64) -> Result<f64> {
    check_counts(n, m)?;
    if n > m {
        return Ok(0.0);
    }
    Ok((0..n).map(|k| 1.0 - k as f64 / m as f64).product())
}

/// `exp(-n (n-1) / (2m))`, valid for `m >> n`.
pub fn collision_probability_approx(n: u64, m: u64) -> Result<f64> {
    check_counts(n, m)?;
    let (n, m) = (n as f64, m as f64);
    Ok((-n * (n - 1.0) / (2.0 * m)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyEstimate {
    pub frequency: f64,
    pub stderr: f64,
    pub draws: usize,
}

/// Fraction of uniformly random maps `n -> m` that are injective.
/// Deterministic for a given seed regardless of thread count.
pub fn injectivity_frequency(n: usize, m: usize, draws: usize, seed: u64) -> Result<FrequencyEstimate> {
    check_counts(n as u64, m as u64)?;
    if draws == 0 {
        return Err(Error::InvalidArgs("draws must be >= 1".into()));
    }
    let hits: usize = rng::chunks(draws)
        .into_par_iter()
        .map(|(chunk, len)| {
            let mut rng = rng::stream(seed, &[chunk]);
            let mut buf = vec![0usize; n];
            (0..len)
                .filter(|_| {
                    buf.iter_mut().for_each(|e| *e = rng.random_range(0..m));
                    is_injective(&buf)
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let p = hits as f64 / draws as f64;
    Ok(FrequencyEstimate { frequency: p, stderr: (p * (1.0 - p) / draws as f64).sqrt(), draws })
}

/// `p(i, e) = p(i) delta(e, e'(i))`.
pub fn correlated_joint(prior: &ProbabilityVector, map: &CorrelationMap) -> Result<RMatrix> {
    if prior.dim() != map.system_dim() {
        return Err(Error::DimensionMismatch { expected: map.system_dim(), found: prior.dim() });
    }
    let mut joint = RMatrix::zeros(map.system_dim(), map.env_dim());
    for (i, &p) in prior.as_slice().iter().enumerate() {
        joint[(i, map.image(i))] = p;
    }
    Ok(joint)
}

/// Bayesian conditioning of a joint law `p(i, e)` (rows `i`, columns `e`)
/// on an observed environment configuration.
pub fn collapse_condition(joint: &RMatrix, observed_e: usize) -> Result<ProbabilityVector> {
    if observed_e >= joint.ncols() {
        return Err(Error::IndexOutOfRange { index: observed_e, dim: joint.ncols() });
    }
    if let Some((k, &x)) = joint.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < -EPS_STOCH) {
        return Err(Error::NegativeEntry { row: k % joint.nrows(), col: k / joint.nrows(), value: x });
    }
    let total = joint.sum();
    if (total - 1.0).abs() > EPS_STOCH * joint.len() as f64 {
        return Err(Error::NotAProbabilityVector { sum: total });
    }
    let column = joint.column(observed_e).map(|x| x.max(0.0));
    let evidence = column.sum();
    if evidence <= 0.0 {
        return Err(Error::ZeroProbabilityOutcome);
    }
    ProbabilityVector::from_vector(column / evidence)
}
