//! Stochastic transition matrices over a finite configuration space.
//!
//! Convention: column-stochastic. `gamma[(i, j)] = p(i, t | j, 0)`, columns
//! sum to one, and a probability vector evolves as `p(t) = gamma * p(0)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{condition_number, RMatrix};
use crate::{Error, Result};

/// Tolerance for entry signs and column sums.
pub const EPS_STOCH: f64 = 1e-9;
/// Tolerance on how far `R = gamma(t2) gamma(t1)^-1` may leave the stochastic set.
pub const EPS_DIV: f64 = 1e-7;
/// Condition numbers above this make `gamma(t1)` numerically singular.
pub const KAPPA_MAX: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSpace {
    size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl ConfigurationSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgs("configuration space must be non-empty".into()));
        }
        Ok(Self { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = Self::new(labels.len())?;
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }
}

/// A validated column-stochastic matrix `gamma(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StochasticMatrixJson", into = "StochasticMatrixJson")]
pub struct StochasticMatrix {
    entries: RMatrix,
    time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StochasticMatrixJson {
    dim: usize,
    entries: Vec<f64>,
    #[serde(default)]
    time: f64,
}

impl TryFrom<StochasticMatrixJson> for StochasticMatrix {
    type Error = Error;

    fn try_from(j: StochasticMatrixJson) -> Result<Self> {
        if j.entries.len() != j.dim * j.dim {
            return Err(Error::DimensionMismatch { expected: j.dim * j.dim, found: j.entries.len() });
        }
        Self::with_time(DMatrix::from_row_slice(j.dim, j.dim, &j.entries), j.time)
    }
}

impl From<StochasticMatrix> for StochasticMatrixJson {
    fn from(m: StochasticMatrix) -> Self {
        let dim = m.dim();
        let entries = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| m.entries[(i, j)]).collect();
        Self { dim, entries, time: m.time }
    }
}

/// Checks a raw square matrix against the stochastic invariants and returns
/// it with entries clamped into `[0, 1]`.
pub fn validate_stochastic(raw: RMatrix) -> Result<StochasticMatrix> {
    StochasticMatrix::with_time(raw, 0.0)
}

impl StochasticMatrix {
    pub fn with_time(raw: RMatrix, time: f64) -> Result<Self> {
        let dim = crate::linalg::check_square(&raw)?;
        for j in 0..dim {
            for i in 0..dim {
                let v = raw[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if v < -EPS_STOCH {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
            }
            let sum: f64 = raw.column(j).sum();
            if (sum - 1.0).abs() > EPS_STOCH {
                return Err(Error::ColumnSumViolation { col: j, sum });
            }
        }
        Ok(Self { entries: raw.map(|x| x.clamp(0.0, 1.0)), time })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        if flat.len() != n * n {
            return Err(Error::NotSquare { rows: n, cols: flat.len() / n.max(1) });
        }
        validate_stochastic(DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: RMatrix::identity(dim, dim), time: 0.0 }
    }

    /// Permutation sending configuration `j` to `perm[j]`.
    pub fn permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut m = RMatrix::zeros(n, n);
        for (j, &i) in perm.iter().enumerate() {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, dim: n });
            }
            m[(i, j)] = 1.0;
        }
        validate_stochastic(m)
    }

    pub fn at_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn entries(&self) -> &RMatrix {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    /// Largest deviation of a row sum from one, with its row.
    pub fn max_row_sum_deviation(&self) -> (usize, f64) {
        self.row_sums()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (i, (s - 1.0).abs()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.max_row_sum_deviation().1 <= tol
    }

    /// Time-`t` law: `gamma * p0`.
    pub fn marginalize(&self, p0: &ProbabilityVector) -> Result<ProbabilityVector> {
        marginalize(self, p0)
    }

    /// Draws a configuration at time `t` given configuration `j0` at time 0.
    pub fn sample<R: Rng + ?Sized>(&self, j0: usize, rng: &mut R) -> Result<usize> {
        sample_configuration(self, j0, rng)
    }
}

/// A probability law over configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(DVector<f64>);

impl ProbabilityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(entries))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgs("empty probability vector".into()));
        }
        if let Some((i, &x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < -EPS_STOCH) {
            return Err(Error::NegativeEntry { row: i, col: 0, value: x });
        }
        let sum = v.sum();
        if (sum - 1.0).abs() > EPS_STOCH * v.len() as f64 {
            return Err(Error::NotAProbabilityVector { sum });
        }
        Ok(Self(v.map(|x| x.max(0.0))))
    }

    pub fn basis(dim: usize, j: usize) -> Result<Self> {
        if j >= dim {
            return Err(Error::IndexOutOfRange { index: j, dim });
        }
        let mut v = DVector::zeros(dim);
        v[j] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::from_vector(DVector::from_element(dim, 1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.0 - &other.0).amax()
    }

    /// CSV with header `config,probability`; configurations are labelled by
    /// index unless a labelled space is given.
    pub fn to_csv(&self, space: Option<&ConfigurationSpace>) -> String {
        let mut out = String::from("config,probability\n");
        for (i, p) in self.0.iter().enumerate() {
            let label = space.map(|s| s.label(i)).unwrap_or_else(|| i.to_string());
            writeln!(out, "{label},{p}").unwrap();
        }
        out
    }
}

pub fn marginalize(gamma: &StochasticMatrix, p0: &ProbabilityVector) -> Result<ProbabilityVector> {
    if gamma.dim() != p0.dim() {
        return Err(Error::DimensionMismatch { expected: gamma.dim(), found: p0.dim() });
    }
    ProbabilityVector::from_vector(&gamma.entries * &p0.0)
}

/// `later * earlier`, i.e. first `earlier` then `later`.
pub fn compose(later: &StochasticMatrix, earlier: &StochasticMatrix) -> Result<StochasticMatrix> {
    if later.dim() != earlier.dim() {
        return Err(Error::DimensionMismatch { expected: later.dim(), found: earlier.dim() });
    }
    StochasticMatrix::with_time(&later.entries * &earlier.entries, later.time + earlier.time)
}

pub fn sample_configuration<R: Rng + ?Sized>(gamma: &StochasticMatrix, j0: usize, rng: &mut R) -> Result<usize> {
    let n = gamma.dim();
    if j0 >= n {
        return Err(Error::IndexOutOfRange { index: j0, dim: n });
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for i in 0..n {
        let p = gamma.entries[(i, j0)];
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // u landed in the rounding gap at the top of the column
    Ok(last_nonzero)
}

/// Finite, strictly increasing sampling times containing `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSet(Vec<f64>);

impl TimeSet {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidTimeSet("non-finite time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTimeSet("times must be strictly increasing".into()));
        }
        if !times.contains(&0.0) {
            return Err(Error::InvalidTimeSet("time set must contain t = 0".into()));
        }
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    /// Position of `t`, matched to within a relative 1e-12. No interpolation
    /// between listed times is ever performed.
    pub fn position(&self, t: f64) -> Option<usize> {
        self.0.iter().position(|&s| (s - t).abs() <= 1e-12 * s.abs().max(t.abs()).max(1.0))
    }
}

/// A process `gamma(t)` (each from time 0) sampled on a [`TimeSet`].
#[derive(Debug, Clone)]
pub struct ProcessFamily {
    times: TimeSet,
    matrices: Vec<StochasticMatrix>,
}

impl ProcessFamily {
    pub fn new(times: TimeSet, matrices: Vec<StochasticMatrix>) -> Result<Self> {
        if times.0.len() != matrices.len() {
            return Err(Error::DimensionMismatch { expected: times.0.len(), found: matrices.len() });
        }
        let dim = matrices[0].dim();
        if let Some(m) = matrices.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
        }
        let matrices = matrices.into_iter().zip(&times.0).map(|(m, &t)| m.at_time(t)).collect();
        Ok(Self { times, matrices })
    }

    /// Samples `f(t)` at each time.
    pub fn from_fn(times: TimeSet, f: impl Fn(f64) -> Result<StochasticMatrix>) -> Result<Self> {
        let matrices = times.0.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        Self::new(times, matrices)
    }

    pub fn times(&self) -> &TimeSet {
        &self.times
    }

    pub fn at(&self, t: f64) -> Result<&StochasticMatrix> {
        self.times.position(t).map(|k| &self.matrices[k]).ok_or(Error::TimeNotInFamily(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DivisibilityVerdict {
    /// `R = gamma(t2) gamma(t1)^-1` is stochastic within [`EPS_DIV`].
    DivisibleAt { t1: f64, t2: f64, factor: Vec<f64> },
    /// `R` leaves the stochastic set by `violation > EPS_DIV`.
    IndivisibleWitness { t1: f64, t2: f64, violation: f64, factor: Vec<f64> },
    /// `gamma(t1)` is singular or too ill-conditioned to invert.
    Inconclusive { t1: f64, t2: f64, condition: f64 },
}

impl DivisibilityVerdict {
    pub fn status(&self) -> &'static str {
        match self {
            Self::DivisibleAt { .. } => "divisible-at",
            Self::IndivisibleWitness { .. } => "indivisible-witness",
            Self::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// How far a matrix is from being column-stochastic: the largest of the
/// negative-entry magnitude, excess over one, and column-sum deviation.
pub fn stochastic_violation(m: &RMatrix) -> f64 {
    let entry = m.iter().fold(0.0_f64, |acc, &x| acc.max(-x).max(x - 1.0));
    let cols = m.column_iter().fold(0.0_f64, |acc, c| acc.max((c.sum() - 1.0).abs()));
    entry.max(cols)
}

/// Tests whether `gamma(t2)` factors through `gamma(t1)` by a stochastic
/// right factor `R = gamma(t2) gamma(t1)^-1`.
pub fn divisibility_witness(family: &ProcessFamily, t1: f64, t2: f64) -> Result<DivisibilityVerdict> {
    if !(0.0 < t1 && t1 < t2) {
        return Err(Error::InvalidArgs(format!("need 0 < t1 < t2, got t1 = {t1}, t2 = {t2}")));
    }
    let g1 = family.at(t1)?;
    let g2 = family.at(t2)?;
    let condition = condition_number(g1.entries());
    let inverse = if condition.is_finite() && condition <= KAPPA_MAX { g1.entries().clone().try_inverse() } else { None };
    let Some(inverse) = inverse else {
        return Ok(DivisibilityVerdict::Inconclusive { t1, t2, condition });
    };
    let r = g2.entries() * inverse;
    let factor: Vec<f64> = r.transpose().iter().copied().collect();
    let violation = stochastic_violation(&r);
    Ok(if violation > EPS_DIV {
        DivisibilityVerdict::IndivisibleWitness { t1, t2, violation, factor }
    } else {
        DivisibilityVerdict::DivisibleAt { t1, t2, factor }
    })
}

/// `[[cos^2 t, sin^2 t], [sin^2 t, cos^2 t]]`, the transition law of a
/// two-level system driven by `sigma_x`.
pub fn rabi(t: f64) -> StochasticMatrix {
    let (s, c) = t.sin_cos();
    let m = RMatrix::from_row_slice(2, 2, &[c * c, s * s, s * s, c * c]);
    StochasticMatrix::with_time(m, t).expect("rabi matrix is stochastic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn flat2() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap()
    }

    fn swap() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap()
    }

    #[test]
    fn validation_accepts_identity_and_permutation() {
        assert!(StochasticMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).is_ok());
        assert!(StochasticMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).is_ok());
    }

    #[test]
    fn validation_rejects_bad_column_sum() {
        let err = StochasticMatrix::from_rows(&[&[0.5, 0.5], &[0.4, 0.5]]).unwrap_err();
        match err {
            Error::ColumnSumViolation { col, sum } => {
                assert_eq!(col, 0);
                assert!((sum - 0.9).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_negative_entry() {
        let err = StochasticMatrix::from_rows(&[&[1.1, 0.0], &[-0.1, 1.0]]).unwrap_err();
        assert_eq!(err, Error::NegativeEntry { row: 1, col: 0, value: -0.1 });
    }

    #[test]
    fn validation_clamps_roundoff() {
        let m = StochasticMatrix::from_rows(&[&[1.0 + 1e-12, 0.0], &[-1e-12, 1.0]]).unwrap();
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn non_square_is_rejected() {
        let err = validate_stochastic(RMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::NotSquare { .. }));
    }

    #[test]
    fn marginalize_examples() {
        let p = ProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(marginalize(&StochasticMatrix::identity(2), &p).unwrap(), p);
        let e0 = ProbabilityVector::basis(2, 0).unwrap();
        assert_eq!(marginalize(&swap(), &e0).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(marginalize(&flat2(), &e0).unwrap().as_slice(), &[0.5, 0.5]);
        let p3 = ProbabilityVector::uniform(3).unwrap();
        assert!(matches!(marginalize(&flat2(), &p3), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn compose_examples() {
        let g = StochasticMatrix::from_rows(&[&[0.2, 0.6], &[0.8, 0.4]]).unwrap();
        assert_eq!(compose(&StochasticMatrix::identity(2), &g).unwrap().entries(), g.entries());
        assert_eq!(compose(&swap(), &swap()).unwrap().entries(), StochasticMatrix::identity(2).entries());
        assert_eq!(compose(&flat2(), &flat2()).unwrap().entries(), flat2().entries());
    }

    #[test]
    fn permutation_family_is_divisible() {
        let times = TimeSet::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let perms = [vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1], vec![0, 2, 1]];
        let mats = perms.iter().map(|p| StochasticMatrix::permutation(p).unwrap()).collect();
        let fam = ProcessFamily::new(times, mats).unwrap();
        for (t1, t2) in [(1.0, 2.0), (1.0, 3.0), (2.0, 3.0)] {
            let v = divisibility_witness(&fam, t1, t2).unwrap();
            assert_eq!(v.status(), "divisible-at", "{t1} {t2}");
        }
    }

    fn rabi_family() -> ProcessFamily {
        let times = TimeSet::new(vec![0.0, PI / 8.0, PI / 4.0, PI / 2.0]).unwrap();
        ProcessFamily::from_fn(times, |t| Ok(rabi(t))).unwrap()
    }

    #[test]
    fn rabi_singular_at_quarter_pi() {
        let v = divisibility_witness(&rabi_family(), PI / 4.0, PI / 2.0).unwrap();
        assert_eq!(v.status(), "inconclusive");
    }

    // Oracle: explicit 2x2 inverse. gamma(t) has eigenvalues 1 and cos 2t and
    // all members commute, so R = [[(1+l)/2, (1-l)/2], [(1-l)/2, (1+l)/2]]
    // with l = cos(2 t2) / cos(2 t1).
    fn rabi_factor_oracle(t1: f64, t2: f64) -> [f64; 4] {
        let (a, b) = (t1.cos().powi(2), t1.sin().powi(2));
        let det = a * a - b * b;
        let inv = [a / det, -b / det, -b / det, a / det];
        let (c, d) = (t2.cos().powi(2), t2.sin().powi(2));
        [c * inv[0] + d * inv[2], c * inv[1] + d * inv[3], d * inv[0] + c * inv[2], d * inv[1] + c * inv[3]]
    }

    #[test]
    fn rabi_eighth_to_quarter_factor_is_flat() {
        let oracle = rabi_factor_oracle(PI / 8.0, PI / 4.0);
        for x in oracle {
            assert!((x - 0.5).abs() < 1e-12);
        }
        let v = divisibility_witness(&rabi_family(), PI / 8.0, PI / 4.0).unwrap();
        match v {
            DivisibilityVerdict::DivisibleAt { factor, .. } => {
                for (x, y) in factor.iter().zip(oracle) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            other => panic!("expected divisible-at, got {other:?}"),
        }
    }

    #[test]
    fn rabi_eighth_to_half_is_indivisible() {
        let oracle = rabi_factor_oracle(PI / 8.0, PI / 2.0);
        let expected = -oracle.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((expected - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        match divisibility_witness(&rabi_family(), PI / 8.0, PI / 2.0).unwrap() {
            DivisibilityVerdict::IndivisibleWitness { violation, .. } => {
                assert!((violation - expected).abs() < 1e-10)
            }
            other => panic!("expected witness, got {other:?}"),
        }
    }

    #[test]
    fn missing_time_is_an_error() {
        let err = divisibility_witness(&rabi_family(), 0.1, PI / 4.0).unwrap_err();
        assert_eq!(err, Error::TimeNotInFamily(0.1));
    }

    #[test]
    fn sampling_deterministic_columns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(StochasticMatrix::identity(2).sample(1, &mut rng).unwrap(), 1);
            assert_eq!(swap().sample(0, &mut rng).unwrap(), 1);
        }
        assert!(matches!(swap().sample(2, &mut rng), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn sampling_flat_column_frequency() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let zeros = (0..n).filter(|_| flat2().sample(0, &mut rng).unwrap() == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn json_format() {
        let g = StochasticMatrix::from_rows(&[&[0.2, 0.6], &[0.8, 0.4]]).unwrap().at_time(1.5);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"dim":2,"entries":[0.2,0.6,0.8,0.4],"time":1.5}"#);
        let back: StochasticMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<StochasticMatrix>(r#"{"dim":2,"entries":[0.5,0.5,0.4,0.5],"time":0}"#).is_err());
    }

    #[test]
    fn csv_export() {
        let p = ProbabilityVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(p.to_csv(None), "config,probability\n0,0.25\n1,0.75\n");
        let space = ConfigurationSpace::with_labels(vec!["up".into(), "down".into()]).unwrap();
        assert_eq!(p.to_csv(Some(&space)), "config,probability\nup,0.25\ndown,0.75\n");
    }

    #[test]
    fn time_set_rules() {
        assert!(TimeSet::new(vec![0.0, 1.0]).is_ok());
        assert!(TimeSet::new(vec![1.0, 2.0]).is_err());
        assert!(TimeSet::new(vec![0.0, 1.0, 1.0]).is_err());
    }
}
