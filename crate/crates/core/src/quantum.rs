//! The Hilbert-space side of the correspondence (units with hbar = 1).
//!
//! A propagator `U(t)` induces the transition law `gamma_ij = |U_ij|^2`
//! (entrywise, "Schur-Hadamard" mod-square). Unitarity makes that law
//! doubly stochastic.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{
    c, check_square, hermiticity_deviation, max_abs, polar_unitary, unitarity_deviation, CMatrix, CVector, Eigh, I,
};
use crate::stochastic::{ProbabilityVector, StochasticMatrix};
use crate::{Error, Result};

pub const EPS_HERM: f64 = 1e-9;
pub const EPS_UNIT: f64 = 1e-9;
pub const EPS_NORM: f64 = 1e-9;
/// Deviations from unitarity up to this are repaired by polar projection.
pub const POLAR_REPAIR_LIMIT: f64 = 1e-6;
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    entries: CMatrix,
}

impl HermitianOperator {
    pub fn new(entries: CMatrix) -> Result<Self> {
        check_square(&entries)?;
        if let Some((k, _)) = entries.iter().enumerate().find(|(_, z)| !z.re.is_finite() || !z.im.is_finite()) {
            let n = entries.nrows();
            return Err(Error::NonFinite { row: k % n, col: k / n });
        }
        let deviation = hermiticity_deviation(&entries);
        if deviation > EPS_HERM {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self { entries })
    }

    pub fn from_real(m: DMatrix<f64>) -> Result<Self> {
        Self::new(crate::linalg::to_complex(&m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: CMatrix::zeros(dim, dim) }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&x| c(x, 0.0)));
        Self { entries: CMatrix::from_diagonal(&d) }
    }

    pub fn pauli_x() -> Self {
        Self::from_real(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Ok(Spectrum { eigh: Eigh::new(&self.entries)? })
    }
}

/// Eigen-decomposition of a generator, reusable across a time family.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigh: Eigh,
}

impl Spectrum {
    pub fn energies(&self) -> &DVector<f64> {
        &self.eigh.values
    }

    /// `exp(-i H t)`
    pub fn propagator(&self, t: f64) -> Propagator {
        let u = self.eigh.apply(|e| Complex64::from_polar(1.0, -e * t));
        Propagator::new(u, t).expect("spectral exponential is unitary")
    }
}

/// A unitary `U(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    entries: CMatrix,
    time: f64,
}

impl Propagator {
    /// Accepts `entries` if `max |U U^dagger - I| <= EPS_UNIT`, repairs it by
    /// polar projection if the deviation is at most [`POLAR_REPAIR_LIMIT`],
    /// and rejects it otherwise.
    pub fn new(entries: CMatrix, time: f64) -> Result<Self> {
        check_square(&entries)?;
        let deviation = unitarity_deviation(&entries);
        if deviation.is_nan() || deviation > POLAR_REPAIR_LIMIT {
            return Err(Error::NotUnitary { deviation });
        }
        let entries = if deviation > EPS_UNIT { polar_unitary(&entries) } else { entries };
        Ok(Self { entries, time })
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: CMatrix::identity(dim, dim), time: 0.0 }
    }

    pub fn hadamard() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::new(CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]), 0.0).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn adjoint(&self) -> CMatrix {
        self.entries.adjoint()
    }

    /// `self * earlier`, unitary group composition.
    pub fn then_after(&self, earlier: &Propagator) -> Result<Propagator> {
        if self.dim() != earlier.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: earlier.dim() });
        }
        Propagator::new(&self.entries * &earlier.entries, self.time + earlier.time)
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: psi.dim() });
        }
        StateVector::new(&self.entries * psi.amplitudes())
    }
}

/// `exp(-i H t)` via the spectral decomposition of `H`.
pub fn evolve_unitary(h: &HermitianOperator, t: f64) -> Result<Propagator> {
    Ok(h.spectrum()?.propagator(t))
}

/// `gamma_ij = |U_ij|^2`.
pub fn schur_mod_square(u: &Propagator) -> Result<StochasticMatrix> {
    let deviation = unitarity_deviation(&u.entries);
    if deviation > EPS_UNIT {
        return Err(Error::NotUnitary { deviation });
    }
    StochasticMatrix::with_time(u.entries.map(|z| z.norm_sqr()), u.time)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidArgs("empty state vector".into()));
        }
        let norm_sq: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if !norm_sq.is_finite() || (norm_sq - 1.0).abs() > EPS_NORM {
            return Err(Error::NotNormalized { norm_sq });
        }
        Ok(Self { amplitudes })
    }

    pub fn from_slice(amps: &[Complex64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amps))
    }

    /// Rescales a non-zero vector to unit norm.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized { norm_sq: norm * norm });
        }
        Self::new(amplitudes.unscale(norm))
    }

    pub fn basis(dim: usize, j: usize) -> Result<Self> {
        if j >= dim {
            return Err(Error::IndexOutOfRange { index: j, dim });
        }
        let mut v = CVector::zeros(dim);
        v[j] = c(1.0, 0.0);
        Ok(Self { amplitudes: v })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::normalized(CVector::from_element(dim, c(1.0, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }
}

/// Born rule: `p_i = |psi_i|^2`.
pub fn born_probabilities(psi: &StateVector) -> Result<ProbabilityVector> {
    ProbabilityVector::from_vector(psi.amplitudes.map(|z| z.norm_sqr()))
}

/// A positive, unit-trace, self-adjoint operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    entries: CMatrix,
}

impl DensityOperator {
    pub fn new(entries: CMatrix) -> Result<Self> {
        check_square(&entries)?;
        let deviation = hermiticity_deviation(&entries);
        if deviation > EPS_HERM {
            return Err(Error::InvalidDensity(format!("not self-adjoint (deviation {deviation:e})")));
        }
        let trace = entries.trace();
        if (trace.re - 1.0).abs() > EPS_NORM || trace.im.abs() > EPS_NORM {
            return Err(Error::InvalidDensity(format!("trace {trace}")));
        }
        let min_eig = Eigh::new(&entries)?.values.min();
        if min_eig < -EPS_NORM {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { entries })
    }

    /// `sum_i p_i |i><i|`
    pub fn diagonal(p: &ProbabilityVector) -> Self {
        let d = p.as_vector().map(|x| c(x, 0.0));
        Self { entries: CMatrix::from_diagonal(&d) }
    }

    /// Projector `|i><i|`.
    pub fn projector(dim: usize, i: usize) -> Result<Self> {
        Ok(Self::diagonal(&ProbabilityVector::basis(dim, i)?))
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// `p_i = tr(P_i rho)`, which is the diagonal of `rho`.
    pub fn probabilities(&self) -> Result<ProbabilityVector> {
        ProbabilityVector::from_vector(self.entries.diagonal().map(|z| z.re))
    }
}

/// `rho(t) = U (sum_i p_i P_i) U^dagger`.
pub fn density_evolution(p0: &ProbabilityVector, u: &Propagator) -> Result<DensityOperator> {
    if p0.dim() != u.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), found: p0.dim() });
    }
    let rho0 = DensityOperator::diagonal(p0);
    let rho = &u.entries * rho0.entries * u.adjoint();
    // symmetrize away round-off so the invariant check sees an exactly Hermitian matrix
    DensityOperator::new((&rho + rho.adjoint()) * c(0.5, 0.0))
}

#[derive(Debug, Clone)]
pub struct RecoveredHamiltonian {
    pub operator: HermitianOperator,
    /// `max |K - K^dagger|` of the raw finite-difference estimate `K`.
    pub hermiticity_residual: f64,
}

/// Recovers the generator `H = i (dU/dt) U^dagger` by central differences.
///
/// Truncation error is about `|H|^3 h^2 / 6`; round-off grows like
/// `eps / h`, so `h ~ 1e-4` is a good default when `|H| ~ 1`.
pub fn hamiltonian_from_propagator<F>(family: F, t: f64, h: f64) -> Result<RecoveredHamiltonian>
where
    F: Fn(f64) -> Result<Propagator>,
{
    if !(h >= 1e-12) {
        return Err(Error::StepTooSmall(h));
    }
    let eval = |s: f64| {
        family(s).map_err(|e| match e {
            Error::EvaluationFailure { .. } => e,
            other => Error::EvaluationFailure { t: s, reason: other.to_string() },
        })
    };
    let plus = eval(t + h)?;
    let minus = eval(t - h)?;
    let here = eval(t)?;
    if plus.dim() != here.dim() || minus.dim() != here.dim() {
        return Err(Error::EvaluationFailure { t, reason: "family changes dimension".into() });
    }
    let derivative = (plus.entries - minus.entries) / c(2.0 * h, 0.0);
    let k = derivative * here.adjoint() * I;
    let hermiticity_residual = hermiticity_deviation(&k);
    let operator = HermitianOperator { entries: (&k + k.adjoint()) * c(0.5, 0.0) };
    Ok(RecoveredHamiltonian { operator, hermiticity_residual })
}

/// Per-component split of `|a + b|^2` into `|a|^2`, `|b|^2` and the
/// interference term `2 Re(conj(a) b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceTerms {
    pub direct1: f64,
    pub direct2: f64,
    pub cross: f64,
}

impl InterferenceTerms {
    pub fn of(a: Complex64, b: Complex64) -> Self {
        Self { direct1: a.norm_sqr(), direct2: b.norm_sqr(), cross: 2.0 * (a.conj() * b).re }
    }

    pub fn total(&self) -> f64 {
        self.direct1 + self.direct2 + self.cross
    }
}

pub fn interference_decompose(psi1: &[Complex64], psi2: &[Complex64]) -> Result<Vec<InterferenceTerms>> {
    if psi1.len() != psi2.len() {
        return Err(Error::DimensionMismatch { expected: psi1.len(), found: psi2.len() });
    }
    Ok(psi1.iter().zip(psi2).map(|(&a, &b)| InterferenceTerms::of(a, b)).collect())
}

/// Max-abs distance between two complex matrices.
pub fn distance(a: &CMatrix, b: &CMatrix) -> f64 {
    max_abs(&(a - b))
}
