//! Unitary preimages of stochastic matrices.
//!
//! Given a target `gamma`, [`solve_unitary`] searches for a unitary `U` with
//! `|U_ij|^2 = gamma_ij`, dilating the configuration space by a factor `k`
//! when no preimage exists at the original size. The search parameterizes
//! `U = exp(iH)` with `H` Hermitian, so every iterate is exactly unitary, and
//! differentiates through the spectral decomposition of `H`.
//!
//! Only doubly stochastic matrices can be unistochastic. The dilution used
//! here splits every transition uniformly over `k` sub-configurations and
//! keeps row sums unchanged, so a target that is not doubly stochastic stays
//! infeasible at every `k`; the solver still reports the closest unitary it
//! finds.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, unitarity_deviation, CMatrix, Eigh, RMatrix};
use crate::quantum::{Propagator, EPS_UNIT};
use crate::rng;
use crate::stochastic::{StochasticMatrix, EPS_STOCH};
use crate::{Error, Result};

/// Entries with modulus at or below this keep their phase during gauge fixing.
pub const EPS_GAUGE: f64 = 1e-10;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_MAX_DILATION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Obstruction {
    Unistochastic,
    /// Rows `rows` of any candidate `U` cannot be orthogonal: the magnitudes
    /// `sqrt(gamma_aj gamma_bj)` fail the triangle inequality by `gap`.
    Obstructed { rows: (usize, usize), gap: f64 },
    NotApplicable,
}

/// Exact unistochasticity test for dimensions up to 3.
///
/// Orthogonality of rows `a` and `b` of `U` requires
/// `sum_j sqrt(gamma_aj gamma_bj) e^{i theta_j} = 0`, i.e. the three
/// magnitudes must close a triangle. For 3x3 this is also sufficient.
pub fn obstruction_test_3x3(gamma: &StochasticMatrix) -> Result<Obstruction> {
    let (row, dev) = gamma.max_row_sum_deviation();
    if dev > EPS_STOCH {
        return Err(Error::NotDoublyStochastic { row, sum: gamma.row_sums()[row] });
    }
    match gamma.dim() {
        1 | 2 => return Ok(Obstruction::Unistochastic),
        3 => {}
        _ => return Ok(Obstruction::NotApplicable),
    }
    let mut worst: Option<((usize, usize), f64)> = None;
    for a in 0..3 {
        for b in a + 1..3 {
            let m: Vec<f64> = (0..3).map(|j| (gamma.get(a, j) * gamma.get(b, j)).sqrt()).collect();
            let max = m.iter().cloned().fold(0.0, f64::max);
            let gap = max - (m.iter().sum::<f64>() - max);
            if gap > EPS_STOCH && worst.is_none_or(|(_, g)| gap > g) {
                worst = Some(((a, b), gap));
            }
        }
    }
    Ok(match worst {
        Some((rows, gap)) => Obstruction::Obstructed { rows, gap },
        None => Obstruction::Unistochastic,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilutionScheme {
    /// `gamma~[(i,a),(j,b)] = gamma[i][j] / k`.
    #[default]
    Uniform,
}

/// Embeds `gamma` into `k * C` configurations; configuration `(i, a)` maps
/// to index `i * k + a`. Summing any diluted column over the `k`
/// sub-configurations of `i` returns `gamma[i][j]`.
pub fn dilute(gamma: &StochasticMatrix, k: usize, scheme: DilutionScheme) -> Result<StochasticMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgs("dilution factor must be at least 1".into()));
    }
    let DilutionScheme::Uniform = scheme;
    let n = gamma.dim();
    let big = DMatrix::from_fn(n * k, n * k, |r, s| gamma.get(r / k, s / k) / k as f64);
    StochasticMatrix::with_time(big, gamma.time())
}

#[derive(Debug, Clone)]
pub struct DilationProblem {
    pub target: StochasticMatrix,
    pub max_dilation_factor: usize,
    pub residual_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub scheme: DilutionScheme,
}

impl DilationProblem {
    pub fn new(target: StochasticMatrix) -> Self {
        Self {
            target,
            max_dilation_factor: DEFAULT_MAX_DILATION,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            scheme: DilutionScheme::Uniform,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_dilation_factor == 0 {
            return Err(Error::InvalidProblem("max_dilation_factor must be >= 1".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidProblem("residual_tol must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidProblem("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilationStatus {
    Converged,
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartRecord {
    pub k: usize,
    pub restart: usize,
    pub residual: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub structurally_infeasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DilationSolution {
    pub status: DilationStatus,
    pub dilation_factor: usize,
    /// `sum_ij (|U_ij|^2 - gamma~_ij)^2`, evaluated on the returned `unitary`.
    pub residual: f64,
    pub gauge_fixed: bool,
    pub unitary: Propagator,
    pub trace: Vec<RestartRecord>,
}

/// Hermitian matrix from `n^2` reals: the diagonal first, then `(re, im)` of
/// each upper-triangular entry in row-major order.
pub fn hermitian_from_params(params: &[f64], n: usize) -> CMatrix {
    assert_eq!(params.len(), n * n);
    let mut h = CMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = c(params[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            let z = c(params[k], params[k + 1]);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
            k += 2;
        }
    }
    h
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Objective `f = sum (|U_ij|^2 - target_ij)^2` for `U = exp(iH(params))`
/// and its exact gradient with respect to `params`.
///
/// With `H = V diag(l) V^dagger`, the derivative of `exp(iH)` in direction
/// `dH` is `V ((V^dagger dH V) o Phi) V^dagger` where
/// `Phi_kl = (e^{i l_k} - e^{i l_l}) / (l_k - l_l)`, evaluated in the
/// cancellation-free form `i e^{i (l_k + l_l)/2} sinc((l_k - l_l)/2)`.
pub fn objective_and_gradient(params: &[f64], target: &RMatrix) -> Result<(f64, Vec<f64>, CMatrix)> {
    let n = target.nrows();
    let h = hermitian_from_params(params, n);
    let eig = Eigh::new(&h)?;
    let u = eig.apply(|l| Complex64::from_polar(1.0, l));
    let mut f = 0.0;
    let mut gbar = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let r = u[(i, j)].norm_sqr() - target[(i, j)];
            f += r * r;
            gbar[(i, j)] = u[(i, j)] * (4.0 * r);
        }
    }
    let v = &eig.vectors;
    let b = v.adjoint() * gbar * v;
    let l = &eig.values;
    let w = CMatrix::from_fn(n, n, |k, m| {
        let phi = c(0.0, 1.0) * Complex64::from_polar(1.0, 0.5 * (l[k] + l[m])) * sinc(0.5 * (l[k] - l[m]));
        b[(k, m)] * phi.conj()
    });
    let gh = v * w * v.adjoint();
    let mut grad = vec![0.0; n * n];
    for i in 0..n {
        grad[i] = gh[(i, i)].re;
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            grad[k] = gh[(i, j)].re + gh[(j, i)].re;
            grad[k + 1] = gh[(i, j)].im - gh[(j, i)].im;
            k += 2;
        }
    }
    Ok((f, grad, u))
}

pub fn mod_square_residual(u: &CMatrix, target: &RMatrix) -> f64 {
    u.iter().zip(target.iter()).map(|(z, t)| (z.norm_sqr() - t).powi(2)).sum()
}

struct Lbfgs {
    memory: usize,
    max_iter: usize,
    f_target: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    /// Returns `(x, f, iterations)`.
    fn minimize<F>(&self, mut x: Vec<f64>, eval: F) -> Result<(Vec<f64>, f64, usize)>
    where
        F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let (mut f, mut g) = eval(&x)?;
        let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
        let mut iter = 0;
        let mut stalls = 0;
        let mut flat_steps = 0;
        while iter < self.max_iter && f > self.f_target {
            iter += 1;
            let gnorm = dot(&g, &g).sqrt();
            if gnorm < 1e-15 {
                break;
            }
            // two-loop recursion
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y, rho) in hist.iter().rev() {
                let a = rho * dot(s, &q);
                q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                alphas.push(a);
            }
            let gamma = hist.last().map(|(s, y, _)| dot(s, y) / dot(y, y)).unwrap_or(1.0 / gnorm);
            q.iter_mut().for_each(|qi| *qi *= gamma);
            for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &q);
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
            }
            let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
            let mut slope = dot(&dir, &g);
            if slope >= 0.0 {
                hist.clear();
                dir = g.iter().map(|v| -v / gnorm).collect();
                slope = dot(&dir, &g);
            }
            // backtracking Armijo search
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
                let (ft, gt) = eval(&trial)?;
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fn_, gn)) = accepted else {
                if hist.is_empty() {
                    break;
                }
                hist.clear();
                stalls += 1;
                if stalls > 3 {
                    break;
                }
                continue;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                if hist.len() == self.memory {
                    hist.remove(0);
                }
                hist.push((s, y, 1.0 / sy));
            }
            if f - fn_ <= 1e-14 * f {
                flat_steps += 1;
                if flat_steps >= 10 {
                    x = xn;
                    f = fn_;
                    break;
                }
            } else {
                flat_steps = 0;
            }
            x = xn;
            f = fn_;
            g = gn;
        }
        Ok((x, f, iter))
    }
}

struct Attempt {
    residual: f64,
    iterations: usize,
    unitary: CMatrix,
}

fn random_params<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut p = Vec::with_capacity(n * n);
    for _ in 0..n {
        p.push(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    }
    for _ in n..n * n {
        p.push(rng.sample::<f64, _>(StandardNormal));
    }
    p
}

fn run_restart(target: &RMatrix, seed: u64, k: usize, restart: usize, tol: f64) -> Result<Attempt> {
    let n = target.nrows();
    let mut rng = rng::stream(seed, &[k as u64, restart as u64]);
    let x0 = random_params(n, &mut rng);
    let opt = Lbfgs { memory: 12, max_iter: 4000, f_target: tol * 1e-6 };
    let (x, _, iterations) = opt.minimize(x0, |p| objective_and_gradient(p, target).map(|(f, g, _)| (f, g)))?;
    let unitary = Eigh::new(&hermitian_from_params(&x, n))?.apply(|l| Complex64::from_polar(1.0, l));
    Ok(Attempt { residual: mod_square_residual(&unitary, target), iterations, unitary })
}

/// The entrywise square root of a target, when that already is unitary
/// (permutations and other zero-phase preimages).
fn zero_phase_candidate(target: &RMatrix) -> Option<CMatrix> {
    let u = target.map(|x| c(x.sqrt(), 0.0));
    (unitarity_deviation(&u) <= EPS_UNIT).then_some(u)
}

/// Searches `k = 1..=k_max` for a unitary preimage of the diluted target.
///
/// Restarts at each `k` run concurrently, each with its own stream derived
/// from `(seed, k, restart)`; the result does not depend on scheduling. The
/// first `k` with a restart at or below `residual_tol` wins (lowest residual,
/// then lowest restart index); otherwise the best attempt overall is returned
/// with status [`DilationStatus::NoConvergence`].
pub fn solve_unitary(problem: &DilationProblem) -> Result<DilationSolution> {
    problem.validate()?;
    let doubly = problem.target.is_doubly_stochastic(EPS_STOCH);
    let mut trace = Vec::new();
    let mut best: Option<(usize, usize, Attempt)> = None;
    for k in 1..=problem.max_dilation_factor {
        if k == 1 && !doubly {
            trace.push(RestartRecord { k, restart: 0, residual: f64::NAN, iterations: 0, structurally_infeasible: true });
            continue;
        }
        let target = dilute(&problem.target, k, problem.scheme)?;
        let target = target.entries();
        let attempts: Vec<(usize, Attempt)> = if let Some(u) = zero_phase_candidate(target) {
            vec![(0, Attempt { residual: mod_square_residual(&u, target), iterations: 0, unitary: u })]
        } else {
            (0..problem.restarts)
                .into_par_iter()
                .map(|r| run_restart(target, problem.seed, k, r, problem.residual_tol).map(|a| (r, a)))
                .collect::<Result<Vec<_>>>()?
        };
        for (r, a) in &attempts {
            trace.push(RestartRecord { k, restart: *r, residual: a.residual, iterations: a.iterations, structurally_infeasible: false });
        }
        for (r, a) in attempts {
            let better = match &best {
                None => true,
                Some((_, _, b)) => a.residual < b.residual,
            };
            if better {
                best = Some((k, r, a));
            }
        }
        if best.as_ref().is_some_and(|(bk, _, b)| *bk == k && b.residual <= problem.residual_tol) {
            break;
        }
    }
    let Some((k, _, attempt)) = best else {
        return Err(Error::InvalidProblem("no dilation factor could be attempted".into()));
    };
    let fixed = fix_gauge(&Propagator::new(attempt.unitary, problem.target.time())?)?;
    let target = dilute(&problem.target, k, problem.scheme)?;
    let residual = mod_square_residual(fixed.entries(), target.entries());
    let status = if residual <= problem.residual_tol { DilationStatus::Converged } else { DilationStatus::NoConvergence };
    Ok(DilationSolution { status, dilation_factor: k, residual, gauge_fixed: true, unitary: fixed, trace })
}

fn unit_phase(z: Complex64) -> Complex64 {
    if z.norm() > EPS_GAUGE {
        z / z.norm()
    } else {
        c(1.0, 0.0)
    }
}

/// Canonical representative of `D_L U D_R` over diagonal phase matrices:
/// row 0 and column 0 are made real and non-negative wherever their modulus
/// exceeds [`EPS_GAUGE`]. Moduli are unchanged and the map is idempotent.
pub fn fix_gauge(u: &Propagator) -> Result<Propagator> {
    let deviation = unitarity_deviation(u.entries());
    if deviation > EPS_UNIT {
        return Err(Error::NotUnitary { deviation });
    }
    let mut m = u.entries().clone();
    let n = m.nrows();
    for j in 0..n {
        let ph = unit_phase(m[(0, j)]).conj();
        m.column_mut(j).iter_mut().for_each(|z| *z *= ph);
    }
    for i in 1..n {
        let ph = unit_phase(m[(i, 0)]).conj();
        m.row_mut(i).iter_mut().for_each(|z| *z *= ph);
    }
    for j in 0..n {
        if m[(0, j)].norm() > EPS_GAUGE {
            m[(0, j)] = c(m[(0, j)].norm(), 0.0);
        }
    }
    for i in 1..n {
        if m[(i, 0)].norm() > EPS_GAUGE {
            m[(i, 0)] = c(m[(i, 0)].norm(), 0.0);
        }
    }
    Propagator::new(m, u.time())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::quantum::{evolve_unitary, schur_mod_square, HermitianOperator};
    use proptest::prelude::*;

    fn zero_diag3() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[&[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5], &[0.5, 0.5, 0.0]]).unwrap()
    }

    fn flat(n: usize) -> StochasticMatrix {
        crate::stochastic::validate_stochastic(RMatrix::from_element(n, n, 1.0 / n as f64)).unwrap()
    }

    fn phased_hadamard(a: f64, b: f64, g: f64, d: f64) -> Propagator {
        let left = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![Complex64::from_polar(1.0, a), Complex64::from_polar(1.0, b)]));
        let right = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![Complex64::from_polar(1.0, g), Complex64::from_polar(1.0, d)]));
        Propagator::new(left * Propagator::hadamard().entries() * right, 0.0).unwrap()
    }

    #[test]
    fn obstruction_examples() {
        assert_eq!(obstruction_test_3x3(&StochasticMatrix::identity(3)).unwrap(), Obstruction::Unistochastic);
        assert_eq!(obstruction_test_3x3(&flat(3)).unwrap(), Obstruction::Unistochastic);
        match obstruction_test_3x3(&zero_diag3()).unwrap() {
            Obstruction::Obstructed { rows, gap } => {
                assert_eq!(rows, (0, 1));
                assert!((gap - 0.5).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(obstruction_test_3x3(&flat(4)).unwrap(), Obstruction::NotApplicable);
        assert_eq!(obstruction_test_3x3(&flat(2)).unwrap(), Obstruction::Unistochastic);
    }

    #[test]
    fn obstruction_requires_doubly_stochastic() {
        let g = StochasticMatrix::from_rows(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(obstruction_test_3x3(&g), Err(Error::NotDoublyStochastic { .. })));
    }

    #[test]
    fn dilute_examples() {
        let g = StochasticMatrix::from_rows(&[&[0.2, 0.6], &[0.8, 0.4]]).unwrap();
        assert_eq!(dilute(&g, 1, DilutionScheme::Uniform).unwrap().entries(), g.entries());
        let d = dilute(&StochasticMatrix::identity(2), 2, DilutionScheme::Uniform).unwrap();
        let expected = RMatrix::from_row_slice(
            4,
            4,
            &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5],
        );
        assert_eq!(d.entries(), &expected);
        assert!(dilute(&g, 0, DilutionScheme::Uniform).is_err());
    }

    proptest! {
        #[test]
        fn dilute_block_marginals(k in 1usize..=8, n in 1usize..=16, raw in proptest::collection::vec(0.01f64..1.0, 256)) {
            let mut m = RMatrix::from_fn(n, n, |i, j| raw[(i * 16 + j) % raw.len()]);
            for mut col in m.column_iter_mut() {
                let s = col.sum();
                col /= s;
            }
            let g = crate::stochastic::validate_stochastic(m).unwrap();
            let d = dilute(&g, k, DilutionScheme::Uniform).unwrap();
            for i in 0..n {
                for j in 0..n {
                    for b in 0..k {
                        let block: f64 = (0..k).map(|a| d.get(i * k + a, j * k + b)).sum();
                        prop_assert!((block - g.get(i, j)).abs() <= 1e-12);
                    }
                }
            }
        }

        #[test]
        fn gauge_preserves_moduli_and_is_idempotent(seed in proptest::collection::vec(-2.0f64..2.0, 16), dim in 1usize..6, t in 0.0f64..5.0) {
            let params: Vec<f64> = (0..dim * dim).map(|i| seed[i % seed.len()] * (1.0 + 0.1 * i as f64)).collect();
            let h = HermitianOperator::new(hermitian_from_params(&params, dim)).unwrap();
            let u = evolve_unitary(&h, t).unwrap();
            let once = fix_gauge(&u).unwrap();
            let twice = fix_gauge(&once).unwrap();
            prop_assert!(max_abs(&(once.entries() - twice.entries())) <= 1e-14);
            let g0 = schur_mod_square(&u).unwrap();
            let g1 = schur_mod_square(&once).unwrap();
            prop_assert!(crate::linalg::max_abs_real(&(g0.entries() - g1.entries())) <= 1e-14);
        }
    }

    #[test]
    fn gauge_examples() {
        let id = fix_gauge(&Propagator::identity(3)).unwrap();
        assert_eq!(id.entries(), &CMatrix::identity(3, 3));
        let h = Propagator::hadamard();
        for phi in [0.3, 1.7, -2.9] {
            let g = fix_gauge(&phased_hadamard(phi, phi, 0.0, 0.0)).unwrap();
            assert!(max_abs(&(g.entries() - h.entries())) < 1e-12);
        }
        let g = fix_gauge(&phased_hadamard(0.4, -1.1, 2.2, 0.9)).unwrap();
        assert!(max_abs(&(g.entries() - h.entries())) < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let target = flat(3).entries().clone();
        let mut rng = rng::stream(3, &[]);
        for _ in 0..5 {
            let x = random_params(3, &mut rng);
            let (_, g, _) = objective_and_gradient(&x, &target).unwrap();
            for p in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[p] += h;
                let mut xm = x.clone();
                xm[p] -= h;
                let fd = (objective_and_gradient(&xp, &target).unwrap().0 - objective_and_gradient(&xm, &target).unwrap().0) / (2.0 * h);
                assert!((fd - g[p]).abs() <= 1e-6 * g[p].abs().max(1e-3), "param {p}: fd {fd} analytic {}", g[p]);
            }
        }
    }

    #[test]
    fn permutation_found_immediately() {
        let p = StochasticMatrix::permutation(&[2, 0, 1]).unwrap();
        let sol = solve_unitary(&DilationProblem::new(p.clone())).unwrap();
        assert_eq!(sol.status, DilationStatus::Converged);
        assert_eq!(sol.dilation_factor, 1);
        assert_eq!(sol.residual, 0.0);
        assert_eq!(sol.trace.len(), 1);
        assert_eq!(schur_mod_square(&sol.unitary).unwrap().entries(), p.entries());
    }

    #[test]
    fn flat_two_by_two_gives_hadamard() {
        let sol = solve_unitary(&DilationProblem { seed: 7, ..DilationProblem::new(flat(2)) }).unwrap();
        assert_eq!(sol.dilation_factor, 1);
        assert!(sol.residual <= 1e-10, "{}", sol.residual);
        assert!(max_abs(&(sol.unitary.entries() - Propagator::hadamard().entries())) <= 1e-5);
    }

    #[test]
    fn obstructed_needs_dilation() {
        let sol = solve_unitary(&DilationProblem { seed: 7, ..DilationProblem::new(zero_diag3()) }).unwrap();
        let k1: Vec<_> = sol.trace.iter().filter(|r| r.k == 1).collect();
        assert_eq!(k1.len(), 20);
        // every restart stalls at the same local floor, 1/18
        assert!(k1.iter().all(|r| r.residual >= 1e-3), "{k1:?}");
        assert!(k1.iter().all(|r| (r.residual - 1.0 / 18.0).abs() < 1e-6), "{k1:?}");
        assert_eq!(sol.status, DilationStatus::Converged);
        assert_eq!(sol.dilation_factor, 2);
        assert!(sol.residual <= 1e-8);
        let direct = schur_mod_square(&sol.unitary).unwrap();
        let target = dilute(&zero_diag3(), 2, DilutionScheme::Uniform).unwrap();
        assert!(crate::linalg::max_abs_real(&(direct.entries() - target.entries())) < 1e-4);
    }

    #[test]
    fn non_doubly_stochastic_skips_k1() {
        let g = StochasticMatrix::from_rows(&[&[0.9, 0.6], &[0.1, 0.4]]).unwrap();
        let sol = solve_unitary(&DilationProblem { max_dilation_factor: 2, restarts: 2, ..DilationProblem::new(g) }).unwrap();
        assert!(sol.trace[0].structurally_infeasible);
        assert_eq!(sol.status, DilationStatus::NoConvergence);
        assert_eq!(sol.dilation_factor, 2);
    }

    #[test]
    fn invalid_problem() {
        let p = DilationProblem { restarts: 0, ..DilationProblem::new(flat(2)) };
        assert!(matches!(solve_unitary(&p), Err(Error::InvalidProblem(_))));
    }
}
