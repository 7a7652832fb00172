//! Bosonic Fock space in a box and the time-ordered (Dyson) expansion of the
//! interaction-picture propagator.
//!
//! Nested time-ordered integrals are evaluated on Chebyshev-Lobatto nodes
//! over `[t0, t]`: with `T_0 = I` and
//! `T_k(s) = -i int_{t0}^{s} H(s') T_{k-1}(s') ds'`, the `k`-th term at `t`
//! equals the `k`-fold integral over the ordered simplex
//! `t0 <= t_1 <= ... <= t_k <= t` with later times to the left. The
//! cumulative integral is a spectral integration matrix applied node-wise.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::linalg::{c, hermiticity_deviation, max_abs, CMatrix, RMatrix, I};
use crate::quantum::{HermitianOperator, EPS_HERM};
use crate::{Complex64, Error, Result};

pub const MAX_BASIS_STATES: usize = 4096;
pub const MAX_ORDER: usize = 4;
pub const MIN_QUAD_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FockBasis {
    pub l: f64,
    pub n_max: usize,
    pub max_particles: usize,
    /// `p_n = n pi / L` for `n = 1..=n_max`.
    pub modes: Vec<f64>,
    /// Occupied mode indices (1-based, non-decreasing) of each state.
    states: Vec<Vec<usize>>,
}

fn count_multisets(modes: usize, max_particles: usize) -> usize {
    // sum_{k=0}^{K} C(modes + k - 1, k), saturating
    let mut total: usize = 0;
    let mut term: u128 = 1;
    for k in 0..=max_particles {
        if k > 0 {
            term = term * (modes + k - 1) as u128 / k as u128;
        }
        total = total.saturating_add(usize::try_from(term).unwrap_or(usize::MAX));
        if total > MAX_BASIS_STATES {
            return total;
        }
    }
    total
}

/// Enumerates states by particle number, then lexicographically by the
/// sorted list of occupied modes. The vacuum comes first.
pub fn build_fock_basis(l: f64, n_max: usize, max_particles: usize) -> Result<FockBasis> {
    if !(l > 0.0 && l.is_finite()) || n_max == 0 {
        return Err(Error::InvalidArgs(format!("need L > 0 and n_max >= 1, got L = {l}, n_max = {n_max}")));
    }
    let count = count_multisets(n_max, max_particles);
    if count > MAX_BASIS_STATES {
        return Err(Error::BasisTooLarge(count));
    }
    let mut states = vec![Vec::new()];
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_particles {
        layer = layer
            .iter()
            .flat_map(|s| {
                let start = s.last().copied().unwrap_or(1);
                (start..=n_max).map(move |m| {
                    let mut next = s.clone();
                    next.push(m);
                    next
                })
            })
            .collect();
        states.extend(layer.iter().cloned());
    }
    let modes = (1..=n_max).map(|n| n as f64 * PI / l).collect();
    Ok(FockBasis { l, n_max, max_particles, modes, states })
}

impl FockBasis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn momentum(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.n_max {
            return Err(Error::IndexOutOfRange { index: n, dim: self.n_max });
        }
        Ok(self.modes[n - 1])
    }

    /// Occupied modes of state `i`, 1-based and non-decreasing.
    pub fn modes_of(&self, i: usize) -> Result<&[usize]> {
        self.states.get(i).map(Vec::as_slice).ok_or(Error::IndexOutOfRange { index: i, dim: self.len() })
    }

    /// Occupation numbers `(n_1, ..., n_{n_max})` of state `i`.
    pub fn occupations(&self, i: usize) -> Result<Vec<usize>> {
        let mut occ = vec![0; self.n_max];
        for &m in self.modes_of(i)? {
            occ[m - 1] += 1;
        }
        Ok(occ)
    }

    pub fn particle_count(&self, i: usize) -> Result<usize> {
        Ok(self.modes_of(i)?.len())
    }

    /// Free energy `sum_k n_k p_k`.
    pub fn energy(&self, i: usize) -> Result<f64> {
        Ok(self.modes_of(i)?.iter().map(|&m| self.modes[m - 1]).sum())
    }

    pub fn index_of(&self, modes: &[usize]) -> Result<usize> {
        let mut sorted = modes.to_vec();
        sorted.sort_unstable();
        self.states
            .iter()
            .position(|s| *s == sorted)
            .ok_or_else(|| Error::InvalidArgs(format!("state {sorted:?} is not in the basis")))
    }

    /// Parses `"vacuum"` or a comma-separated list of mode indices such as
    /// `"1,1"`.
    pub fn parse_state(&self, text: &str) -> Result<usize> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("vacuum") || text.is_empty() {
            return Ok(0);
        }
        let modes = text
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::InvalidArgs(format!("bad mode index {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        self.index_of(&modes)
    }

    pub fn label(&self, i: usize) -> Result<String> {
        let modes = self.modes_of(i)?;
        if modes.is_empty() {
            return Ok("vacuum".into());
        }
        Ok(modes.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
    }
}

type MatrixFn = dyn Fn(f64) -> CMatrix + Send + Sync;

/// Interaction-picture Hamiltonian `H_int(t)` over a Fock basis.
#[derive(Clone)]
pub struct InteractionHamiltonian {
    basis: FockBasis,
    matrix_fn: Arc<MatrixFn>,
}

impl fmt::Debug for InteractionHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InteractionHamiltonian").field("basis", &self.basis).finish_non_exhaustive()
    }
}

impl InteractionHamiltonian {
    pub fn from_fn(basis: FockBasis, matrix_fn: impl Fn(f64) -> CMatrix + Send + Sync + 'static) -> Self {
        Self { basis, matrix_fn: Arc::new(matrix_fn) }
    }

    pub fn constant(basis: FockBasis, h: HermitianOperator) -> Result<Self> {
        if h.dim() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), found: h.dim() });
        }
        let m = h.entries().clone();
        Ok(Self::from_fn(basis, move |_| m.clone()))
    }

    /// Toy pair creation: the vacuum couples to every two-particle state `f`
    /// with strength `g` and interaction-picture phase `exp(i E_f t)`.
    pub fn pair_creation(basis: FockBasis, g: f64) -> Result<Self> {
        let pairs: Vec<(usize, f64)> = (0..basis.len())
            .filter(|&i| basis.particle_count(i) == Ok(2))
            .map(|i| (i, basis.energy(i).unwrap()))
            .collect();
        let e0 = basis.energy(0)?;
        let dim = basis.len();
        Ok(Self::from_fn(basis, move |t| {
            let mut m = CMatrix::zeros(dim, dim);
            for &(f, ef) in &pairs {
                let z = Complex64::from_polar(g, (ef - e0) * t);
                m[(f, 0)] = z;
                m[(0, f)] = z.conj();
            }
            m
        }))
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `H_int(t)`, checked for shape and hermiticity.
    pub fn at(&self, t: f64) -> Result<CMatrix> {
        let m = (self.matrix_fn)(t);
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: m.nrows() });
        }
        let deviation = hermiticity_deviation(&m);
        if deviation > EPS_HERM {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(m)
    }
}

/// Chebyshev-Lobatto nodes on `[-1, 1]` in increasing order and the matrix
/// `S` with `(S f)_i ~ int_{-1}^{x_i} f(x) dx`, exact for polynomials of
/// degree below the node count.
pub fn chebyshev_integration(q: usize) -> (Vec<f64>, RMatrix) {
    let n = q - 1;
    let theta: Vec<f64> = (0..q).map(|i| PI * (n - i) as f64 / n as f64).collect();
    let nodes: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
    // coefficients: f = sum_m a_m T_m with a = C f (Lobatto cosine transform)
    let mut coeff = RMatrix::zeros(q, q);
    for m in 0..q {
        for j in 0..q {
            let mut w = 2.0 / n as f64 * (m as f64 * theta[j]).cos();
            if j == 0 || j == n {
                w *= 0.5;
            }
            if m == 0 || m == n {
                w *= 0.5;
            }
            coeff[(m, j)] = w;
        }
    }
    // antiderivative of T_m vanishing at x = -1, evaluated at the nodes
    let cheb = |m: usize, th: f64| (m as f64 * th).cos();
    let sign = |m: usize| if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut prim = RMatrix::zeros(q, q);
    for i in 0..q {
        let x = nodes[i];
        for m in 0..q {
            prim[(i, m)] = match m {
                0 => x + 1.0,
                1 => 0.5 * (x * x - 1.0),
                _ => {
                    // int T_m = T_{m+1} / (2(m+1)) - T_{m-1} / (2(m-1))
                    let mf = m as f64;
                    let anti = |up: f64, dn: f64| 0.5 * (up / (mf + 1.0) - dn / (mf - 1.0));
                    anti(cheb(m + 1, theta[i]), cheb(m - 1, theta[i])) - anti(sign(m + 1), sign(m - 1))
                }
            };
        }
    }
    (nodes, prim * coeff)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DysonExpansion {
    pub order: usize,
    pub t0: f64,
    pub t: f64,
    pub quad_points: usize,
    /// `terms[k - 1]` is the `k`-fold time-ordered integral times `(-i)^k`.
    #[serde(skip)]
    pub terms: Vec<CMatrix>,
    #[serde(skip)]
    pub partial_sum: CMatrix,
}

impl DysonExpansion {
    pub fn dim(&self) -> usize {
        self.partial_sum.nrows()
    }

    /// `I + sum_{j <= k} terms[j - 1]`.
    pub fn partial_sum_to(&self, k: usize) -> CMatrix {
        let mut u = CMatrix::identity(self.dim(), self.dim());
        for term in self.terms.iter().take(k) {
            u += term;
        }
        u
    }

    /// `max |U_n U_n^dagger - I|` of the full partial sum.
    pub fn unitarity_defect(&self) -> f64 {
        unitarity_defect(&self.partial_sum)
    }
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    max_abs(&(u * u.adjoint() - CMatrix::identity(u.nrows(), u.nrows())))
}

pub fn dyson_propagator(h: &InteractionHamiltonian, t0: f64, t: f64, order: usize, quad_points: usize) -> Result<DysonExpansion> {
    if order > MAX_ORDER {
        return Err(Error::OrderUnsupported(order));
    }
    if quad_points < MIN_QUAD_POINTS {
        return Err(Error::InvalidArgs(format!("need at least {MIN_QUAD_POINTS} quadrature points, got {quad_points}")));
    }
    if !(t0.is_finite() && t.is_finite()) || t <= t0 {
        return Err(Error::InvalidArgs(format!("need finite t > t0, got t0 = {t0}, t = {t}")));
    }
    let half = 0.5 * (t - t0);
    let mid = 0.5 * (t + t0);
    let (nodes, s) = chebyshev_integration(quad_points);
    let times: Vec<f64> = nodes.iter().map(|x| mid + half * x).collect();
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::QuadratureUnderflow { t0, t });
    }
    let dim = h.dim();
    let hs = if order > 0 { times.par_iter().map(|&s| h.at(s)).collect::<Result<Vec<_>>>()? } else { Vec::new() };

    let weight = -I * half;
    let mut prev: Vec<CMatrix> = vec![CMatrix::identity(dim, dim); quad_points];
    let mut terms = Vec::with_capacity(order);
    for _ in 0..order {
        let integrand: Vec<CMatrix> = hs.par_iter().zip(&prev).map(|(hj, tj)| hj * tj).collect();
        let next: Vec<CMatrix> = (0..quad_points)
            .into_par_iter()
            .map(|i| {
                let mut acc = CMatrix::zeros(dim, dim);
                for (j, f) in integrand.iter().enumerate() {
                    let w = s[(i, j)];
                    if w != 0.0 {
                        acc += f * c(w, 0.0);
                    }
                }
                acc * weight
            })
            .collect();
        terms.push(next[quad_points - 1].clone());
        prev = next;
    }
    let mut partial_sum = CMatrix::identity(dim, dim);
    for term in &terms {
        partial_sum += term;
    }
    Ok(DysonExpansion { order, t0, t, quad_points, terms, partial_sum })
}

fn check_index(i: usize, dim: usize) -> Result<()> {
    if i >= dim {
        return Err(Error::IndexOutOfRange { index: i, dim });
    }
    Ok(())
}

/// `|<f|U|i>|^2`.
pub fn s_matrix_probability(u: &CMatrix, in_state: usize, out_state: usize) -> Result<f64> {
    check_index(in_state, u.ncols())?;
    check_index(out_state, u.nrows())?;
    Ok(u[(out_state, in_state)].norm_sqr())
}

/// All transition probabilities, `[f, i] = |<f|U|i>|^2` (column `i` is the
/// outcome distribution for input `i`).
pub fn s_matrix(u: &CMatrix) -> RMatrix {
    u.map(|z| z.norm_sqr())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermInterference {
    /// `A_k = <f|term_k|i>`, with `A_0 = delta_fi`.
    pub amplitudes: Vec<Complex64>,
    /// `(j, k, 2 Re(conj(A_j) A_k))` for `j < k`.
    pub cross: Vec<(usize, usize, f64)>,
    pub direct: f64,
    /// `|sum_k A_k|^2`.
    pub total: f64,
}

impl TermInterference {
    pub fn cross_sum(&self) -> f64 {
        self.cross.iter().map(|c| c.2).sum()
    }

    /// `|total - (direct + cross)|`.
    pub fn identity_residual(&self) -> f64 {
        (self.total - self.direct - self.cross_sum()).abs()
    }
}

pub fn amplitudes_from(a: Vec<Complex64>) -> TermInterference {
    let mut cross = Vec::new();
    for j in 0..a.len() {
        for k in j + 1..a.len() {
            cross.push((j, k, 2.0 * (a[j].conj() * a[k]).re));
        }
    }
    let direct = a.iter().map(|z| z.norm_sqr()).sum();
    let total = a.iter().sum::<Complex64>().norm_sqr();
    TermInterference { amplitudes: a, cross, direct, total }
}

pub fn term_interference(exp: &DysonExpansion, in_state: usize, out_state: usize) -> Result<TermInterference> {
    check_index(in_state, exp.dim())?;
    check_index(out_state, exp.dim())?;
    let a0 = if in_state == out_state { c(1.0, 0.0) } else { c(0.0, 0.0) };
    let a = std::iter::once(a0).chain(exp.terms.iter().map(|t| t[(out_state, in_state)])).collect();
    Ok(amplitudes_from(a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub order: usize,
    pub amplitude: Complex64,
    pub probability: f64,
    /// `|sum_{j <= order} A_j|^2`.
    pub cumulative: f64,
    /// Unitarity defect of the partial sum through this order.
    pub unitarity_defect: f64,
}

pub fn scatter_table(exp: &DysonExpansion, in_state: usize, out_state: usize) -> Result<Vec<ScatterRow>> {
    let ti = term_interference(exp, in_state, out_state)?;
    let mut running = c(0.0, 0.0);
    Ok(ti
        .amplitudes
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            running += a;
            ScatterRow {
                order: k,
                amplitude: a,
                probability: a.norm_sqr(),
                cumulative: running.norm_sqr(),
                unitarity_defect: unitarity_defect(&exp.partial_sum_to(k)),
            }
        })
        .collect())
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("order,re_amplitude,im_amplitude,abs2_amplitude,cumulative_probability,unitarity_defect\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            r.order, r.amplitude.re, r.amplitude.im, r.probability, r.cumulative, r.unitarity_defect
        ));
    }
    out
}
