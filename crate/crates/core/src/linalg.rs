//! Dense linear-algebra helpers shared by the numeric modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Largest entrywise modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_real(m: &RMatrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// max |(U U^dagger - I)_ij|
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    let n = u.nrows();
    let prod = u * u.adjoint();
    max_abs(&(prod - CMatrix::identity(n, n)))
}

/// max |(H - H^dagger)_ij|
pub fn hermiticity_deviation(h: &CMatrix) -> f64 {
    max_abs(&(h - h.adjoint()))
}

/// Spectral decomposition `H = V diag(values) V^dagger` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    /// Decomposes the Hermitian part of `h` and checks the reconstruction
    /// residual `max |H V - V diag(values)|`.
    pub fn new(h: &CMatrix) -> Result<Self> {
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let scale = max_abs(&sym).max(1.0);
        let eig = SymmetricEigen::new(sym.clone());
        let values = eig.eigenvalues;
        let vectors = eig.eigenvectors;
        let mut scaled = vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::new(values[k], 0.0);
        }
        let residual = max_abs(&(&sym * &vectors - scaled));
        if !residual.is_finite() || residual > 1e-8 * scale * (h.nrows() as f64).max(1.0) {
            return Err(Error::EigenDecompositionFailure { residual });
        }
        Ok(Self { values, vectors })
    }

    /// `V diag(f(values)) V^dagger`
    pub fn apply(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let mut left = self.vectors.clone();
        for (k, mut col) in left.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        left * self.vectors.adjoint()
    }
}

/// Nearest unitary in Frobenius norm (the unitary polar factor `W V^dagger`
/// of the SVD `A = W S V^dagger`).
pub fn polar_unitary(a: &CMatrix) -> CMatrix {
    let svd = a.clone().svd(true, true);
    let w = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    w * v_t
}

/// Ratio of largest to smallest singular value; infinite if singular.
pub fn condition_number(m: &RMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn check_square<T>(m: &DMatrix<T>) -> Result<usize>
where
    T: nalgebra::Scalar,
{
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigh_reconstructs_pauli_y() {
        let h = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let e = Eigh::new(&h).unwrap();
        let back = e.apply(|x| c(x, 0.0));
        assert!(max_abs(&(back - h)) < 1e-14);
        let mut vals: Vec<f64> = e.values.iter().cloned().collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn polar_of_scaled_unitary_is_unitary() {
        let u = CMatrix::identity(3, 3) * c(1.0 + 1e-7, 0.0);
        let p = polar_unitary(&u);
        assert!(unitarity_deviation(&p) < 1e-14);
    }

    #[test]
    fn condition_of_singular_matrix_is_infinite_or_huge() {
        let m = RMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(condition_number(&m) > 1e15);
    }
}
