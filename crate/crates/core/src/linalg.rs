//! Dense helpers over nalgebra shared by the solvers.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative singular-value cutoff used for every pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-12;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| C64::new(v, 0.0))
}

/// SVD with singular values sorted descending. Fails on non-finite input
/// instead of letting the iteration spin.
pub fn svd_sorted(m: CMatrix) -> Result<SVD<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite entry passed to SVD".into()));
    }
    Ok(SVD::new(m, true, true))
}

pub fn svd_sorted_real(m: DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry passed to SVD".into()));
    }
    Ok(SVD::new(m, true, true))
}

/// Thin pseudo-inverse factors of `a`: `(u_k, s_k, v_k)` keeping singular values
/// above `PINV_RTOL * s_1`.
pub struct ThinSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl ThinSvd {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let svd = svd_sorted(a.clone())?;
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v requested");
        let s1 = svd.singular_values.get(0).copied().unwrap_or(0.0);
        let keep = svd
            .singular_values
            .iter()
            .take_while(|&&s| s > PINV_RTOL * s1 && s > 0.0)
            .count();
        Ok(Self {
            u: u.columns(0, keep).into_owned(),
            s: svd.singular_values.iter().take(keep).copied().collect(),
            v: v_t.rows(0, keep).adjoint(),
        })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `A^+ = V S^-1 U^H`.
    pub fn pinv(&self) -> CMatrix {
        let mut vs = self.v.clone();
        for (j, s) in self.s.iter().enumerate() {
            vs.column_mut(j).unscale_mut(*s);
        }
        vs * self.u.adjoint()
    }
}

/// Least-squares solve of `a x = b` through the cut-off pseudo-inverse.
pub fn lstsq(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let f = ThinSvd::new(a)?;
    let mut uhb = f.u.adjoint() * b;
    for (j, s) in f.s.iter().enumerate() {
        uhb.row_mut(j).unscale_mut(*s);
    }
    Ok(&f.v * uhb)
}

/// Eigenvalues and unit eigenvectors of a real square matrix.
///
/// Eigenvalues come from the real Schur form; each eigenvector is the right
/// singular vector of `A - lambda I` with the smallest singular value. A
/// cluster of numerically equal eigenvalues takes the trailing singular
/// vectors of one shared factorization so repeated eigenvalues still get
/// independent vectors when the matrix has them.
pub fn eig_real(a: &DMatrix<f64>) -> Result<(Vec<C64>, CMatrix)> {
    let r = a.nrows();
    if r != a.ncols() {
        return Err(Error::Shape("eigendecomposition needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigenproblem".into()));
    }
    let eigs: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let cluster_tol = 1e-8 * scale;
    let ac = to_complex(a);
    let mut vectors = CMatrix::zeros(r, r);
    let mut done = vec![false; r];
    for j in 0..r {
        if done[j] {
            continue;
        }
        let members: Vec<usize> = (j..r)
            .filter(|&k| !done[k] && (eigs[k] - eigs[j]).norm() <= cluster_tol)
            .collect();
        let lambda = members.iter().map(|&k| eigs[k]).sum::<C64>() / members.len() as f64;
        let mut shifted = ac.clone();
        for d in 0..r {
            shifted[(d, d)] -= lambda;
        }
        let svd = svd_sorted(shifted)?;
        let v = svd.v_t.expect("v requested").adjoint();
        for (slot, &k) in members.iter().enumerate() {
            let col = v.column(r - 1 - slot);
            vectors.set_column(k, &col);
            done[k] = true;
        }
    }
    Ok((eigs, vectors))
}

/// Solve the small real symmetric positive definite system, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}
