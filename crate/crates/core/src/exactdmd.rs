//! Exact DMD: the rank-r best-fit one-step operator `X2 ~ A X1` on a uniform
//! grid, reported in continuous time.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gridstore::SnapshotMatrix;
use crate::linalg::{eig_real, lstsq, svd_sorted_real, to_complex, CMatrix, C64, PINV_RTOL};
use crate::model::{normalize_columns, DmdModel};
use crate::varpro::{eval_basis, EigConstraint};

/// Exact DMD operator pieces before conversion to continuous time.
#[derive(Debug, Clone)]
pub struct OneStep {
    /// Discrete-time eigenvalues of the projected operator.
    pub lambdas: Vec<C64>,
    /// Unnormalized exact modes `X2 V S^-1 W`.
    pub modes: CMatrix,
}

/// Rank-`r` projected operator and exact modes of the one-step regression.
pub fn one_step(x: &DMatrix<f64>, r: usize) -> Result<OneStep> {
    let m = x.ncols();
    let n = x.nrows();
    if r == 0 || m < 2 || r > n.min(m - 1) {
        return Err(Error::Precondition(format!(
            "rank {r} must satisfy 1 <= r <= min(n, m - 1) = {}",
            n.min(m.saturating_sub(1))
        )));
    }
    let x1 = x.columns(0, m - 1).into_owned();
    let x2 = x.columns(1, m - 1).into_owned();
    let svd = svd_sorted_real(x1)?;
    let s = &svd.singular_values;
    let ratio = if s[0] > 0.0 { s[r - 1] / s[0] } else { 0.0 };
    if !(ratio >= PINV_RTOL) {
        return Err(Error::RankDeficient { rank: r, ratio });
    }
    let u = svd.u.expect("u requested").columns(0, r).into_owned();
    let mut v_sinv = svd.v_t.expect("v requested").rows(0, r).transpose();
    for j in 0..r {
        v_sinv.column_mut(j).unscale_mut(s[j]);
    }
    let x2_v_sinv = &x2 * v_sinv;
    let atilde = u.transpose() * &x2_v_sinv;
    let (lambdas, w) = eig_real(&atilde)?;
    let modes = to_complex(&x2_v_sinv) * w;
    Ok(OneStep { lambdas, modes })
}

/// Fit exact DMD of rank `r`. Amplitudes are the least-squares fit of the
/// exponential model over every snapshot.
pub fn fit_exact(x: &SnapshotMatrix, r: usize) -> Result<DmdModel> {
    let dt = x.time().uniform_dt().ok_or(Error::NonUniformTime)?;
    let step = one_step(x.values(), r)?;
    let mut warnings = Vec::new();
    let mut eigs = Vec::with_capacity(r);
    for (j, lambda) in step.lambdas.iter().enumerate() {
        if lambda.norm() == 0.0 {
            return Err(Error::Numerical(format!(
                "discrete eigenvalue {j} is exactly zero; no continuous-time logarithm"
            )));
        }
        let omega = lambda.ln() / dt;
        if omega.im.abs() * dt > PI - 1e-9 {
            warnings.push(format!(
                "eigenvalue {j} sits at the Nyquist limit (|Im omega| dt = {})",
                omega.im.abs() * dt
            ));
        }
        eigs.push(omega);
    }
    let (modes, _) = normalize_columns(&step.modes);
    let amps = fit_amplitudes(&modes, &eigs, x)?;
    let mut model = DmdModel::new(
        modes,
        eigs,
        amps,
        (x.time().first(), x.time().last()),
        EigConstraint::Unconstrained,
        true,
    )?;
    model.warnings = warnings;
    Ok(model)
}

/// Least-squares amplitudes `b` minimizing `||X - Phi diag(b) T^T||_F` for fixed
/// modes and eigenvalues.
pub fn fit_amplitudes(modes: &CMatrix, eigs: &[C64], x: &SnapshotMatrix) -> Result<Vec<C64>> {
    let basis = eval_basis(eigs, x.time().times())?;
    let gram = (modes.adjoint() * modes).component_mul(&(basis.adjoint() * &basis));
    let proj = modes.adjoint() * to_complex(x.values()) * basis.map(|z| z.conj());
    let rhs = CMatrix::from_fn(eigs.len(), 1, |p, _| proj[(p, p)]);
    let b = lstsq(&gram, &rhs)?;
    Ok(b.column(0).iter().copied().collect())
}
