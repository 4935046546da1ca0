//! Variable projection for sums of complex exponentials sampled at arbitrary
//! times.
//!
//! The model is `X^T ~ T(alpha) B` with `T[k, j] = exp(alpha_j t_k)`. For fixed
//! `alpha` the best `B` is `T^+ X^T`, leaving a residual `(I - T T^+) X^T` that
//! depends on `alpha` alone. That residual is minimized with Levenberg-Marquardt
//! over the stacked real parameters `(Re alpha, Im alpha)`; the eigenvalue
//! constraint is applied by projecting every accepted iterate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridstore::{SnapshotMatrix, TimeGrid};
use crate::linalg::{solve_spd, to_complex, CMatrix, ThinSvd, C64};

/// Largest allowed `Re(alpha) * t` before the basis is considered divergent.
pub const MAX_EXPONENT: f64 = 700.0;

/// Relative residual below which a fit is exact to working precision.
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EigConstraint {
    #[serde(rename = "none")]
    Unconstrained,
    /// `Re(omega) <= 0`.
    #[default]
    #[serde(rename = "lhp")]
    LeftHalfPlane,
    /// `Re(omega) = 0`.
    #[serde(rename = "imag")]
    ImaginaryAxis,
}

impl fmt::Display for EigConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EigConstraint::Unconstrained => "none",
            EigConstraint::LeftHalfPlane => "lhp",
            EigConstraint::ImaginaryAxis => "imag",
        })
    }
}

impl FromStr for EigConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EigConstraint::Unconstrained),
            "lhp" => Ok(EigConstraint::LeftHalfPlane),
            "imag" => Ok(EigConstraint::ImaginaryAxis),
            other => Err(Error::Validation(format!(
                "unknown constraint {other:?}, expected none|lhp|imag"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarProOptions {
    pub max_outer_iters: usize,
    pub lm_lambda0: f64,
    pub lm_scale_up: f64,
    pub lm_scale_down: f64,
    /// Stop when the relative change of the squared residual falls below this.
    pub residual_tol: f64,
    /// Stop when the accepted parameter step is shorter than this.
    pub step_tol: f64,
    pub max_lm_retries: usize,
}

impl Default for VarProOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            lm_lambda0: 1.0,
            lm_scale_up: 2.0,
            lm_scale_down: 0.5,
            residual_tol: 1e-8,
            step_tol: 1e-10,
            max_lm_retries: 30,
        }
    }
}

impl VarProOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid solver options: {}", bad.join(", "))))
        }
    }

    /// Names of every field holding an invalid value.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.max_outer_iters == 0 {
            bad.push("max_outer_iters");
        }
        if !(self.lm_lambda0 > 0.0) {
            bad.push("lm_lambda0");
        }
        if !(self.lm_scale_up > 1.0) {
            bad.push("lm_scale_up");
        }
        if !(self.lm_scale_down > 0.0 && self.lm_scale_down < 1.0) {
            bad.push("lm_scale_down");
        }
        if !(self.residual_tol > 0.0) {
            bad.push("residual_tol");
        }
        if !(self.step_tol > 0.0) {
            bad.push("step_tol");
        }
        if self.max_lm_retries == 0 {
            bad.push("max_lm_retries");
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub converged: bool,
    /// Accepted Levenberg-Marquardt steps.
    pub iterations: usize,
    /// `||X^T - T B||_F / ||X||_F` at the returned parameters.
    pub final_relative_residual: f64,
    /// Eigenvalues sitting on the constraint boundary.
    pub constraint_active_count: usize,
    /// Squared residual at the start and after every accepted step.
    pub residual_history: Vec<f64>,
}

/// `T[k, j] = exp(alpha_j t_k)`.
pub fn eval_basis(alpha: &[C64], t: &[f64]) -> Result<CMatrix> {
    if alpha.is_empty() {
        return Err(Error::Precondition("need at least one exponent".into()));
    }
    let worst = alpha
        .iter()
        .flat_map(|a| t.iter().map(move |&tk| a.re * tk))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > MAX_EXPONENT || worst.is_nan() {
        return Err(Error::BasisOverflow(worst));
    }
    Ok(CMatrix::from_fn(t.len(), alpha.len(), |k, j| {
        (alpha[j] * t[k]).exp()
    }))
}

pub fn project_eigs(alpha: &[C64], c: EigConstraint) -> Vec<C64> {
    alpha.iter().map(|&a| project_one(a, c)).collect()
}

fn project_one(a: C64, c: EigConstraint) -> C64 {
    match c {
        EigConstraint::Unconstrained => a,
        EigConstraint::LeftHalfPlane => C64::new(a.re.min(0.0), a.im),
        EigConstraint::ImaginaryAxis => C64::new(0.0, a.im),
    }
}

fn active_count(alpha: &[C64], c: EigConstraint) -> usize {
    match c {
        EigConstraint::Unconstrained => 0,
        EigConstraint::LeftHalfPlane => alpha.iter().filter(|a| a.re == 0.0).count(),
        EigConstraint::ImaginaryAxis => alpha.len(),
    }
}

/// Everything that depends on `alpha` through the projection onto range(T).
struct Projection {
    basis: CMatrix,
    /// Orthonormal basis of range(T).
    u: CMatrix,
    pinv: CMatrix,
    coeffs: CMatrix,
    residual: CMatrix,
    residual_norm2: f64,
}

impl Projection {
    fn new(alpha: &[C64], t: &[f64], xt: &CMatrix) -> Result<Self> {
        let basis = eval_basis(alpha, t)?;
        let f = ThinSvd::new(&basis)?;
        let pinv = f.pinv();
        let uhx = f.u.adjoint() * xt;
        let coeffs = &pinv * xt;
        let residual = xt - &f.u * uhx;
        let residual_norm2 = residual.norm_squared();
        if !residual_norm2.is_finite() {
            return Err(Error::Numerical("non-finite residual".into()));
        }
        Ok(Self {
            basis,
            u: f.u,
            pinv,
            coeffs,
            residual,
            residual_norm2,
        })
    }

    /// Columns `d_j = t .* exp(alpha_j t)`, the only nonzero column of dT/d(alpha_j).
    fn basis_derivative(&self, t: &[f64]) -> CMatrix {
        let mut d = self.basis.clone();
        for (k, mut row) in d.row_iter_mut().enumerate() {
            row *= C64::new(t[k], 0.0);
        }
        d
    }

    /// Gauss-Newton normal equations `(J^T J, J^T r)` of the real-stacked
    /// residual, assembled from the rank-one structure of each Jacobian column.
    fn normal_equations(&self, t: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.basis.ncols();
        let d = self.basis_derivative(t);
        // a_j = (I - U U^H) d_j
        let a = &d - &self.u * (self.u.adjoint() * &d);
        // c_j = conj(row j of T^+)
        let c = self.pinv.adjoint();
        // g_j = R^T conj(d_j)
        let g = self.residual.transpose() * d.map(|z| z.conj());
        let b = &self.coeffs;

        let aa = (a.adjoint() * &a).component_mul(&(b.map(|z| z.conj()) * b.transpose()));
        let cc = (c.adjoint() * &c).component_mul(&(g.adjoint() * &g));
        let ar = a.adjoint() * &self.residual;

        let mut jtj = DMatrix::<f64>::zeros(2 * r, 2 * r);
        let mut jtr = DVector::<f64>::zeros(2 * r);
        for p in 0..r {
            for q in 0..r {
                let plus = aa[(p, q)] + cc[(p, q)];
                let minus = aa[(p, q)] - cc[(p, q)];
                jtj[(p, q)] = plus.re;
                jtj[(r + p, r + q)] = plus.re;
                jtj[(p, r + q)] = -minus.im;
                jtj[(r + p, q)] = minus.im;
            }
            let proj: C64 = ar
                .row(p)
                .iter()
                .zip(b.row(p).iter())
                .map(|(x, y)| x * y.conj())
                .sum();
            jtr[p] = -proj.re;
            jtr[r + p] = -proj.im;
        }
        (jtj, jtr)
    }
}

fn split(alpha: &[C64]) -> DVector<f64> {
    let r = alpha.len();
    DVector::from_fn(2 * r, |i, _| if i < r { alpha[i].re } else { alpha[i - r].im })
}

fn join(theta: &DVector<f64>) -> Vec<C64> {
    let r = theta.len() / 2;
    (0..r).map(|j| C64::new(theta[j], theta[r + j])).collect()
}

/// Residual `(I - T T^+) X^T` at `alpha`, for finite-difference checks.
pub fn projected_residual(alpha: &[C64], t: &[f64], xt: &CMatrix) -> Result<CMatrix> {
    Ok(Projection::new(alpha, t, xt)?.residual)
}

/// Dense variable-projection Jacobian of [`projected_residual`]: `2r` complex
/// `m x n` blocks, derivatives with respect to `Re alpha_j` then `Im alpha_j`.
///
/// Column for real direction `s` with `dT/ds` nonzero only in column `j`:
/// `-[(I - T T^+) (dT/ds) T^+ X^T + (T^+)^H (dT/ds)^H (I - T T^+) X^T]`.
/// Built from full matrix products; intended for small instances.
pub fn jacobian(alpha: &[C64], t: &[f64], xt: &CMatrix) -> Result<Vec<CMatrix>> {
    let p = Projection::new(alpha, t, xt)?;
    let m = t.len();
    let r = alpha.len();
    let d = p.basis_derivative(t);
    let perp = CMatrix::identity(m, m) - &p.u * p.u.adjoint();
    let mut cols = Vec::with_capacity(2 * r);
    for unit in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
        for j in 0..r {
            let mut dt = CMatrix::zeros(m, r);
            dt.set_column(j, &(d.column(j) * unit));
            let first = &perp * &dt * &p.coeffs;
            let second = p.pinv.adjoint() * dt.adjoint() * &p.residual;
            cols.push(-(first + second));
        }
    }
    Ok(cols)
}

/// Real Gauss-Newton matrices from the structured assembly; exposed so tests
/// can compare them with the dense [`jacobian`].
pub fn normal_equations(alpha: &[C64], t: &[f64], xt: &CMatrix) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = Projection::new(alpha, t, xt)?;
    Ok(p.normal_equations(t))
}

#[derive(Debug, Clone)]
pub struct VarProFit {
    pub alpha: Vec<C64>,
    /// `r x n` coefficients, `X^T ~ T(alpha) B`.
    pub coeffs: CMatrix,
    pub info: SolveInfo,
}

/// Minimize `||X^T - T(alpha) B||_F` over `alpha` and `B` on the data's own
/// time grid, starting from `alpha0`.
pub fn solve_varpro(
    x: &SnapshotMatrix,
    alpha0: &[C64],
    c: EigConstraint,
    opts: &VarProOptions,
) -> Result<VarProFit> {
    solve_on_grid(&to_complex(x.values()).transpose(), x.time(), alpha0, c, opts)
}

/// Real-part coordinates pinned by the constraint for this step: every one
/// under `ImaginaryAxis`, and under `LeftHalfPlane` those on the boundary
/// whose descent direction points out of the feasible set.
fn frozen_coords(alpha: &[C64], jtr: &DVector<f64>, c: EigConstraint) -> Vec<bool> {
    let r = alpha.len();
    (0..2 * r)
        .map(|i| {
            i < r
                && match c {
                    EigConstraint::Unconstrained => false,
                    EigConstraint::ImaginaryAxis => true,
                    EigConstraint::LeftHalfPlane => alpha[i].re >= 0.0 && jtr[i] < 0.0,
                }
        })
        .collect()
}

pub(crate) fn solve_on_grid(
    xt: &CMatrix,
    time: &TimeGrid,
    alpha0: &[C64],
    c: EigConstraint,
    opts: &VarProOptions,
) -> Result<VarProFit> {
    opts.validate()?;
    let t = time.times();
    let (m, n) = (xt.nrows(), xt.ncols());
    let r = alpha0.len();
    if r == 0 || r > n.min(m) {
        return Err(Error::Precondition(format!(
            "rank {r} must satisfy 1 <= r <= min(n, m) = {}",
            n.min(m)
        )));
    }
    if alpha0.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
        return Err(Error::Precondition("alpha0 must be finite".into()));
    }
    let data_norm2 = xt.norm_squared();
    let rel = |f: f64| if data_norm2 > 0.0 { (f / data_norm2).sqrt() } else { f.sqrt() };

    let mut alpha = project_eigs(alpha0, c);
    let mut state = Projection::new(&alpha, t, xt)?;
    let mut history = vec![state.residual_norm2];
    let mut lambda = opts.lm_lambda0;
    let mut iterations = 0;
    let mut converged = rel(state.residual_norm2) < RESIDUAL_FLOOR;

    while !converged && iterations < opts.max_outer_iters {
        let (jtj, jtr) = state.normal_equations(t);
        let dmax = jtj.diagonal().max();
        let floor = (dmax * 1e-12).max(f64::MIN_POSITIVE);
        let scale = jtj.diagonal().map(|v| v.max(floor));
        let theta = split(&alpha);
        let frozen = frozen_coords(&alpha, &jtr, c);

        let mut accepted = None;
        for _ in 0..opts.max_lm_retries {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += lambda * scale[i];
            }
            for (i, _) in frozen.iter().enumerate().filter(|f| *f.1) {
                lhs.row_mut(i).fill(0.0);
                lhs.column_mut(i).fill(0.0);
                lhs[(i, i)] = 1.0;
            }
            let jtr = DVector::from_fn(jtr.len(), |i, _| if frozen[i] { 0.0 } else { jtr[i] });
            let step = solve_spd(&lhs, &(-&jtr)).filter(|s| s.iter().all(|v| v.is_finite()));
            if let Some(step) = step {
                let trial = project_eigs(&join(&(&theta + &step)), c);
                if let Ok(next) = Projection::new(&trial, t, xt) {
                    if next.residual_norm2 < state.residual_norm2 {
                        accepted = Some((trial, next));
                        lambda *= opts.lm_scale_down;
                        break;
                    }
                }
            }
            lambda *= opts.lm_scale_up;
        }

        let Some((trial, next)) = accepted else {
            break;
        };
        iterations += 1;
        let step_norm = (split(&trial) - &theta).norm();
        let change = (state.residual_norm2 - next.residual_norm2) / state.residual_norm2;
        alpha = trial;
        state = next;
        history.push(state.residual_norm2);
        converged = change < opts.residual_tol
            || step_norm < opts.step_tol
            || rel(state.residual_norm2) < RESIDUAL_FLOOR;
    }

    Ok(VarProFit {
        info: SolveInfo {
            converged,
            iterations,
            final_relative_residual: rel(state.residual_norm2),
            constraint_active_count: active_count(&alpha, c),
            residual_history: history,
        },
        alpha,
        coeffs: state.coeffs,
    })
}
