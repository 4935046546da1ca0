//! Optimized DMD: fit the exponential model directly over all snapshots by
//! variable projection, with optional eigenvalue constraints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exactdmd::fit_exact;
use crate::gridstore::SnapshotMatrix;
use crate::linalg::C64;
use crate::model::{evaluate, relative_error, DmdModel};
use crate::varpro::{solve_varpro, EigConstraint, SolveInfo, VarProOptions};

/// Default relative-improvement threshold for [`select_rank`].
pub const DEFAULT_FLAT_TOL: f64 = 0.02;

/// Eigenvalues to start the solver from: exact DMD on the data, or on its
/// longest uniformly sampled prefix when the grid is irregular.
pub fn initial_eigs(x: &SnapshotMatrix, r: usize) -> Result<Vec<C64>> {
    let source = if x.time().uniform_dt().is_some() {
        x.clone()
    } else {
        let prefix = x.time().uniform_prefix_len();
        if prefix < r + 1 {
            return Err(Error::Initialization(format!(
                "uniform prefix has {prefix} samples, rank {r} needs {}",
                r + 1
            )));
        }
        x.leading_columns(prefix)?
    };
    fit_exact(&source, r)
        .map(|m| m.eigs)
        .map_err(|e| Error::Initialization(format!("exact DMD seed failed: {e}")))
}

pub fn fit_optdmd(
    x: &SnapshotMatrix,
    r: usize,
    c: EigConstraint,
    opts: &VarProOptions,
    alpha0: Option<&[C64]>,
) -> Result<(DmdModel, SolveInfo)> {
    let (n, m) = (x.nrows(), x.ncols());
    if r == 0 || r > n.min(m.saturating_sub(1)) {
        return Err(Error::Precondition(format!(
            "rank {r} must satisfy 1 <= r <= min(n, m - 1) = {}",
            n.min(m.saturating_sub(1))
        )));
    }
    let seed = match alpha0 {
        Some(a) if a.len() != r => {
            return Err(Error::Precondition(format!(
                "alpha0 has {} entries, rank is {r}",
                a.len()
            )))
        }
        Some(a) => a.to_vec(),
        None => initial_eigs(x, r)?,
    };
    let fit = solve_varpro(x, &seed, c, opts)?;
    let scaled = fit.coeffs.transpose();
    let model = DmdModel::from_scaled_modes(
        &scaled,
        fit.alpha,
        (x.time().first(), x.time().last()),
        c,
        fit.info.converged,
    )?;
    Ok((model, fit.info))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub ranks: Vec<usize>,
    /// In-sample Frobenius relative error; `+inf` where the fit failed.
    pub rel_errors: Vec<f64>,
    pub converged_flags: Vec<bool>,
}

impl ErrorCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,rel_error,converged\n");
        for ((r, e), c) in self.ranks.iter().zip(&self.rel_errors).zip(&self.converged_flags) {
            out.push_str(&format!("{r},{e},{c}\n"));
        }
        out
    }
}

/// Fit every rank from scratch and record its reconstruction error. Ranks run
/// in parallel; each is deterministic so the curve matches a sequential run.
pub fn rank_scan(
    x: &SnapshotMatrix,
    ranks: &[usize],
    c: EigConstraint,
    opts: &VarProOptions,
) -> Result<ErrorCurve> {
    if ranks.is_empty() {
        return Err(Error::Precondition("rank scan needs at least one rank".into()));
    }
    if ranks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("ranks must be strictly increasing".into()));
    }
    let results: Vec<(f64, bool)> = ranks
        .par_iter()
        .map(|&r| {
            let fitted = fit_optdmd(x, r, c, opts, None).and_then(|(model, info)| {
                let xhat = evaluate(&model, x.time())?;
                Ok((relative_error(x.values(), xhat.values())?, info.converged))
            });
            fitted.unwrap_or((f64::INFINITY, false))
        })
        .collect();
    Ok(ErrorCurve {
        ranks: ranks.to_vec(),
        rel_errors: results.iter().map(|p| p.0).collect(),
        converged_flags: results.iter().map(|p| p.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankChoice {
    pub rank: usize,
    /// Set when the curve never flattened and the largest rank was returned.
    pub no_elbow: bool,
}

/// Elbow of an error curve: the smallest converged rank after which each
/// further step lowers the relative error by less than `flat_tol`.
pub fn select_rank(curve: &ErrorCurve, flat_tol: f64) -> Result<RankChoice> {
    let pts: Vec<(usize, f64)> = curve
        .ranks
        .iter()
        .zip(&curve.rel_errors)
        .zip(&curve.converged_flags)
        .filter(|((_, e), &ok)| ok && e.is_finite())
        .map(|((&r, &e), _)| (r, e))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Precondition(
            "rank selection needs at least two converged ranks".into(),
        ));
    }
    for i in 0..pts.len() - 1 {
        if pts[i..].windows(2).all(|w| w[0].1 - w[1].1 < flat_tol) {
            return Ok(RankChoice {
                rank: pts[i].0,
                no_elbow: false,
            });
        }
    }
    Ok(RankChoice {
        rank: pts[pts.len() - 1].0,
        no_elbow: true,
    })
}
