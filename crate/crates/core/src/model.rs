//! The fitted triple `x(t) = sum_j b_j phi_j exp(omega_j t)` and its JSON form.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridstore::{SnapshotMatrix, TimeGrid};
use crate::linalg::{CMatrix, C64};
use crate::varpro::{eval_basis, EigConstraint};

const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DmdModel {
    /// `n x r`, unit 2-norm columns.
    pub modes: CMatrix,
    /// Continuous-time eigenvalues, 1/day.
    pub eigs: Vec<C64>,
    pub amps: Vec<C64>,
    pub train_span: (f64, f64),
    pub constraint: EigConstraint,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl DmdModel {
    pub fn new(
        modes: CMatrix,
        eigs: Vec<C64>,
        amps: Vec<C64>,
        train_span: (f64, f64),
        constraint: EigConstraint,
        converged: bool,
    ) -> Result<Self> {
        let model = Self {
            modes,
            eigs,
            amps,
            train_span,
            constraint,
            converged,
            warnings: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Split scaled mode columns `b_j phi_j` into unit modes and amplitudes.
    ///
    /// The phase of each mode is fixed so that its largest-magnitude entry is
    /// real and positive; the remaining phase goes into the amplitude.
    pub fn from_scaled_modes(
        scaled: &CMatrix,
        eigs: Vec<C64>,
        train_span: (f64, f64),
        constraint: EigConstraint,
        converged: bool,
    ) -> Result<Self> {
        let (modes, amps) = normalize_columns(scaled);
        Self::new(modes, eigs, amps, train_span, constraint, converged)
    }

    pub fn rank(&self) -> usize {
        self.eigs.len()
    }

    pub fn nrows(&self) -> usize {
        self.modes.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.eigs.len();
        if r == 0 {
            return Err(Error::Validation("model rank must be >= 1".into()));
        }
        if self.amps.len() != r || self.modes.ncols() != r {
            return Err(Error::Validation(format!(
                "inconsistent model: {} eigs, {} amps, {} modes",
                r,
                self.amps.len(),
                self.modes.ncols()
            )));
        }
        for (j, col) in self.modes.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!(
                    "mode {j} has norm {}, expected 1",
                    col.norm()
                )));
            }
        }
        Ok(())
    }

    /// Whether the eigenvalue multiset is closed under conjugation within `tol`.
    pub fn is_conjugate_closed(&self, tol: f64) -> bool {
        let mut used = vec![false; self.eigs.len()];
        for (i, e) in self.eigs.iter().enumerate() {
            if used[i] {
                continue;
            }
            used[i] = true;
            if e.im.abs() <= tol {
                continue;
            }
            let partner = (0..self.eigs.len())
                .filter(|&k| !used[k])
                .min_by(|&a, &b| {
                    let da = (self.eigs[a] - e.conj()).norm();
                    let db = (self.eigs[b] - e.conj()).norm();
                    da.total_cmp(&db)
                });
            match partner {
                Some(k) if (self.eigs[k] - e.conj()).norm() <= tol => used[k] = true,
                _ => return false,
            }
        }
        true
    }

    /// Complex `n x m` prediction `Phi diag(b) T(omega)^T`.
    pub fn evaluate_complex(&self, t: &[f64]) -> Result<CMatrix> {
        let basis = eval_basis(&self.eigs, t)?;
        let mut scaled = self.modes.clone();
        for (j, b) in self.amps.iter().enumerate() {
            let mut col = scaled.column_mut(j);
            col *= *b;
        }
        Ok(scaled * basis.transpose())
    }
}

pub(crate) fn normalize_columns(scaled: &CMatrix) -> (CMatrix, Vec<C64>) {
    let n = scaled.nrows();
    let mut modes = CMatrix::zeros(n, scaled.ncols());
    let mut amps = Vec::with_capacity(scaled.ncols());
    for (j, col) in scaled.column_iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            modes[(0, j)] = C64::new(1.0, 0.0);
            amps.push(C64::new(0.0, 0.0));
            continue;
        }
        let pivot = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let phase = col[pivot] / col[pivot].norm();
        let amp = phase * norm;
        for i in 0..n {
            modes[(i, j)] = col[i] / amp;
        }
        // Re-normalize against rounding in the division.
        let unit = modes.column(j).norm();
        modes.column_mut(j).unscale_mut(unit);
        amps.push(amp * unit);
    }
    (modes, amps)
}

/// Real part of the model at the given times; times past `train_span` are a forecast.
pub fn evaluate(model: &DmdModel, t: &TimeGrid) -> Result<SnapshotMatrix> {
    let z = model.evaluate_complex(t.times())?;
    SnapshotMatrix::new(z.map(|v| v.re), t.clone())
}

/// `||X - Xhat||_F / ||X||_F`.
pub fn relative_error(x: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let denom = x.norm();
    if denom == 0.0 {
        return Err(Error::Validation(
            "relative error undefined for an all-zero reference".into(),
        ));
    }
    Ok((x - xhat).norm() / denom)
}

/// Minimum over matchings of `sum |a_i - b_pi(i)|`, by exhaustive search.
/// Used to score eigenvalue recovery; fine up to rank 8 or so.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len(), "multiset sizes differ");
    fn go(a: &[C64], b: &[C64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if i == a.len() {
            *best = acc;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc + (a[i] - b[j]).norm(), best);
                used[j] = false;
            }
        }
    }
    // a greedy matching bounds the search from the start
    let mut used = vec![false; b.len()];
    let mut best = 0.0;
    for x in a {
        let (j, d) = (0..b.len())
            .filter(|&j| !used[j])
            .map(|j| (j, (x - b[j]).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal sizes");
        used[j] = true;
        best += d;
    }
    best *= 1.0 + 1e-12;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    rank: usize,
    eigs: Vec<[f64; 2]>,
    amps: Vec<[f64; 2]>,
    modes: Vec<Vec<[f64; 2]>>,
    train_span: [f64; 2],
    constraint: EigConstraint,
    converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn pair(z: &C64) -> [f64; 2] {
    [z.re, z.im]
}

fn unpair(p: &[f64; 2]) -> C64 {
    C64::new(p[0], p[1])
}

impl DmdModel {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = ModelJson {
            rank: self.rank(),
            eigs: self.eigs.iter().map(pair).collect(),
            amps: self.amps.iter().map(pair).collect(),
            modes: self
                .modes
                .row_iter()
                .map(|row| row.iter().map(pair).collect())
                .collect(),
            train_span: [self.train_span.0, self.train_span.1],
            constraint: self.constraint,
            converged: self.converged,
            warnings: self.warnings.clone(),
        };
        serde_json::to_value(doc).expect("model serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: ModelJson = serde_json::from_value(value)
            .map_err(|e| Error::Validation(format!("malformed model json: {e}")))?;
        let n = doc.modes.len();
        if doc.modes.iter().any(|row| row.len() != doc.rank) || doc.eigs.len() != doc.rank {
            return Err(Error::Validation("model json shape does not match rank".into()));
        }
        let modes = CMatrix::from_fn(n, doc.rank, |i, j| unpair(&doc.modes[i][j]));
        let mut model = Self::new(
            modes,
            doc.eigs.iter().map(unpair).collect(),
            doc.amps.iter().map(unpair).collect(),
            (doc.train_span[0], doc.train_span[1]),
            doc.constraint,
            doc.converged,
        )?;
        model.warnings = doc.warnings;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json()).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let value = serde_json::from_slice(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(value)
    }
}
