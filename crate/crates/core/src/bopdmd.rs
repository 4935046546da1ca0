//! Bagging ensembles of optimized DMD fits.
//!
//! A reference fit on all snapshots seeds `K` fits on random column subsets.
//! Each trial is aligned to the reference eigenvalues and the ensemble is
//! summarized by per-index means and variances of eigenvalues, amplitudes and
//! modes.

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridstore::SnapshotMatrix;
use crate::linalg::{CMatrix, C64};
use crate::model::DmdModel;
use crate::optdmd::fit_optdmd;
use crate::varpro::{EigConstraint, VarProOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagSpec {
    pub trials: usize,
    /// Snapshots per bag; must be smaller than the total.
    pub bag_size: usize,
    pub seed: u64,
}

impl BagSpec {
    pub fn validate(&self, m: usize, r: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Precondition("ensemble needs at least one trial".into()));
        }
        if self.bag_size >= m {
            return Err(Error::Precondition(format!(
                "bag size {} must be smaller than the {m} snapshots",
                self.bag_size
            )));
        }
        if self.bag_size < r + 1 {
            return Err(Error::Precondition(format!(
                "bag size {} too small for rank {r}",
                self.bag_size
            )));
        }
        Ok(())
    }

    /// Independent random stream for trial `k`, fixed by the master seed.
    pub fn trial_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        rng
    }
}

/// `p` distinct column indices out of `m`, sorted ascending.
pub fn draw_bag<R: Rng + ?Sized>(m: usize, p: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p >= m {
        return Err(Error::Precondition(format!("cannot choose {p} of {m} snapshots (p < m)")));
    }
    let mut picked = index::sample(rng, m, p).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Minimum-cost matching of trial eigenvalues to reference eigenvalues under
/// `sum |trial - reference|`, by the Hungarian method. Returns `perm` with
/// `trial[perm[j]]` matched to `reference[j]`.
pub fn align_to_reference(trial: &[C64], reference: &[C64]) -> Vec<usize> {
    assert_eq!(trial.len(), reference.len(), "eigenvalue counts differ");
    let r = reference.len();
    // rows are reference eigenvalues, columns trial eigenvalues; 1-based with
    // a virtual column 0 as in the textbook potentials formulation
    let cost = |j: usize, i: usize| (trial[i - 1] - reference[j - 1]).norm();
    let mut u = vec![0.0; r + 1];
    let mut v = vec![0.0; r + 1];
    let mut owner = vec![0usize; r + 1];
    let mut way = vec![0usize; r + 1];
    for row in 1..=r {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; r + 1];
        let mut used = vec![false; r + 1];
        loop {
            used[col0] = true;
            let row0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=r {
                if used[col] {
                    continue;
                }
                let cur = cost(row0, col) - u[row0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=r {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        while col0 != 0 {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
        }
    }
    let mut perm = vec![0; r];
    for col in 1..=r {
        perm[owner[col] - 1] = col - 1;
    }
    perm
}

fn permuted(model: &DmdModel, perm: &[usize]) -> DmdModel {
    let mut out = model.clone();
    out.eigs = perm.iter().map(|&i| model.eigs[i]).collect();
    out.amps = perm.iter().map(|&i| model.amps[i]).collect();
    out.modes = model.modes.select_columns(perm);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub bag: Vec<usize>,
    /// Fitted model aligned to the reference; `None` when the fit errored.
    pub model: Option<DmdModel>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub reference: DmdModel,
    pub trials: Vec<Trial>,
}

impl Ensemble {
    pub fn converged_models(&self) -> impl Iterator<Item = &DmdModel> {
        self.trials
            .iter()
            .filter(|t| t.converged)
            .filter_map(|t| t.model.as_ref())
    }

    /// `trial,j,re,im,converged` rows for every fitted trial eigenvalue.
    pub fn eigs_csv(&self) -> String {
        let mut out = String::from("trial,j,re,im,converged\n");
        for (k, trial) in self.trials.iter().enumerate() {
            if let Some(model) = &trial.model {
                for (j, e) in model.eigs.iter().enumerate() {
                    out.push_str(&format!("{k},{j},{},{},{}\n", e.re, e.im, trial.converged));
                }
            }
        }
        out
    }
}

pub fn fit_ensemble(
    x: &SnapshotMatrix,
    r: usize,
    c: EigConstraint,
    spec: &BagSpec,
    opts: &VarProOptions,
) -> Result<Ensemble> {
    spec.validate(x.ncols(), r)?;
    let (reference, _) = fit_optdmd(x, r, c, opts, None)?;
    let trials: Vec<Trial> = (0..spec.trials)
        .into_par_iter()
        .map(|k| run_trial(x, r, c, spec, opts, &reference, k))
        .collect::<Result<_>>()?;
    let ensemble = Ensemble { reference, trials };
    let usable = ensemble.converged_models().count();
    if usable < 2 {
        return Err(Error::Precondition(format!(
            "ensemble statistics need at least 2 converged trials, got {usable}"
        )));
    }
    Ok(ensemble)
}

fn run_trial(
    x: &SnapshotMatrix,
    r: usize,
    c: EigConstraint,
    spec: &BagSpec,
    opts: &VarProOptions,
    reference: &DmdModel,
    k: usize,
) -> Result<Trial> {
    let mut rng = spec.trial_rng(k);
    let bag = draw_bag(x.ncols(), spec.bag_size, &mut rng)?;
    let sub = x.select_columns(&bag)?;
    match fit_optdmd(&sub, r, c, opts, Some(&reference.eigs)) {
        Ok((model, info)) => {
            let perm = align_to_reference(&model.eigs, &reference.eigs);
            Ok(Trial {
                bag,
                model: Some(permuted(&model, &perm)),
                converged: info.converged,
            })
        }
        Err(_) => Ok(Trial {
            bag,
            model: None,
            converged: false,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub trials_used: usize,
    pub mean_eigs: Vec<C64>,
    /// `<|omega - <omega>|^2>` with divisor equal to the trial count.
    pub var_eigs: Vec<f64>,
    pub mean_amps: Vec<C64>,
    pub var_amps: Vec<f64>,
    pub mean_modes: CMatrix,
    pub var_modes: nalgebra::DMatrix<f64>,
}

fn mean_var<'a>(values: impl Iterator<Item = &'a C64> + Clone, count: f64) -> (C64, f64) {
    // Accumulate deviations from the first sample so identical samples give
    // exactly that sample back and exactly zero variance.
    let pivot = *values.clone().next().expect("non-empty sample");
    let mean = pivot + values.clone().map(|v| v - pivot).sum::<C64>() / count;
    let var = values.map(|v| (v - mean).norm_sqr()).sum::<f64>() / count;
    (mean, var)
}

pub fn ensemble_stats(e: &Ensemble) -> Result<EnsembleStats> {
    let models: Vec<&DmdModel> = e.converged_models().collect();
    if models.len() < 2 {
        return Err(Error::Precondition(format!(
            "ensemble statistics need at least 2 converged trials, got {}",
            models.len()
        )));
    }
    let count = models.len() as f64;
    let r = e.reference.rank();
    let n = e.reference.nrows();
    let mut mean_eigs = Vec::with_capacity(r);
    let mut var_eigs = Vec::with_capacity(r);
    let mut mean_amps = Vec::with_capacity(r);
    let mut var_amps = Vec::with_capacity(r);
    for j in 0..r {
        let (m, v) = mean_var(models.iter().map(|m| &m.eigs[j]), count);
        mean_eigs.push(m);
        var_eigs.push(v);
        let (m, v) = mean_var(models.iter().map(|m| &m.amps[j]), count);
        mean_amps.push(m);
        var_amps.push(v);
    }
    let mut mean_modes = CMatrix::zeros(n, r);
    let mut var_modes = nalgebra::DMatrix::zeros(n, r);
    for i in 0..n {
        for j in 0..r {
            let (m, v) = mean_var(models.iter().map(|m| &m.modes[(i, j)]), count);
            mean_modes[(i, j)] = m;
            var_modes[(i, j)] = v;
        }
    }
    Ok(EnsembleStats {
        trials_used: models.len(),
        mean_eigs,
        var_eigs,
        mean_amps,
        var_amps,
        mean_modes,
        var_modes,
    })
}

impl EnsembleStats {
    pub fn to_json(&self) -> serde_json::Value {
        let pair = |z: &C64| [z.re, z.im];
        serde_json::json!({
            "trials_used": self.trials_used,
            "mean_eigs": self.mean_eigs.iter().map(pair).collect::<Vec<_>>(),
            "var_eigs": self.var_eigs,
            "mean_amps": self.mean_amps.iter().map(pair).collect::<Vec<_>>(),
            "var_amps": self.var_amps,
            "mean_modes": self.mean_modes.row_iter()
                .map(|row| row.iter().map(pair).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "var_modes": self.var_modes.row_iter()
                .map(|row| row.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}
