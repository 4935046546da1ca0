//! Local-time alignment and daytime isolation.
//!
//! A field that follows the sun appears in UTC as a wave travelling east to
//! west, which inflates the rank an SVD needs to describe it. Rotating each
//! longitude's series by its local-time offset removes that translation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridstore::{SnapshotMatrix, TimeGrid};

/// Default night threshold, as a fraction of the global max |value|.
pub const DEFAULT_DAY_THRESHOLD: f64 = 1e-3;

/// Per-row left rotations (in samples) applied by [`shift_local_time`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftPlan {
    pub shifts: Vec<usize>,
    pub samples_per_day: usize,
}

impl ShiftPlan {
    /// Row `i` is rotated left by `round(-lon_i / 360 * spd) mod spd` samples,
    /// rounding ties to even. A row at longitude `L` sees local time
    /// `t + L/360`, so this lines every row up with the prime meridian.
    pub fn from_lons(lons: &[f64], samples_per_day: usize) -> Result<Self> {
        if samples_per_day == 0 {
            return Err(Error::Validation("samples_per_day must be >= 1".into()));
        }
        let spd = samples_per_day as i64;
        let shifts = lons
            .iter()
            .map(|lon| {
                let s = -(lon / 360.0 * samples_per_day as f64).round_ties_even() as i64;
                s.rem_euclid(spd) as usize
            })
            .collect();
        Ok(Self {
            shifts,
            samples_per_day,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayMask {
    pub keep: Vec<bool>,
    pub kept_times: TimeGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DaySelect {
    /// Keep columns whose max |value| exceeds `fraction` of the global max |value|.
    Threshold { fraction: f64 },
    /// Keep columns whose within-day sample index lies in `[start, end)`.
    Window {
        start: usize,
        end: usize,
        samples_per_day: usize,
    },
}

fn rotate_rows(values: &DMatrix<f64>, shifts: &[usize], left: bool) -> DMatrix<f64> {
    let m = values.ncols();
    DMatrix::from_fn(values.nrows(), m, |i, k| {
        let s = shifts[i] % m;
        let src = if left { (k + s) % m } else { (k + m - s) % m };
        values[(i, src)]
    })
}

/// Circularly rotate each row so local solar time lines up with UTC at the
/// prime meridian. The time grid is unchanged.
pub fn shift_local_time(
    x: &SnapshotMatrix,
    lons: &[f64],
    samples_per_day: usize,
) -> Result<(SnapshotMatrix, ShiftPlan)> {
    if lons.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} rows but {} longitudes",
            x.nrows(),
            lons.len()
        )));
    }
    if x.ncols() < samples_per_day {
        return Err(Error::Precondition(format!(
            "need at least one day of samples ({samples_per_day}), got {}",
            x.ncols()
        )));
    }
    let plan = ShiftPlan::from_lons(lons, samples_per_day)?;
    let values = rotate_rows(x.values(), &plan.shifts, true);
    Ok((SnapshotMatrix::new(values, x.time().clone())?, plan))
}

/// Exact inverse of [`shift_local_time`].
pub fn unshift_local_time(x: &SnapshotMatrix, plan: &ShiftPlan) -> Result<SnapshotMatrix> {
    if plan.shifts.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} rows but plan has {} shifts",
            x.nrows(),
            plan.shifts.len()
        )));
    }
    let values = rotate_rows(x.values(), &plan.shifts, false);
    SnapshotMatrix::new(values, x.time().clone())
}

/// Drop night columns. The result keeps the original sample times, so its
/// grid is generally non-uniform.
pub fn isolate_daytime(x: &SnapshotMatrix, mode: DaySelect) -> Result<(SnapshotMatrix, DayMask)> {
    let values = x.values();
    let keep: Vec<bool> = match mode {
        DaySelect::Threshold { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Precondition(format!(
                    "threshold fraction must lie in (0, 1), got {fraction}"
                )));
            }
            let global = values.amax();
            let cut = fraction * global;
            values.column_iter().map(|c| c.amax() > cut).collect()
        }
        DaySelect::Window {
            start,
            end,
            samples_per_day,
        } => {
            if !(start < end && end <= samples_per_day) {
                return Err(Error::Precondition(format!(
                    "window [{start}, {end}) invalid for {samples_per_day} samples per day"
                )));
            }
            (0..x.ncols())
                .map(|k| (start..end).contains(&(k % samples_per_day)))
                .collect()
        }
    };
    let indices: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter_map(|(k, &on)| on.then_some(k))
        .collect();
    if indices.is_empty() {
        return Err(Error::Validation("daytime isolation removed every column".into()));
    }
    if indices.len() < 2 {
        return Err(Error::Validation(
            "daytime isolation kept a single column; a time grid needs two".into(),
        ));
    }
    let kept = x.select_columns(&indices)?;
    // select() recomputes uniformity; the contract drops it for isolated data.
    let kept_times = TimeGrid::new(kept.time().times().to_vec())?;
    let mask = DayMask { keep, kept_times };
    Ok((kept, mask))
}
