//! Forecast error reports and the statistics used for eigenvalue uncertainty
//! plots.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridstore::SnapshotMatrix;

pub const DEFAULT_TRIM_LO: f64 = 10.0;
pub const DEFAULT_TRIM_HI: f64 = 90.0;
pub const DEFAULT_BINS: usize = 20;

/// Percentile of ascending-sorted data by linear interpolation between order
/// statistics (rank `p/100 * (len - 1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub day_index: Vec<usize>,
    pub mean_rel_err: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

impl ForecastReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,mean_rel_err,lo95,hi95\n");
        for d in 0..self.day_index.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.day_index[d], self.mean_rel_err[d], self.lo95[d], self.hi95[d]
            ));
        }
        out
    }
}

/// Per-day mean relative error with a 2.5-97.5 percentile band.
///
/// Each cell error is `|x - xhat|` divided by the RMS of the true snapshot
/// it belongs to. Snapshots whose true column is identically zero carry no
/// scale and are left out of their day's sample.
pub fn daily_error_report(
    x_true: &SnapshotMatrix,
    x_hat: &SnapshotMatrix,
    samples_per_day: usize,
) -> Result<ForecastReport> {
    let (truth, hat) = (x_true.values(), x_hat.values());
    if truth.shape() != hat.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", truth.shape(), hat.shape())));
    }
    if samples_per_day == 0 || truth.ncols() % samples_per_day != 0 {
        return Err(Error::Precondition(format!(
            "{} snapshots do not split into whole days of {samples_per_day}",
            truth.ncols()
        )));
    }
    let n = truth.nrows();
    let days = truth.ncols() / samples_per_day;
    let mut report = ForecastReport {
        day_index: Vec::with_capacity(days),
        mean_rel_err: Vec::with_capacity(days),
        lo95: Vec::with_capacity(days),
        hi95: Vec::with_capacity(days),
    };
    for d in 0..days {
        let mut sample = Vec::with_capacity(n * samples_per_day);
        for k in d * samples_per_day..(d + 1) * samples_per_day {
            let rms = truth.column(k).norm() / (n as f64).sqrt();
            if rms == 0.0 {
                continue;
            }
            sample.extend((0..n).map(|i| (truth[(i, k)] - hat[(i, k)]).abs() / rms));
        }
        if sample.is_empty() {
            return Err(Error::Validation(format!(
                "day {d}: every true snapshot is zero, relative error undefined"
            )));
        }
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        let sorted = sorted_copy(&sample);
        report.day_index.push(d);
        report.mean_rel_err.push(mean);
        report.lo95.push(percentile_sorted(&sorted, 2.5));
        report.hi95.push(percentile_sorted(&sorted, 97.5));
    }
    Ok(report)
}

/// Values between the `lo_pct` and `hi_pct` percentiles, inclusive, in their
/// original order.
pub fn trimmed_sample(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<Vec<f64>> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::Precondition(format!(
            "need 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}"
        )));
    }
    if values.len() < 3 {
        return Err(Error::Precondition("trimming needs at least 3 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("cannot trim non-finite values".into()));
    }
    let sorted = sorted_copy(values);
    let lo = percentile_sorted(&sorted, lo_pct);
    let hi = percentile_sorted(&sorted, hi_pct);
    let kept: Vec<f64> = values.iter().copied().filter(|v| lo <= *v && *v <= hi).collect();
    if kept.is_empty() {
        return Err(Error::Validation("trimming removed every value".into()));
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`, normalized to unit area.
    pub fn new(values: &[f64], nbins: usize) -> Result<Self> {
        if nbins == 0 {
            return Err(Error::Precondition("histogram needs at least one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("histogram of non-finite values".into()));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(max > min) {
            return Err(Error::Validation("values have zero spread".into()));
        }
        let width = (max - min) / nbins as f64;
        let mut counts = vec![0usize; nbins];
        for &v in values {
            let b = (((v - min) / width) as usize).min(nbins - 1);
            counts[b] += 1;
        }
        let total = values.len() as f64;
        Ok(Self {
            centers: (0..nbins).map(|b| min + (b as f64 + 0.5) * width).collect(),
            densities: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for (c, d) in self.centers.iter().zip(&self.densities) {
            out.push_str(&format!("{c},{d}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    /// Sum of squared density residuals over the bins.
    pub sse: f64,
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

fn bin_sse(centers: &[f64], densities: &[f64], mu: f64, sigma: f64) -> f64 {
    centers
        .iter()
        .zip(densities)
        .map(|(&x, &d)| (d - normal_pdf(x, mu, sigma)).powi(2))
        .sum()
}

/// Least-squares fit of a normal density to binned densities, by
/// Levenberg-Marquardt in `(mu, ln sigma)` from the given start.
pub fn fit_gaussian_bins(centers: &[f64], densities: &[f64], mu0: f64, sigma0: f64) -> Result<GaussianFit> {
    if centers.len() != densities.len() || centers.is_empty() {
        return Err(Error::Shape("centers and densities must be non-empty and equal length".into()));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::Validation("initial sigma must be positive".into()));
    }
    let mut theta = Vector2::new(mu0, sigma0.ln());
    let mut sse = bin_sse(centers, densities, mu0, sigma0);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (mu, sigma) = (theta[0], theta[1].exp());
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (&x, &d) in centers.iter().zip(densities) {
            let p = normal_pdf(x, mu, sigma);
            let u = (x - mu) / sigma;
            // d pdf / d mu and d pdf / d ln(sigma)
            let grad = Vector2::new(p * u / sigma, p * (u * u - 1.0));
            jtj += grad * grad.transpose();
            jtr += grad * (p - d);
        }
        let mut improved = false;
        let mut step_norm = 0.0;
        for _ in 0..60 {
            let mut lhs = jtj;
            lhs[(0, 0)] += lambda * jtj[(0, 0)].max(1e-300);
            lhs[(1, 1)] += lambda * jtj[(1, 1)].max(1e-300);
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = theta + step;
            let trial_sse = bin_sse(centers, densities, trial[0], trial[1].exp());
            if trial_sse.is_finite() && trial_sse <= sse {
                step_norm = step.norm();
                improved = trial_sse < sse || step_norm == 0.0;
                theta = trial;
                sse = trial_sse;
                lambda = (lambda * 0.1).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !improved || step_norm < 1e-15 * (1.0 + theta.norm()) || sse == 0.0 {
            break;
        }
    }
    Ok(GaussianFit {
        mu: theta[0],
        sigma: theta[1].exp(),
        sse,
    })
}

/// Histogram the values and fit a normal density to the bins, starting from
/// the sample mean and standard deviation.
pub fn gaussian_fit_histogram(values: &[f64], nbins: usize) -> Result<(Histogram, GaussianFit)> {
    if values.len() < nbins {
        return Err(Error::Precondition(format!(
            "{} values is fewer than {nbins} bins",
            values.len()
        )));
    }
    let hist = Histogram::new(values, nbins)?;
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
    let fit = fit_gaussian_bins(&hist.centers, &hist.densities, mean, std)?;
    Ok((hist, fit))
}
