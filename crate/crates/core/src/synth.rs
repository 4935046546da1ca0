//! Ground-truth generators: planted exponential mixtures with known modes,
//! eigenvalues and amplitudes, and a day/night field that travels with the sun.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridstore::{DataKind, GridMeta, SnapshotMatrix, SnapshotSet, TimeGrid};
use crate::linalg::{CMatrix, C64};
use crate::model::DmdModel;
use crate::varpro::EigConstraint;

const CONJ_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub n: usize,
    /// Conjugate-closed so the generated data is real.
    pub eigs: Vec<C64>,
    pub mode_seed: u64,
    pub amp_seed: u64,
    pub noise_seed: u64,
    /// Noise standard deviation as a fraction of the clean signal RMS.
    pub noise_sigma: f64,
    pub times: TimeGrid,
}

/// Indices grouped as real singletons `[j]` or conjugate pairs `[j, k]` with
/// `Im eigs[j] > 0`.
fn conjugate_groups(eigs: &[C64]) -> Result<Vec<Vec<usize>>> {
    let mut used = vec![false; eigs.len()];
    let mut groups = Vec::new();
    for j in 0..eigs.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        if eigs[j].im.abs() <= CONJ_TOL {
            groups.push(vec![j]);
            continue;
        }
        let partner = (0..eigs.len())
            .find(|&k| !used[k] && (eigs[k] - eigs[j].conj()).norm() <= CONJ_TOL)
            .ok_or_else(|| {
                Error::Validation(format!("eigenvalue {} has no conjugate partner", eigs[j]))
            })?;
        used[partner] = true;
        if eigs[j].im > 0.0 {
            groups.push(vec![j, partner]);
        } else {
            groups.push(vec![partner, j]);
        }
    }
    Ok(groups)
}

/// Data `Re(Phi diag(b) exp(Omega t)) + noise` and the exact model behind it.
pub fn gen_exponential_mixture(spec: &MixtureSpec) -> Result<(SnapshotMatrix, DmdModel)> {
    if spec.n == 0 || spec.eigs.is_empty() {
        return Err(Error::Validation("mixture needs n >= 1 and at least one eigenvalue".into()));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::Validation("noise_sigma must be >= 0".into()));
    }
    let groups = conjugate_groups(&spec.eigs)?;
    let r = spec.eigs.len();
    let n = spec.n;
    let mut mode_rng = ChaCha8Rng::seed_from_u64(spec.mode_seed);
    let mut amp_rng = ChaCha8Rng::seed_from_u64(spec.amp_seed);
    let mut modes = CMatrix::zeros(n, r);
    let mut amps = vec![C64::new(0.0, 0.0); r];
    for group in &groups {
        let real = group.len() == 1;
        let mut v: Vec<C64> = (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut mode_rng);
                let im: f64 = if real { 0.0 } else { StandardNormal.sample(&mut mode_rng) };
                C64::new(re, im)
            })
            .collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= norm);
        let magnitude = amp_rng.random_range(0.5..1.5);
        let amp = if real {
            let sign = if amp_rng.random_bool(0.5) { 1.0 } else { -1.0 };
            C64::new(sign * magnitude, 0.0)
        } else {
            C64::from_polar(magnitude, amp_rng.random_range(0.0..2.0 * PI))
        };
        for (i, z) in v.iter().enumerate() {
            modes[(i, group[0])] = *z;
        }
        amps[group[0]] = amp;
        if let [_, k] = group[..] {
            for (i, z) in v.iter().enumerate() {
                modes[(i, k)] = z.conj();
            }
            amps[k] = amp.conj();
        }
    }
    let times = &spec.times;
    let truth = DmdModel::new(
        modes,
        spec.eigs.clone(),
        amps,
        (times.first(), times.last()),
        EigConstraint::Unconstrained,
        true,
    )?;
    let clean = truth.evaluate_complex(times.times())?.map(|z| z.re);
    let mut values = clean;
    if spec.noise_sigma > 0.0 {
        let rms = (values.norm_squared() / values.len() as f64).sqrt();
        let scale = spec.noise_sigma * rms;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            *v += scale * e;
        }
    }
    Ok((SnapshotMatrix::new(values, times.clone())?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayProfile {
    HalfSine,
    Square,
}

#[derive(Debug, Clone)]
pub struct DayNightSpec {
    pub lons: Vec<f64>,
    pub lat: f64,
    pub samples_per_day: usize,
    pub n_days: usize,
    /// Fraction of the local day that is lit, centred on local noon.
    pub day_fraction: f64,
    pub profile: DayProfile,
    pub amplitude: f64,
}

impl DayNightSpec {
    fn validate(&self) -> Result<()> {
        if self.samples_per_day == 0 || self.n_days == 0 {
            return Err(Error::Validation("samples_per_day and n_days must be >= 1".into()));
        }
        if !(self.day_fraction > 0.0 && self.day_fraction < 1.0) {
            return Err(Error::Validation("day_fraction must lie in (0, 1)".into()));
        }
        if self.day_fraction * (self.samples_per_day as f64) < 1.0 {
            return Err(Error::Validation(
                "day_fraction * samples_per_day must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn value(&self, local_time: f64) -> f64 {
        let start = 0.5 - self.day_fraction / 2.0;
        let phase = (local_time - start) / self.day_fraction;
        if !(0.0..1.0).contains(&phase) {
            return 0.0;
        }
        self.amplitude
            * match self.profile {
                DayProfile::HalfSine => (PI * phase).sin(),
                DayProfile::Square => 1.0,
            }
    }
}

/// A field that is on during each cell's local day and exactly zero at night.
/// Local time at longitude `L` leads UTC by `L/360` day, so the day window
/// sweeps from east to west.
pub fn gen_traveling_daynight(spec: &DayNightSpec) -> Result<SnapshotSet> {
    spec.validate()?;
    let spd = spec.samples_per_day;
    let m = spd * spec.n_days;
    let values = DMatrix::from_fn(spec.lons.len(), m, |i, k| {
        let offset = spec.lons[i] / 360.0 * spd as f64;
        let within = k % spd;
        let local = if (offset - offset.round()).abs() < 1e-9 {
            // whole-sample offset: stay in integer arithmetic so rows line up exactly
            let idx = (within as i64 + offset.round() as i64).rem_euclid(spd as i64);
            idx as f64 / spd as f64
        } else {
            (within as f64 / spd as f64 + spec.lons[i] / 360.0).rem_euclid(1.0)
        };
        spec.value(local)
    });
    let time = TimeGrid::uniform(0.0, 1.0 / spd as f64, m)?;
    let meta = GridMeta {
        lons: spec.lons.clone(),
        lats: vec![spec.lat],
        levs: vec![1],
        species: "SYNTH".into(),
        kind: DataKind::Conc,
        samples_per_day: spd,
    };
    SnapshotSet::new(meta, SnapshotMatrix::new(values, time)?)
}
