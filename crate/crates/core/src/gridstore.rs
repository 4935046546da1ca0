//! Snapshot matrices, their time grids and grid metadata, plus the on-disk
//! pair format: `<path>.f64` holds raw little-endian doubles in column-major
//! (snapshot-contiguous) order and `<path>.json` holds the sidecar metadata.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIFORM_RTOL: f64 = 1e-9;

/// Strictly increasing sample times in days.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    uniform_dt: Option<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Validation(format!(
                "time grid needs at least 2 samples, got {}",
                times.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("non-finite time {t}")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "times not strictly increasing at index {}: {} then {}",
                k + 1,
                times[k],
                times[k + 1]
            )));
        }
        let uniform_dt = detect_uniform(&times);
        Ok(Self { times, uniform_dt })
    }

    /// `count` samples starting at `start` spaced by `dt`.
    pub fn uniform(start: f64, dt: f64, count: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        Self::new((0..count).map(|k| start + dt * k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn uniform_dt(&self) -> Option<f64> {
        self.uniform_dt
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Sub-grid of the given (strictly increasing) indices.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let times = indices
            .iter()
            .map(|&k| {
                self.times.get(k).copied().ok_or(Error::OutOfRange {
                    axis: "time",
                    index: k,
                    len: self.times.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(times)
    }

    /// Length of the longest leading run of uniformly spaced samples.
    pub fn uniform_prefix_len(&self) -> usize {
        let dt = self.times[1] - self.times[0];
        let mut len = 2;
        while len < self.times.len() {
            let step = self.times[len] - self.times[len - 1];
            if (step - dt).abs() > UNIFORM_RTOL * dt {
                break;
            }
            len += 1;
        }
        len
    }
}

fn detect_uniform(times: &[f64]) -> Option<f64> {
    let m = times.len();
    let dt = (times[m - 1] - times[0]) / (m - 1) as f64;
    times
        .windows(2)
        .all(|w| (w[1] - w[0] - dt).abs() <= UNIFORM_RTOL * dt)
        .then_some(dt)
}

/// Real data, `n` spatial rows by `m` snapshot columns, with one time per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    values: DMatrix<f64>,
    time: TimeGrid,
}

impl SnapshotMatrix {
    pub fn new(values: DMatrix<f64>, time: TimeGrid) -> Result<Self> {
        if values.ncols() != time.len() {
            return Err(Error::Shape(format!(
                "{} columns but {} sample times",
                values.ncols(),
                time.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Shape("snapshot matrix has no rows".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let n = values.nrows();
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self { values, time })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, TimeGrid) {
        (self.values, self.time)
    }

    /// Columns at the given strictly increasing indices, keeping their original times.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        let time = self.time.select(indices)?;
        let values = self.values.select_columns(indices);
        Self::new(values, time)
    }

    /// The first `count` columns.
    pub fn leading_columns(&self, count: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..count.min(self.ncols())).collect();
        self.select_columns(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataKind {
    /// Concentration, molecules/cm^3.
    #[serde(rename = "CONC")]
    Conc,
    /// Chemical tendency, molecules/cm^3/s.
    #[serde(rename = "TEND")]
    Tend,
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataKind::Conc => f.write_str("CONC"),
            DataKind::Tend => f.write_str("TEND"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub lons: Vec<f64>,
    pub lats: Vec<f64>,
    pub levs: Vec<i64>,
    pub species: String,
    pub kind: DataKind,
    pub samples_per_day: usize,
}

impl GridMeta {
    pub fn validate(&self) -> Result<()> {
        if self.lons.is_empty() || self.lats.is_empty() || self.levs.is_empty() {
            return Err(Error::Validation("grid axes must be non-empty".into()));
        }
        if let Some(l) = self.lons.iter().find(|l| !(-180.0..180.0).contains(*l)) {
            return Err(Error::Validation(format!("longitude {l} outside [-180, 180)")));
        }
        if self.lons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "longitudes must be sorted ascending and unique".into(),
            ));
        }
        if self.samples_per_day == 0 {
            return Err(Error::Validation("samples_per_day must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.lons.len() * self.lats.len() * self.levs.len()
    }

    /// Row index of a grid cell; longitude varies fastest.
    pub fn row_index(&self, lon: usize, lat: usize, lev: usize) -> usize {
        lon + self.lons.len() * (lat + self.lats.len() * lev)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    meta: GridMeta,
    data: SnapshotMatrix,
}

impl SnapshotSet {
    pub fn new(meta: GridMeta, data: SnapshotMatrix) -> Result<Self> {
        meta.validate()?;
        if data.nrows() != meta.cell_count() {
            return Err(Error::Shape(format!(
                "{} rows but grid has {} cells",
                data.nrows(),
                meta.cell_count()
            )));
        }
        Ok(Self { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &SnapshotMatrix {
        &self.data
    }

    pub fn into_parts(self) -> (GridMeta, SnapshotMatrix) {
        (self.meta, self.data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    m: usize,
    times: Vec<f64>,
    lons: Vec<f64>,
    lats: Vec<f64>,
    levs: Vec<i64>,
    species: String,
    kind: DataKind,
    samples_per_day: usize,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Path of the raw value file belonging to `path`.
pub fn values_path(path: &Path) -> PathBuf {
    with_suffix(path, ".f64")
}

/// Path of the JSON sidecar belonging to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(path, ".json")
}

pub fn save_snapshots(set: &SnapshotSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let values = set.data.values();
    // SnapshotSet cannot hold non-finite values, but guard the file format anyway.
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in snapshot set".into()));
    }
    let mut bytes = Vec::with_capacity(values.len() * 8);
    // nalgebra storage is column-major, which is exactly the file layout.
    for v in values.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let sidecar = Sidecar {
        n: values.nrows(),
        m: values.ncols(),
        times: set.data.time().times().to_vec(),
        lons: set.meta.lons.clone(),
        lats: set.meta.lats.clone(),
        levs: set.meta.levs.clone(),
        species: set.meta.species.clone(),
        kind: set.meta.kind,
        samples_per_day: set.meta.samples_per_day,
    };
    let json_path = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|source| Error::Json {
        path: json_path.clone(),
        source,
    })?;
    let raw_path = values_path(path);
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn load_snapshots(path: impl AsRef<Path>) -> Result<SnapshotSet> {
    let path = path.as_ref();
    let json_path = sidecar_path(path);
    let raw_path = values_path(path);
    let json = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&json).map_err(|source| Error::Json {
        path: json_path.clone(),
        source,
    })?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = sidecar
        .n
        .checked_mul(sidecar.m)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Corrupt {
            path: json_path.clone(),
            reason: "n*m overflows".into(),
        })?;
    if bytes.len() != expected {
        return Err(Error::Corrupt {
            path: raw_path,
            reason: format!(
                "expected {expected} bytes for {}x{} values, found {}",
                sidecar.n,
                sidecar.m,
                bytes.len()
            ),
        });
    }
    if sidecar.times.len() != sidecar.m {
        return Err(Error::Corrupt {
            path: json_path,
            reason: format!("m = {} but {} times", sidecar.m, sidecar.times.len()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let values = DMatrix::from_vec(sidecar.n, sidecar.m, data);
    let time = TimeGrid::new(sidecar.times)?;
    let meta = GridMeta {
        lons: sidecar.lons,
        lats: sidecar.lats,
        levs: sidecar.levs,
        species: sidecar.species,
        kind: sidecar.kind,
        samples_per_day: sidecar.samples_per_day,
    };
    SnapshotSet::new(meta, SnapshotMatrix::new(values, time)?)
}

/// All longitudes at one latitude and level: a `|lons| x m` matrix.
pub fn slice(set: &SnapshotSet, lat_index: usize, lev_index: usize) -> Result<SnapshotMatrix> {
    let meta = &set.meta;
    if lat_index >= meta.lats.len() {
        return Err(Error::OutOfRange {
            axis: "lat",
            index: lat_index,
            len: meta.lats.len(),
        });
    }
    if lev_index >= meta.levs.len() {
        return Err(Error::OutOfRange {
            axis: "lev",
            index: lev_index,
            len: meta.levs.len(),
        });
    }
    let start = meta.row_index(0, lat_index, lev_index);
    let rows = set.data.values().rows(start, meta.lons.len()).into_owned();
    SnapshotMatrix::new(rows, set.data.time().clone())
}
