//! Run configuration: a flat JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use specdmd_core::synth::DayProfile;
use specdmd_core::{DataKind, EigConstraint, VarProOptions};

use crate::CliError;

/// Every key a config file may carry. All optional; defaults are resolved per
/// command once the input is known.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rank: Option<usize>,
    pub constraint: Option<String>,
    pub train_days: Option<usize>,
    pub forecast_days: Option<usize>,
    pub samples_per_day: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub seed: Option<u64>,
    pub lat_index: Option<usize>,
    pub lev_index: Option<usize>,

    pub flat_tol: Option<f64>,
    pub day_threshold: Option<f64>,
    pub day_window: Option<[usize; 2]>,
    pub hist_bins: Option<usize>,
    pub hist_index: Option<usize>,
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,

    pub max_outer_iters: Option<usize>,
    pub lm_lambda0: Option<f64>,
    pub lm_scale_up: Option<f64>,
    pub lm_scale_down: Option<f64>,
    pub residual_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub max_lm_retries: Option<usize>,

    pub synth_kind: Option<String>,
    pub n: Option<usize>,
    pub days: Option<usize>,
    pub eigs: Option<Vec<[f64; 2]>>,
    pub harmonics: Option<usize>,
    pub damping: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub day_fraction: Option<f64>,
    pub profile: Option<DayProfile>,
    pub amplitude: Option<f64>,
    pub lat: Option<f64>,
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rank: Option<usize>,
    pub constraint: Option<String>,
    pub train_days: Option<usize>,
    pub forecast_days: Option<usize>,
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Parse a config file. Unknown keys and badly typed values are all
    /// reported together, by key.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: "config must be a JSON object".into(),
            });
        };
        Self::from_map(map)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self, CliError> {
        // try each key on its own so one bad entry cannot hide another
        let mut bad = Vec::new();
        for (key, value) in &map {
            let mut single = Map::new();
            single.insert(key.clone(), value.clone());
            if let Err(e) = serde_json::from_value::<RunConfig>(Value::Object(single)) {
                bad.push(FieldError::new(key, e.to_string()));
            }
        }
        if !bad.is_empty() {
            return Err(CliError::Validation(bad));
        }
        serde_json::from_value(Value::Object(map))
            .map_err(|e| CliError::Validation(vec![FieldError::new("config", e.to_string())]))
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f; } )* };
        }
        take!(input, output, model, rank, constraint, train_days, forecast_days, k, p, seed);
    }

    pub fn solver_options(&self) -> VarProOptions {
        let d = VarProOptions::default();
        VarProOptions {
            max_outer_iters: self.max_outer_iters.unwrap_or(d.max_outer_iters),
            lm_lambda0: self.lm_lambda0.unwrap_or(d.lm_lambda0),
            lm_scale_up: self.lm_scale_up.unwrap_or(d.lm_scale_up),
            lm_scale_down: self.lm_scale_down.unwrap_or(d.lm_scale_down),
            residual_tol: self.residual_tol.unwrap_or(d.residual_tol),
            step_tol: self.step_tol.unwrap_or(d.step_tol),
            max_lm_retries: self.max_lm_retries.unwrap_or(d.max_lm_retries),
        }
    }

    pub fn eig_constraint(&self) -> EigConstraint {
        self.constraint
            .as_deref()
            .and_then(|s| s.parse().ok())
            .unwrap_or_default()
    }

    /// Rank to fit: the configured value, else 25 for concentrations and 50
    /// for tendencies.
    pub fn rank_for(&self, kind: DataKind) -> usize {
        self.rank.unwrap_or(match kind {
            DataKind::Conc => 25,
            DataKind::Tend => 50,
        })
    }

    /// Check everything that can be checked before touching the input.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, field: &str, why: &str| {
            if !ok {
                bad.push(FieldError::new(field, why.to_string()));
            }
        };
        let positive = |v: Option<usize>| v.is_none_or(|v| v >= 1);

        check(self.output.is_some(), "output", "an output directory is required");
        if command != Command::Synth {
            check(self.input.is_some(), "input", "an input snapshot file is required");
        }
        if command == Command::Forecast {
            check(self.model.is_some(), "model", "forecast needs a fitted model file");
        }
        check(positive(self.rank), "rank", "must be at least 1");
        if let Some(c) = &self.constraint {
            check(c.parse::<EigConstraint>().is_ok(), "constraint", "must be one of none, lhp, imag");
        }
        check(positive(self.train_days), "train_days", "must be at least 1");
        check(positive(self.forecast_days), "forecast_days", "must be at least 1");
        check(positive(self.samples_per_day), "samples_per_day", "must be at least 1");
        check(self.k.is_none_or(|k| k >= 2), "K", "an ensemble needs at least 2 trials");
        check(positive(self.p), "p", "must be at least 1");
        check(positive(self.hist_bins), "hist_bins", "must be at least 1");
        if let Some(t) = self.flat_tol {
            check(t > 0.0, "flat_tol", "must be positive");
        }
        if let Some(f) = self.day_threshold {
            check(f > 0.0 && f < 1.0, "day_threshold", "must lie in (0, 1)");
        }
        if let Some([a, b]) = self.day_window {
            check(a < b, "day_window", "start must be before end");
        }
        check(
            !(self.day_threshold.is_some() && self.day_window.is_some()),
            "day_window",
            "give either day_threshold or day_window, not both",
        );
        let (lo, hi) = (self.trim_lo.unwrap_or(10.0), self.trim_hi.unwrap_or(90.0));
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            check(false, "trim_lo", "need 0 <= trim_lo < trim_hi <= 100");
            check(false, "trim_hi", "need 0 <= trim_lo < trim_hi <= 100");
        }
        for field in self.solver_options().invalid_fields() {
            check(false, field, "invalid solver option");
        }

        if command == Command::Synth {
            let kind = self.synth_kind.as_deref().unwrap_or("mixture");
            check(matches!(kind, "mixture" | "daynight"), "synth_kind", "must be mixture or daynight");
            check(positive(self.n), "n", "must be at least 1");
            check(positive(self.days), "days", "must be at least 1");
            if let Some(s) = self.noise_sigma {
                check(s >= 0.0 && s.is_finite(), "noise_sigma", "must be a finite value >= 0");
            }
            if let Some(f) = self.day_fraction {
                check(f > 0.0 && f < 1.0, "day_fraction", "must lie in (0, 1)");
            }
            if let Some(e) = &self.eigs {
                check(!e.is_empty(), "eigs", "needs at least one eigenvalue");
            }
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Preprocess,
    Fit,
    RankScan,
    Forecast,
    Bopdmd,
    Synth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: &str, message: String) -> Self {
        Self {
            field: field.to_string(),
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(v: Value) -> Result<RunConfig, CliError> {
        let Value::Object(map) = v else { unreachable!() };
        RunConfig::from_map(map)
    }

    fn fields(err: CliError) -> Vec<String> {
        match err {
            CliError::Validation(v) => v.into_iter().map(|f| f.field).collect(),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_keys_are_reported_together() {
        let err = parse(json!({"rank": "five", "colour": 3, "seed": 1})).unwrap_err();
        let mut f = fields(err);
        f.sort();
        assert_eq!(f, ["colour", "rank"]);
    }

    #[test]
    fn flags_override_file_values() {
        let mut cfg = parse(json!({"rank": 3, "K": 10, "constraint": "imag"})).unwrap();
        cfg.apply(Overrides {
            rank: Some(7),
            ..Default::default()
        });
        assert_eq!(cfg.rank, Some(7));
        assert_eq!(cfg.k, Some(10));
        assert_eq!(cfg.eig_constraint(), EigConstraint::ImaginaryAxis);
    }

    #[test]
    fn every_violation_is_listed() {
        let cfg = parse(json!({"rank": 0, "constraint": "up", "lm_scale_up": 0.5, "K": 1})).unwrap();
        let f = fields(cfg.validate(Command::Fit).unwrap_err());
        for name in ["output", "input", "rank", "constraint", "lm_scale_up", "K"] {
            assert!(f.iter().any(|x| x == name), "{name} missing from {f:?}");
        }
    }

    #[test]
    fn defaults_follow_data_kind() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.rank_for(DataKind::Conc), 25);
        assert_eq!(cfg.rank_for(DataKind::Tend), 50);
        assert_eq!(cfg.eig_constraint(), EigConstraint::LeftHalfPlane);
    }
}
