use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use specdmd_core::bopdmd::{ensemble_stats, fit_ensemble, BagSpec};
use specdmd_core::gridstore::{load_snapshots, save_snapshots, slice};
use specdmd_core::metrics::{
    daily_error_report, gaussian_fit_histogram, trimmed_sample, DEFAULT_BINS, DEFAULT_TRIM_HI, DEFAULT_TRIM_LO,
};
use specdmd_core::optdmd::{fit_optdmd, rank_scan, select_rank, DEFAULT_FLAT_TOL};
use specdmd_core::preprocess::{isolate_daytime, shift_local_time, DaySelect, ShiftPlan};
use specdmd_core::synth::{gen_exponential_mixture, gen_traveling_daynight, DayNightSpec, DayProfile, MixtureSpec};
use specdmd_core::{
    evaluate, relative_error, DataKind, DmdModel, GridMeta, SnapshotMatrix, SnapshotSet, TimeGrid, C64,
};

use crate::config::{Command, FieldError, RunConfig};
use crate::CliError;

pub fn run(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate(command)?;
    let out = cfg.output.clone().expect("validated");
    fs::create_dir_all(&out).map_err(|e| CliError::Io {
        path: out.clone(),
        source: e,
    })?;
    match command {
        Command::Synth => synth(cfg, &out),
        Command::Preprocess => preprocess(cfg, &out),
        Command::Fit => fit(cfg, &out),
        Command::RankScan => scan(cfg, &out),
        Command::Forecast => forecast(cfg, &out),
        Command::Bopdmd => bopdmd(cfg, &out),
    }
}

fn write_text(path: PathBuf, text: &str) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| CliError::Io { path, source: e })
}

fn write_json(path: PathBuf, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values always serialize");
    write_text(path, &(text + "\n"))
}

fn load_input(cfg: &RunConfig) -> Result<SnapshotSet, CliError> {
    Ok(load_snapshots(cfg.input.as_ref().expect("validated"))?)
}

fn samples_per_day(cfg: &RunConfig, meta: &GridMeta) -> usize {
    cfg.samples_per_day.unwrap_or(meta.samples_per_day)
}

/// The (lat, lev) slice to model, cut to the training days when configured.
fn training_matrix(cfg: &RunConfig, set: &SnapshotSet) -> Result<SnapshotMatrix, CliError> {
    let x = slice(set, cfg.lat_index.unwrap_or(0), cfg.lev_index.unwrap_or(0))?;
    match cfg.train_days {
        None => Ok(x),
        Some(days) => {
            let cols = days * samples_per_day(cfg, set.meta());
            if cols > x.ncols() {
                return Err(field_error(
                    "train_days",
                    format!("{days} days need {cols} snapshots, input has {}", x.ncols()),
                ));
            }
            Ok(x.leading_columns(cols)?)
        }
    }
}

fn field_error(field: &str, message: String) -> CliError {
    CliError::Validation(vec![FieldError::new(field, message)])
}

fn pair(z: &C64) -> [f64; 2] {
    [z.re, z.im]
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spd = cfg.samples_per_day.unwrap_or(72);
    let days = cfg.days.unwrap_or(60);
    let seed = cfg.seed.unwrap_or(0);
    let set_path = out.join("snapshots");
    match cfg.synth_kind.as_deref().unwrap_or("mixture") {
        "daynight" => {
            let nlon = cfg.n.unwrap_or(72);
            let spec = DayNightSpec {
                lons: (0..nlon).map(|i| -180.0 + 360.0 * i as f64 / nlon as f64).collect(),
                lat: cfg.lat.unwrap_or(0.0),
                samples_per_day: spd,
                n_days: days,
                day_fraction: cfg.day_fraction.unwrap_or(0.5),
                profile: cfg.profile.unwrap_or(DayProfile::HalfSine),
                amplitude: cfg.amplitude.unwrap_or(1.0),
            };
            save_snapshots(&gen_traveling_daynight(&spec)?, &set_path)?;
        }
        _ => {
            let n = cfg.n.unwrap_or(72);
            let eigs: Vec<C64> = match &cfg.eigs {
                Some(e) => e.iter().map(|p| C64::new(p[0], p[1])).collect(),
                None => diurnal_harmonics(cfg.harmonics.unwrap_or(3), cfg.damping.unwrap_or(0.01)),
            };
            let spec = MixtureSpec {
                n,
                eigs,
                mode_seed: seed,
                amp_seed: seed.wrapping_add(1),
                noise_seed: seed.wrapping_add(2),
                noise_sigma: cfg.noise_sigma.unwrap_or(0.0),
                times: TimeGrid::uniform(0.0, 1.0 / spd as f64, days * spd)?,
            };
            let (x, truth) = gen_exponential_mixture(&spec)?;
            let meta = GridMeta {
                lons: (0..n).map(|i| -180.0 + 360.0 * i as f64 / n as f64).collect(),
                lats: vec![cfg.lat.unwrap_or(0.0)],
                levs: vec![1],
                species: "SYNTH".into(),
                kind: DataKind::Conc,
                samples_per_day: spd,
            };
            save_snapshots(&SnapshotSet::new(meta, x)?, &set_path)?;
            truth.save(out.join("truth_model.json"))?;
        }
    }
    Ok(())
}

/// A mean plus `harmonics` damped daily cycles, as conjugate pairs.
fn diurnal_harmonics(harmonics: usize, damping: f64) -> Vec<C64> {
    let mut eigs = vec![C64::new(0.0, 0.0)];
    for k in 1..=harmonics {
        let w = 2.0 * PI * k as f64;
        eigs.push(C64::new(-damping * k as f64, w));
        eigs.push(C64::new(-damping * k as f64, -w));
    }
    eigs
}

fn preprocess(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = load_input(cfg)?;
    let spd = samples_per_day(cfg, set.meta());
    let meta = set.meta().clone();
    // rows run longitude fastest, so row i sits at lons[i % nlon]
    let row_lons: Vec<f64> = (0..meta.cell_count()).map(|i| meta.lons[i % meta.lons.len()]).collect();
    let (shifted, _) = shift_local_time(set.data(), &row_lons, spd)?;
    let plan = ShiftPlan::from_lons(&meta.lons, spd)?;
    write_json(
        out.join("shift_plan.json"),
        &json!({ "lons": meta.lons, "shifts": plan.shifts, "samples_per_day": plan.samples_per_day }),
    )?;

    let select = match (cfg.day_threshold, cfg.day_window) {
        (Some(fraction), _) => Some(DaySelect::Threshold { fraction }),
        (None, Some([start, end])) => Some(DaySelect::Window {
            start,
            end,
            samples_per_day: spd,
        }),
        (None, None) => None,
    };
    if let Some(select) = select {
        let (day, mask) = isolate_daytime(&shifted, select)?;
        save_snapshots(&SnapshotSet::new(meta.clone(), day)?, out.join("daytime"))?;
        write_json(
            out.join("day_mask.json"),
            &json!({ "keep": mask.keep, "kept_times": mask.kept_times.times() }),
        )?;
    }
    save_snapshots(&SnapshotSet::new(meta, shifted)?, out.join("shifted"))?;
    Ok(())
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = load_input(cfg)?;
    let x = training_matrix(cfg, &set)?;
    let r = cfg.rank_for(set.meta().kind);
    let c = cfg.eig_constraint();
    let (model, info) = fit_optdmd(&x, r, c, &cfg.solver_options(), None)?;
    let xhat = evaluate(&model, x.time())?;
    let err = relative_error(x.values(), xhat.values())?;
    model.save(out.join("model.json"))?;
    write_json(
        out.join("fit_summary.json"),
        &json!({
            "rank": r,
            "constraint": c.to_string(),
            "converged": info.converged,
            "iterations": info.iterations,
            "rel_error": err,
            "final_relative_residual": info.final_relative_residual,
            "constraint_active_count": info.constraint_active_count,
            "train_snapshots": x.ncols(),
            "train_span": [x.time().first(), x.time().last()],
        }),
    )
}

fn scan(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = load_input(cfg)?;
    let x = training_matrix(cfg, &set)?;
    let max_rank = cfg.rank_for(set.meta().kind);
    let ranks: Vec<usize> = (1..=max_rank).collect();
    let curve = rank_scan(&x, &ranks, cfg.eig_constraint(), &cfg.solver_options())?;
    write_text(out.join("error_curve.csv"), &curve.to_csv())?;
    let flat_tol = cfg.flat_tol.unwrap_or(DEFAULT_FLAT_TOL);
    let choice = match select_rank(&curve, flat_tol) {
        Ok(choice) => json!({ "rank": choice.rank, "no_elbow": choice.no_elbow, "flat_tol": flat_tol }),
        // too few converged ranks to pick from; the curve is still useful
        Err(e) => json!({ "rank": null, "no_elbow": true, "flat_tol": flat_tol, "reason": e.to_string() }),
    };
    write_json(out.join("rank_choice.json"), &choice)
}

fn forecast(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = load_input(cfg)?;
    let model = DmdModel::load(cfg.model.as_ref().expect("validated"))?;
    let x = slice(&set, cfg.lat_index.unwrap_or(0), cfg.lev_index.unwrap_or(0))?;
    if model.nrows() != x.nrows() {
        return Err(field_error(
            "model",
            format!("model has {} rows, input slice has {}", model.nrows(), x.nrows()),
        ));
    }
    let spd = samples_per_day(cfg, set.meta());
    let end = model.train_span.1;
    let tol = 1e-9 * end.abs().max(1.0);
    let ahead: Vec<usize> = (0..x.ncols()).filter(|&k| x.time().times()[k] > end + tol).collect();
    let available = ahead.len() / spd;
    let days = cfg.forecast_days.unwrap_or(available);
    if days == 0 || days > available {
        return Err(field_error(
            "forecast_days",
            format!("{days} forecast days requested, input holds {available} whole days after training"),
        ));
    }
    let truth = x.select_columns(&ahead[..days * spd])?;
    let predicted = evaluate(&model, truth.time())?;
    let report = daily_error_report(&truth, &predicted, spd)?;
    write_text(out.join("forecast_report.csv"), &report.to_csv())?;
    save_snapshots(&SnapshotSet::new(forecast_meta(set.meta(), &x), predicted)?, out.join("forecast"))?;
    Ok(())
}

/// Metadata for a single (lat, lev) slice written back out as a set.
fn forecast_meta(meta: &GridMeta, x: &SnapshotMatrix) -> GridMeta {
    let mut m = meta.clone();
    if m.cell_count() != x.nrows() {
        m.lats.truncate(1);
        m.levs.truncate(1);
    }
    m
}

fn bopdmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let set = load_input(cfg)?;
    let x = training_matrix(cfg, &set)?;
    let r = cfg.rank_for(set.meta().kind);
    let spec = BagSpec {
        trials: cfg.k.unwrap_or(100),
        bag_size: cfg.p.unwrap_or((x.ncols() / 20).max(r + 1)),
        seed: cfg.seed.unwrap_or(0),
    };
    let ensemble = fit_ensemble(&x, r, cfg.eig_constraint(), &spec, &cfg.solver_options())?;
    let stats = ensemble_stats(&ensemble)?;
    ensemble.reference.save(out.join("reference_model.json"))?;
    let mut stats_json = stats.to_json();
    stats_json["trials"] = json!(spec.trials);
    stats_json["bag_size"] = json!(spec.bag_size);
    stats_json["seed"] = json!(spec.seed);
    write_json(out.join("ensemble_stats.json"), &stats_json)?;
    write_text(out.join("trial_eigs.csv"), &ensemble.eigs_csv())?;

    // histogram the eigenvalue with the largest reference amplitude unless told otherwise
    let reference = &ensemble.reference;
    let j = match cfg.hist_index {
        Some(j) if j >= r => return Err(field_error("hist_index", format!("must be below the rank {r}"))),
        Some(j) => j,
        None => (0..r)
            .max_by(|&a, &b| reference.amps[a].norm().total_cmp(&reference.amps[b].norm()).then(b.cmp(&a)))
            .expect("rank >= 1"),
    };
    let eigs: Vec<C64> = ensemble.converged_models().map(|m| m.eigs[j]).collect();
    let bins = cfg.hist_bins.unwrap_or(DEFAULT_BINS);
    let lo = cfg.trim_lo.unwrap_or(DEFAULT_TRIM_LO);
    let hi = cfg.trim_hi.unwrap_or(DEFAULT_TRIM_HI);
    let mut fits = serde_json::Map::new();
    for (part, values) in [
        ("re", eigs.iter().map(|z| z.re).collect::<Vec<_>>()),
        ("im", eigs.iter().map(|z| z.im).collect::<Vec<_>>()),
    ] {
        let (csv, fit) = trimmed_histogram(&values, lo, hi, bins);
        write_text(out.join(format!("eig_hist_{part}.csv")), &csv)?;
        fits.insert(part.to_string(), fit);
    }
    write_json(
        out.join("eig_hist_fit.json"),
        &json!({
            "index": j,
            "reference_eig": pair(&reference.eigs[j]),
            "trim": [lo, hi],
            "bins": bins,
            "re": fits["re"],
            "im": fits["im"],
        }),
    )
}

/// Trimmed histogram CSV and Gaussian fit. Samples without spread (a real
/// eigenvalue's imaginary part, say) give a header-only CSV and a reason.
fn trimmed_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (String, Value) {
    let fitted = trimmed_sample(values, lo, hi).and_then(|kept| gaussian_fit_histogram(&kept, bins));
    match fitted {
        Ok((hist, fit)) => (hist.to_csv(), json!({ "mu": fit.mu, "sigma": fit.sigma, "sse": fit.sse })),
        Err(e) => ("bin_center,density\n".to_string(), json!({ "mu": null, "sigma": null, "sse": null, "reason": e.to_string() })),
    }
}
