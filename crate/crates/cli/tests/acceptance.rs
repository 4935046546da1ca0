//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use specdmd_core::bopdmd::{ensemble_stats, fit_ensemble, BagSpec, Ensemble, Trial};
use specdmd_core::exactdmd::fit_exact;
use specdmd_core::linalg::CMatrix;
use specdmd_core::metrics::{fit_gaussian_bins, trimmed_sample};
use specdmd_core::model::multiset_distance;
use specdmd_core::optdmd::{fit_optdmd, rank_scan, select_rank, DEFAULT_FLAT_TOL};
use specdmd_core::preprocess::shift_local_time;
use specdmd_core::synth::{gen_exponential_mixture, gen_traveling_daynight, DayNightSpec, DayProfile, MixtureSpec};
use specdmd_core::varpro::{jacobian, projected_residual};
use specdmd_core::{evaluate, relative_error, EigConstraint, SnapshotMatrix, TimeGrid, VarProOptions, C64};

type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check(ok: bool, details: String) -> Outcome {
    if ok {
        Ok(details)
    } else {
        Err(details)
    }
}

fn mixture(n: usize, eigs: &[C64], times: TimeGrid, noise: f64, seed: u64) -> (SnapshotMatrix, Vec<C64>) {
    let (x, truth) = gen_exponential_mixture(&MixtureSpec {
        n,
        eigs: eigs.to_vec(),
        mode_seed: seed,
        amp_seed: seed + 1,
        noise_seed: seed + 2,
        noise_sigma: noise,
        times,
    })
    .expect("planted mixture");
    (x, truth.eigs)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn planted_recovery() -> Outcome {
    let eigs = [c(-0.05, 2.0 * PI), c(-0.05, -2.0 * PI), c(-0.1, 4.0 * PI), c(-0.1, -4.0 * PI), c(-0.2, 0.0), c(0.0, 0.0)];
    let (x, truth) = mixture(72, &eigs, TimeGrid::uniform(0.0, 1.0 / 72.0, 2880).unwrap(), 0.0, 1);
    let start = Instant::now();
    let (model, _) = fit_optdmd(&x, 6, EigConstraint::Unconstrained, &VarProOptions::default(), None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dist = multiset_distance(&model.eigs, &truth);
    let xhat = evaluate(&model, x.time()).map_err(|e| e.to_string())?;
    let err = relative_error(x.values(), xhat.values()).map_err(|e| e.to_string())?;
    check(
        dist < 1e-5 && err < 1e-7 && elapsed < Duration::from_secs(5),
        format!("eig error {dist:.2e} (< 1e-5), relative error {err:.2e} (< 1e-7), fit {elapsed:.2?} (< 5 s) on 72x2880"),
    )
}

fn debiasing() -> Outcome {
    let eigs = [c(-0.1, 2.0), c(-0.1, -2.0), c(-0.3, 5.0), c(-0.3, -5.0)];
    let mut exact = Vec::new();
    let mut opt = Vec::new();
    for seed in 0..20u64 {
        let (x, truth) = mixture(20, &eigs, TimeGrid::uniform(0.0, 0.05, 200).unwrap(), 0.01, 100 + 3 * seed);
        let e = fit_exact(&x, 4).map_err(|e| e.to_string())?;
        let (o, _) = fit_optdmd(&x, 4, EigConstraint::Unconstrained, &VarProOptions::default(), None).map_err(|e| e.to_string())?;
        exact.push(multiset_distance(&e.eigs, &truth));
        opt.push(multiset_distance(&o.eigs, &truth));
    }
    let (me, mo) = (median(exact), median(opt));
    check(mo < me, format!("median eig error over 20 seeds: optDMD {mo:.3e}, exact DMD {me:.3e}"))
}

fn exact_dmd_decay() -> Outcome {
    let spd = 72;
    let set = gen_traveling_daynight(&DayNightSpec {
        lons: (0..72).map(|i| -180.0 + 5.0 * i as f64).collect(),
        lat: 0.0,
        samples_per_day: spd,
        n_days: 30,
        day_fraction: 0.5,
        profile: DayProfile::HalfSine,
        amplitude: 1.0,
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noisy = set.data().values().map(|v| v + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let x = SnapshotMatrix::new(noisy, set.data().time().clone()).map_err(|e| e.to_string())?;
    let train_days = 20;
    let train = x.leading_columns(train_days * spd).map_err(|e| e.to_string())?;
    let envelope = |v: &DMatrix<f64>, d: usize| v.columns(d * spd, spd).amax();
    let ratios = |model| -> Result<Vec<f64>, String> {
        let xhat = evaluate(model, x.time()).map_err(|e| e.to_string())?;
        Ok((0..30).map(|d| envelope(xhat.values(), d) / envelope(x.values(), d)).collect())
    };
    let r = 10;
    let exact = fit_exact(&train, r).map_err(|e| e.to_string())?;
    let exact_ratio = ratios(&exact)?;
    let collapse = exact_ratio[..train_days].iter().position(|&v| v < 0.1);
    let (opt, info) = fit_optdmd(&train, r, EigConstraint::LeftHalfPlane, &VarProOptions::default(), None).map_err(|e| e.to_string())?;
    let opt_ratio = ratios(&opt)?;
    let horizon = train_days + train_days / 2;
    let worst = opt_ratio[train_days..horizon].iter().copied().fold(f64::INFINITY, f64::min);
    let when = collapse.map_or("never".to_string(), |d| format!("on day {d}"));
    check(
        collapse.is_some() && worst >= 0.5,
        format!(
            "exact DMD envelope below 10% {when} of {train_days} training days; lhp optDMD keeps at least {:.0}% through day {horizon} (converged {})",
            100.0 * worst,
            info.converged
        ),
    )
}

fn constraint_semantics() -> Outcome {
    let eigs = [c(0.15, 2.0), c(0.15, -2.0), c(-0.1, 5.0), c(-0.1, -5.0)];
    let opts = VarProOptions::default();
    let mut lhp_max = f64::NEG_INFINITY;
    let mut imag_max = f64::NEG_INFINITY;
    let mut free_growth = f64::INFINITY;
    for seed in 0..6 {
        let (x, _) = mixture(8, &eigs, TimeGrid::uniform(0.0, 0.05, 120).unwrap(), 0.01, 20 + seed);
        let fit = |cons| fit_optdmd(&x, 4, cons, &opts, None).map(|p| p.0).map_err(|e| e.to_string());
        let lhp = fit(EigConstraint::LeftHalfPlane)?;
        let imag = fit(EigConstraint::ImaginaryAxis)?;
        let free = fit(EigConstraint::Unconstrained)?;
        lhp_max = lhp.eigs.iter().map(|w| w.re).fold(lhp_max, f64::max);
        imag_max = imag.eigs.iter().map(|w| w.re.abs()).fold(imag_max, f64::max);
        free_growth = free_growth.min(free.eigs.iter().map(|w| w.re).fold(f64::NEG_INFINITY, f64::max));
    }
    check(
        lhp_max <= 0.0 && imag_max == 0.0 && free_growth > 0.0,
        format!("lhp max Re {lhp_max:e}, imag max |Re| {imag_max:e}, unconstrained max Re at least {free_growth:.4} on planted growth"),
    )
}

fn arbitrary_times() -> Outcome {
    let eigs = [c(-0.1, 2.0 * PI), c(-0.1, -2.0 * PI)];
    let opts = VarProOptions::default();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let uniform = TimeGrid::uniform(0.0, 0.15, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jittered: Vec<f64> = uniform.times().iter().map(|t| t + rng.random_range(-0.04..0.04)).collect();
        let jittered = TimeGrid::new(jittered).map_err(|e| e.to_string())?;
        let (xu, truth) = mixture(8, &eigs, uniform, 0.0, 10 + seed);
        let (xj, _) = mixture(8, &eigs, jittered, 0.0, 10 + seed);
        let start: Vec<C64> = truth.iter().map(|z| z * 1.1).collect();
        let fit = |x| fit_optdmd(x, 2, EigConstraint::Unconstrained, &opts, Some(&start)).map(|p| p.0).map_err(|e| e.to_string());
        worst = worst.max(multiset_distance(&fit(&xu)?.eigs, &fit(&xj)?.eigs));
    }
    check(worst < 1e-3, format!("largest uniform vs jittered eig gap {worst:.2e} (< 1e-3) over 10 instances of 20 points"))
}

fn stack(m: &CMatrix) -> DVector<f64> {
    DVector::from_iterator(2 * m.len(), m.iter().map(|z| z.re).chain(m.iter().map(|z| z.im)))
}

fn jacobian_fd() -> Outcome {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let r = rng.random_range(1..=3);
        let m = rng.random_range(8..=14);
        let n = rng.random_range(2..=5);
        let alpha: Vec<C64> = (0..r).map(|_| c(rng.random_range(-0.8..0.2), rng.random_range(-4.0..4.0))).collect();
        let t: Vec<f64> = (0..m).map(|k| k as f64 * 0.2 + rng.random_range(0.0..0.1)).collect();
        let xt = CMatrix::from_fn(m, n, |_, _| c(rng.random_range(-1.0..1.0), 0.0));
        let cols = jacobian(&alpha, &t, &xt).map_err(|e| e.to_string())?;
        for (s, col) in cols.iter().enumerate() {
            let dir = if s < r { c(h, 0.0) } else { c(0.0, h) };
            let (mut plus, mut minus) = (alpha.clone(), alpha.clone());
            plus[s % r] += dir;
            minus[s % r] -= dir;
            let fd = (projected_residual(&plus, &t, &xt).map_err(|e| e.to_string())?
                - projected_residual(&minus, &t, &xt).map_err(|e| e.to_string())?)
                / c(2.0 * h, 0.0);
            let (a, b) = (stack(col), stack(&fd));
            worst = worst.max((a - &b).norm() / b.norm().max(1e-8));
        }
    }
    check(worst < 1e-4, format!("max relative column error {worst:.2e} (< 1e-4) over 50 instances"))
}

fn bagging() -> Outcome {
    let eigs = [c(0.0, 0.0), c(-0.05, 2.0 * PI), c(-0.05, -2.0 * PI), c(-0.2, 4.0 * PI), c(-0.2, -4.0 * PI)];
    let (x, truth) = mixture(10, &eigs, TimeGrid::uniform(0.0, 1.0 / 24.0, 400).unwrap(), 0.05, 61);
    let spec = BagSpec { trials: 100, bag_size: x.ncols() / 20, seed: 42 };
    let opts = VarProOptions::default();
    let run = || fit_ensemble(&x, 5, EigConstraint::LeftHalfPlane, &spec, &opts).map_err(|e| e.to_string());
    let (a, b) = (run()?, run()?);
    let sa = ensemble_stats(&a).map_err(|e| e.to_string())?;
    let sb = ensemble_stats(&b).map_err(|e| e.to_string())?;
    let bits = |s: &specdmd_core::bopdmd::EnsembleStats| {
        let mut v: Vec<u64> = s.mean_eigs.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
        v.extend(s.var_eigs.iter().map(|f| f.to_bits()));
        v.extend(s.mean_modes.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]));
        v
    };
    let reproducible = a == b && bits(&sa) == bits(&sb) && a.eigs_csv() == b.eigs_csv();

    let mean_err = multiset_distance(&sa.mean_eigs, &truth);
    let trial_errs: Vec<f64> = a.converged_models().map(|m| multiset_distance(&m.eigs, &truth)).collect();
    let beaten = trial_errs.iter().filter(|&&e| mean_err < e).count();
    let share = beaten as f64 / trial_errs.len() as f64;

    let clones = Ensemble {
        reference: a.reference.clone(),
        trials: (0..100)
            .map(|_| Trial { bag: vec![], model: Some(a.reference.clone()), converged: true })
            .collect(),
    };
    let sc = ensemble_stats(&clones).map_err(|e| e.to_string())?;
    let zero = sc.var_eigs.iter().chain(&sc.var_amps).chain(sc.var_modes.iter()).all(|&v| v == 0.0);
    check(
        reproducible && share >= 0.5 && zero,
        format!(
            "K=100 p={}: reproducible {reproducible}; mean beats {beaten} of {} trials ({:.0}%); identical trials give zero variance {zero}",
            spec.bag_size,
            trial_errs.len(),
            100.0 * share
        ),
    )
}

/// Linear-interpolation percentile by direct rank arithmetic.
fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let below = h.floor() as usize;
    let above = (below + 1).min(sorted.len() - 1);
    sorted[below] + (h - below as f64) * (sorted[above] - sorted[below])
}

fn trimmed_statistics() -> Outcome {
    let values: Vec<f64> = (1..=10).map(f64::from).collect();
    let (lo, hi) = (percentile_oracle(&values, 10.0), percentile_oracle(&values, 90.0));
    let expected: Vec<f64> = values.iter().copied().filter(|v| lo <= *v && *v <= hi).collect();
    let kept = trimmed_sample(&values, 10.0, 90.0).map_err(|e| e.to_string())?;
    let (mu, sigma) = (0.37, 1.9);
    let centers: Vec<f64> = (0..41).map(|k| mu - 4.0 * sigma + 0.2 * sigma * k as f64).collect();
    let densities: Vec<f64> = centers
        .iter()
        .map(|x| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt()))
        .collect();
    let fit = fit_gaussian_bins(&centers, &densities, mu + 0.5, sigma * 1.4).map_err(|e| e.to_string())?;
    let (dmu, dsigma) = ((fit.mu - mu).abs(), (fit.sigma - sigma).abs());
    check(
        kept == expected && dmu < 1e-8 && dsigma < 1e-8,
        format!("trimmed 1..10 to {kept:?} (oracle {expected:?}); gaussian fit off by mu {dmu:.1e}, sigma {dsigma:.1e} (< 1e-8)"),
    )
}

fn rank_scan_elbow() -> Outcome {
    let eigs = [c(-0.1, 2.0 * PI), c(-0.1, -2.0 * PI), c(-0.4, 0.0)];
    let (x, _) = mixture(8, &eigs, TimeGrid::uniform(0.0, 1.0 / 24.0, 96).unwrap(), 0.0, 41);
    let curve = rank_scan(&x, &[1, 2, 3, 4, 5, 6], EigConstraint::Unconstrained, &VarProOptions::default()).map_err(|e| e.to_string())?;
    let choice = select_rank(&curve, DEFAULT_FLAT_TOL).map_err(|e| e.to_string())?;
    let (at, below) = (curve.rel_errors[2], curve.rel_errors[1]);
    check(
        at < 1e-6 && below >= 100.0 * at && choice.rank == 3,
        format!("error at rank 3 {at:.2e}, at rank 2 {below:.2e}; elbow at rank {}", choice.rank),
    )
}

fn energy_rank(values: &DMatrix<f64>, fraction: f64) -> usize {
    let sq: Vec<f64> = values.clone().singular_values().iter().map(|s| s * s).collect();
    let mut sorted = sq.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let mut acc = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    sorted.len()
}

fn rank_collapse() -> Outcome {
    let set = gen_traveling_daynight(&DayNightSpec {
        lons: (0..72).map(|i| -180.0 + 5.0 * i as f64).collect(),
        lat: 0.0,
        samples_per_day: 72,
        n_days: 4,
        day_fraction: 0.5,
        profile: DayProfile::Square,
        amplitude: 1.0,
    })
    .map_err(|e| e.to_string())?;
    let (shifted, _) = shift_local_time(set.data(), &set.meta().lons, 72).map_err(|e| e.to_string())?;
    let before = energy_rank(set.data().values(), 0.99);
    let after = energy_rank(shifted.values(), 0.99);
    check(
        before > 10 && after <= 2,
        format!("singular values for 99% energy: {before} unshifted (> 10), {after} shifted (<= 2)"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_specdmd")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    fs::write(
        root.join("synth.json"),
        r#"{"n": 72, "days": 60, "samples_per_day": 72, "harmonics": 12, "damping": 0.01, "noise_sigma": 0.01}"#,
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    run_cli(&["synth", "--config", &p("synth.json"), "--seed", "3", "--output", &p("syn")])?;
    let data = p("syn/snapshots");
    run_cli(&["preprocess", "--input", &data, "--output", &p("pre")])?;
    let shifted = p("pre/shifted");
    run_cli(&["fit", "--input", &shifted, "--output", &p("fit"), "--rank", "25", "--constraint", "lhp", "--train-days", "40"])?;
    run_cli(&["forecast", "--input", &shifted, "--model", &p("fit/model.json"), "--output", &p("fc"), "--forecast-days", "20"])?;
    run_cli(&[
        "bopdmd", "--input", &shifted, "--output", &p("bop"), "--rank", "25", "--constraint", "lhp", "--K", "100", "--p", "216",
        "--seed", "5",
    ])?;
    let elapsed = start.elapsed();
    let declared = [
        "syn/snapshots.f64",
        "syn/snapshots.json",
        "syn/truth_model.json",
        "pre/shift_plan.json",
        "pre/shifted.f64",
        "pre/shifted.json",
        "fit/model.json",
        "fit/fit_summary.json",
        "fc/forecast_report.csv",
        "fc/forecast.f64",
        "fc/forecast.json",
        "bop/reference_model.json",
        "bop/ensemble_stats.json",
        "bop/trial_eigs.csv",
        "bop/eig_hist_re.csv",
        "bop/eig_hist_im.csv",
        "bop/eig_hist_fit.json",
    ];
    let missing: Vec<&str> = declared.iter().copied().filter(|f| !Path::new(&p(f)).is_file()).collect();
    let shape = fs::read_to_string(root.join("syn/snapshots.json")).map_err(|e| e.to_string())?;
    let meta: serde_json::Value = serde_json::from_str(&shape).map_err(|e| e.to_string())?;
    let days = fs::read_to_string(root.join("fc/forecast_report.csv")).map_err(|e| e.to_string())?.lines().count() - 1;
    check(
        missing.is_empty() && elapsed < Duration::from_secs(600) && days == 20,
        format!(
            "{}x{} snapshots, r=25 lhp, 40 train + {days} forecast days, K=100 p=216 in {:.1?} (< 600 s); missing outputs {missing:?}",
            meta["n"], meta["m"], elapsed
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("planted-mixture recovery", planted_recovery),
        ("noise de-biasing", debiasing),
        ("exact DMD envelope decay", exact_dmd_decay),
        ("constraint semantics", constraint_semantics),
        ("arbitrary sample times", arbitrary_times),
        ("projection Jacobian", jacobian_fd),
        ("bagging ensemble", bagging),
        ("trimmed statistics", trimmed_statistics),
        ("rank scan", rank_scan_elbow),
        ("preprocessing rank collapse", rank_collapse),
        ("end-to-end CLI run", end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(details) => println!("criterion {}: PASS {name}: {details}", k + 1),
            Err(details) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {details}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
