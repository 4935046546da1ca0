use nalgebra::DMatrix;
use specdmd_core::gridstore::{load_snapshots, save_snapshots, slice};
use specdmd_core::preprocess::{isolate_daytime, shift_local_time, unshift_local_time, DaySelect};
use specdmd_core::synth::{gen_traveling_daynight, DayNightSpec, DayProfile};

/// Number of singular values needed to hold `fraction` of the Frobenius energy.
fn energy_rank(values: &DMatrix<f64>, fraction: f64) -> usize {
    let s = values.clone().singular_values();
    let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sq.iter().sum();
    let mut acc = 0.0;
    for (k, v) in sq.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return k + 1;
        }
    }
    sq.len()
}

fn spec(profile: DayProfile) -> DayNightSpec {
    DayNightSpec {
        lons: (0..72).map(|i| -180.0 + 5.0 * i as f64).collect(),
        lat: 12.0,
        samples_per_day: 72,
        n_days: 4,
        day_fraction: 0.5,
        profile,
        amplitude: 3.0,
    }
}

#[test]
fn shifting_collapses_the_travelling_wave() {
    for profile in [DayProfile::Square, DayProfile::HalfSine] {
        let set = gen_traveling_daynight(&spec(profile)).unwrap();
        let x = set.data();
        let (y, plan) = shift_local_time(x, &set.meta().lons, 72).unwrap();
        let before = energy_rank(x.values(), 0.99);
        let after = energy_rank(y.values(), 0.99);
        // the smooth profile is already compact in a few harmonics
        let floor = if profile == DayProfile::Square { 10 } else { 2 };
        assert!(before > floor, "{profile:?}: {before}");
        assert!(after <= 2, "{profile:?}: {after}");
        // every aligned row now follows the prime meridian exactly
        let reference = y.values().row(36).into_owned();
        for row in y.values().row_iter() {
            assert_eq!(row, reference);
        }
        assert_eq!(&unshift_local_time(&y, &plan).unwrap(), x);
    }
}

#[test]
fn aligned_daytime_columns_are_the_lit_half_day() {
    let set = gen_traveling_daynight(&spec(DayProfile::Square)).unwrap();
    let (y, _) = shift_local_time(set.data(), &set.meta().lons, 72).unwrap();
    let (day, mask) = isolate_daytime(&y, DaySelect::Threshold { fraction: 1e-3 }).unwrap();
    assert_eq!(day.ncols(), 4 * 36);
    assert!(day.values().iter().all(|&v| v == 3.0));
    assert_eq!(mask.keep.len(), y.ncols());
    assert!(day.time().uniform_dt().is_none());
}

#[test]
fn generated_sets_survive_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("daynight");
    let set = gen_traveling_daynight(&spec(DayProfile::HalfSine)).unwrap();
    save_snapshots(&set, &path).unwrap();
    let back = load_snapshots(&path).unwrap();
    assert_eq!(back, set);
    let level = slice(&back, 0, 0).unwrap();
    assert_eq!(&level, set.data());
}
