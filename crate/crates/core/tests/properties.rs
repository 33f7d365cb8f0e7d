//! Property tests over randomized inputs.

use ndarray::Array2;
use proptest::prelude::*;

use ltfu_core::dae::{self, DaeConfig};
use ltfu_core::metrics::wilson_interval;
use ltfu_core::mice::{self, ols_fit, MiceConfig};
use ltfu_core::missingness::{induce_loss, induce_loss_on, LossSpec, Mechanism, ThresholdDistribution};
use ltfu_core::survival::kaplan_meier;
use ltfu_core::tabular::{load_csv, write_csv, ColumnKind, ColumnRole, ColumnSpec, Dataset, MaskMatrix};
use ltfu_core::RngStream;

fn schema() -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::feature("a", ColumnKind::Continuous),
        ColumnSpec::feature("b", ColumnKind::Continuous),
        ColumnSpec::feature("c", ColumnKind::Binary),
        ColumnSpec::new("time", ColumnKind::Continuous, ColumnRole::TimeToOutcome),
        ColumnSpec::new("outcome", ColumnKind::Binary, ColumnRole::Outcome),
    ]
}

/// Random dataset where time and outcome depend on the features.
fn dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let mut v = Array2::zeros((n, 5));
    for i in 0..n {
        let a = rng.open01() * 2.0 - 1.0;
        let b = rng.open01() * 2.0 - 1.0;
        let c = (rng.open01() < 0.4) as u8 as f64;
        let lp = a + 0.5 * b + 0.3 * c;
        v[[i, 0]] = a;
        v[[i, 1]] = b;
        v[[i, 2]] = c;
        v[[i, 3]] = -rng.open01().ln() / (0.5 * lp.exp());
        v[[i, 4]] = (rng.open01() < 0.5 + 0.3 * lp.tanh()) as u8 as f64;
    }
    Dataset::new(schema(), v).unwrap()
}

fn spec(car: bool, p: f64, target: u8, normal: bool, seed: u64) -> LossSpec {
    let mut s = if car { LossSpec::car(p, seed) } else { LossSpec::nar(p, target, seed) };
    if normal {
        s.threshold_distribution = ThresholdDistribution::StandardNormal;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_touches_only_outcome_and_time(n in 1usize..300, p in 0.0f64..=1.0, car: bool, target in 0u8..2, normal: bool, seed: u64) {
        let data = dataset(n, seed);
        let (out, mask) = induce_loss(&data, &spec(car, p, target, normal, seed)).unwrap();
        prop_assert_eq!(out.values(), data.values());
        for i in 0..n {
            for j in 0..3 {
                prop_assert!(!mask.is_missing(i, j));
            }
            // outcome and time are lost together
            prop_assert_eq!(mask.is_missing(i, 3), mask.is_missing(i, 4));
            if !car && mask.is_missing(i, 4) {
                prop_assert_eq!(data.get(i, 4), target as f64);
            }
        }
    }

    #[test]
    fn loss_extremes(n in 1usize..200, seed: u64, normal: bool) {
        let data = dataset(n, seed);
        let (_, none) = induce_loss(&data, &spec(true, 0.0, 1, normal, seed)).unwrap();
        prop_assert!(none.is_empty());
        let (_, all) = induce_loss(&data, &spec(true, 1.0, 1, normal, seed)).unwrap();
        prop_assert_eq!(all.count(), 2 * n);
    }

    #[test]
    fn km_curve_is_a_survival_function(
        obs in proptest::collection::vec((0.01f64..50.0, 0u8..2), 1..150),
    ) {
        let times: Vec<f64> = obs.iter().map(|o| (o.0 * 4.0).round() / 4.0 + 0.25).collect();
        let events: Vec<u8> = obs.iter().map(|o| o.1).collect();
        let c = kaplan_meier(&times, &events).unwrap();
        let mut prev = 1.0;
        for k in 0..c.n_steps() {
            prop_assert!(c.survival[k] <= prev + 1e-15 && c.survival[k] >= 0.0);
            prop_assert!(k == 0 || c.event_times[k] > c.event_times[k - 1]);
            prop_assert!(k == 0 || c.at_risk[k] < c.at_risk[k - 1]);
            prev = c.survival[k];
        }
        if events.iter().all(|&e| e == 1) {
            prop_assert_eq!(*c.survival.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn wilson_interval_brackets_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn ols_recovers_noiseless_line(b0 in -5.0f64..5.0, b1 in -5.0f64..5.0, b2 in -5.0f64..5.0, seed: u64) {
        let mut rng = RngStream::new(seed);
        let x = Array2::from_shape_fn((30, 2), |_| rng.open01() * 4.0 - 2.0);
        let y: Vec<f64> = (0..30).map(|i| b0 + b1 * x[[i, 0]] + b2 * x[[i, 1]]).collect();
        let beta = ols_fit(x.view(), &y, 0.0).unwrap();
        for (got, want) in beta.iter().zip([b0, b1, b2]) {
            prop_assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(n in 1usize..60, seed: u64, p in 0.0f64..0.9) {
        let data = dataset(n, seed);
        let (data, mask) = induce_loss(&data, &LossSpec::car(p, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, &mask, &path).unwrap();
        let (back, back_mask) = load_csv(&path, &schema(), "?").unwrap();
        prop_assert_eq!(back_mask.bits(), mask.bits());
        for i in 0..n {
            for j in 0..5 {
                if !mask.is_missing(i, j) {
                    prop_assert_eq!(back.get(i, j).to_bits(), data.get(i, j).to_bits());
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn imputers_fill_only_masked_cells(n in 60usize..160, p in 0.05f64..0.5, car: bool, seed in 0u64..1000) {
        let data = dataset(n, seed);
        // scattered loss in features a and c on top of outcome/time loss;
        // b stays complete as the chained equations need one full predictor
        let mut rng = RngStream::new(seed ^ 0xabc);
        let mut extra = MaskMatrix::empty(n, 5);
        for i in 0..n {
            if rng.open01() < 0.15 {
                extra.set(i, 2 * rng.index(2), true);
            }
        }
        let (data, mask) = induce_loss_on(&data, &extra, &spec(car, p, 1, false, seed)).unwrap();
        let cfg = DaeConfig { epochs: 2, batch_size: 32, seed, ..Default::default() };
        let cfg = DaeConfig { corruption_mechanism: Some(if car { Mechanism::CAR } else { Mechanism::NAR }), ..cfg };
        let d = dae::fit(&data, &mask, &cfg).unwrap().impute(&data, &mask).unwrap();
        let m = mice::mice_impute(&data, &mask, &MiceConfig { seed, k_donors: 3, ..Default::default() }).unwrap();
        for out in [&d, &m] {
            for i in 0..n {
                for j in 0..5 {
                    let v = out.get(i, j);
                    prop_assert!(v.is_finite());
                    if !mask.is_missing(i, j) {
                        prop_assert_eq!(v.to_bits(), data.get(i, j).to_bits());
                    } else if j == 2 || j == 4 {
                        prop_assert!(v == 0.0 || v == 1.0);
                    }
                }
            }
        }
        // every MICE value comes from its column's observed cells
        for j in 0..5 {
            let observed: Vec<u64> = (0..n).filter(|&i| !mask.is_missing(i, j)).map(|i| data.get(i, j).to_bits()).collect();
            for i in (0..n).filter(|&i| mask.is_missing(i, j)) {
                prop_assert!(observed.contains(&m.get(i, j).to_bits()));
            }
        }
    }
}
