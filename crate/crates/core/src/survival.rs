//! Kaplan-Meier product-limit estimation with Greenwood variances, pointwise
//! complementary log-log confidence bands, and median survival with a
//! band-crossing confidence interval.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Step function: `survival[k]` holds on `[event_times[k], event_times[k+1])`
/// and is 1 before the first event time.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub event_times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Cumulative Greenwood sum `sum d / (n (n - d))`; infinite once `S` hits 0.
    pub greenwood_var: Vec<f64>,
}

impl SurvivalCurve {
    pub fn n_steps(&self) -> usize {
        self.event_times.len()
    }

    /// `S(t)`, right-continuous.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.event_times.partition_point(|&e| e <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Product-limit estimate. `events[i] == 1` is an observed outcome, `0` a
/// censoring. At tied times events are processed against the full risk set
/// (censorings at the same time still count as at risk).
pub fn kaplan_meier(times: &[f64], events: &[u8]) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::InsufficientData("Kaplan-Meier needs at least one observation".into()));
    }
    if times.len() != events.len() {
        return Err(Error::Shape(format!("{} times vs {} event flags", times.len(), events.len())));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Numerical(format!("survival times must be positive, got {t}")));
    }
    if events.iter().any(|&e| e > 1) {
        return Err(Error::Numerical("event flags must be 0 or 1".into()));
    }

    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut curve = SurvivalCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        greenwood_var: Vec::new(),
    };
    let mut at_risk = times.len();
    let mut s = 1.0;
    let mut gw = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut d = 0;
        let mut leaving = 0;
        while k < order.len() && times[order[k]] == t {
            d += events[order[k]] as usize;
            leaving += 1;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            gw += if d < at_risk {
                d as f64 / (at_risk as f64 * (at_risk - d) as f64)
            } else {
                f64::INFINITY
            };
            curve.event_times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
            curve.greenwood_var.push(gw);
        }
        at_risk -= leaving;
    }
    Ok(curve)
}

/// Pointwise bounds per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Greenwood variance on the `log(-log S)` scale:
/// `S^{exp(+z se)} <= S <= S^{exp(-z se)}` with `se^2 = gw / (log S)^2`.
pub fn km_confidence_band(curve: &SurvivalCurve, level: f64) -> Result<ConfidenceBand> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("confidence level {level} outside [0, 1)")));
    }
    let z = if level == 0.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf(0.5 + level / 2.0)
    };
    let mut band = ConfidenceBand {
        lower: Vec::with_capacity(curve.n_steps()),
        upper: Vec::with_capacity(curve.n_steps()),
    };
    for (&s, &gw) in curve.survival.iter().zip(&curve.greenwood_var) {
        let (lo, hi) = if s <= 0.0 || s >= 1.0 || !gw.is_finite() {
            (s, s)
        } else {
            let log_s = s.ln();
            let se = gw.sqrt() / log_s.abs();
            (s.powf((z * se).exp()), s.powf((-z * se).exp()))
        };
        band.lower.push(lo.clamp(0.0, 1.0).min(s));
        band.upper.push(hi.clamp(0.0, 1.0).max(s));
    }
    Ok(band)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianEstimate {
    pub median: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl MedianEstimate {
    /// `436(352,587)`-style cell; undefined parts print as `NA`.
    pub fn format(&self, decimals: usize) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.decimals$}"));
        format!("{}({},{})", f(self.median), f(self.lo), f(self.hi))
    }
}

fn first_time_at_or_below(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    times.iter().zip(values).find(|(_, &v)| v <= level).map(|(&t, _)| t)
}

/// Median = first event time with `S(t) <= 0.5`. The interval runs from the
/// first time the lower band reaches 0.5 to the first time the upper band does.
pub fn median_survival(curve: &SurvivalCurve, band: &ConfidenceBand) -> MedianEstimate {
    MedianEstimate {
        median: first_time_at_or_below(&curve.event_times, &curve.survival, 0.5),
        lo: first_time_at_or_below(&curve.event_times, &band.lower, 0.5),
        hi: first_time_at_or_below(&curve.event_times, &band.upper, 0.5),
    }
}

/// Convenience: curve, 95% band and median from raw data.
pub fn median_from_data(times: &[f64], events: &[u8]) -> Result<MedianEstimate> {
    let curve = kaplan_meier(times, events)?;
    let band = km_confidence_band(&curve, 0.95)?;
    Ok(median_survival(&curve, &band))
}

/// Plot-ready CSV: `time,at_risk,events,survival,lo,hi`.
pub fn write_curve_csv(curve: &SurvivalCurve, band: &ConfidenceBand, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("time,at_risk,events,survival,lo,hi\n");
    for k in 0..curve.n_steps() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            curve.event_times[k], curve.at_risk[k], curve.events[k], curve.survival[k], band.lower[k], band.upper[k]
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn all_events() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        assert_eq!(c.event_times, vec![1.0, 2.0, 3.0]);
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, e) in c.survival.iter().zip(expect) {
            assert!((s - e).abs() < 1e-12);
        }
        assert_eq!(c.at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn censored_middle() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        assert_eq!(c.event_times, vec![1.0, 3.0]);
        assert!((c.survival[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.at_risk[1], 1);
        assert_eq!(c.survival[1], 0.0);
    }

    #[test]
    fn all_censored_is_flat() {
        let c = kaplan_meier(&[1.0, 2.0, 5.0], &[0, 0, 0]).unwrap();
        assert_eq!(c.n_steps(), 0);
        assert_eq!(c.survival_at(10.0), 1.0);
    }

    #[test]
    fn tie_event_before_censoring() {
        // at t=2: one event, one censoring; risk set is 3 for the event
        let c = kaplan_meier(&[1.0, 2.0, 2.0, 4.0], &[1, 1, 0, 1]).unwrap();
        assert_eq!(c.at_risk, vec![4, 3, 1]);
        assert!((c.survival[1] - 0.75 * (2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert!(kaplan_meier(&[], &[]).is_err());
        assert!(kaplan_meier(&[1.0], &[1, 0]).is_err());
        assert!(kaplan_meier(&[0.0], &[1]).is_err());
    }

    #[test]
    fn band_contains_curve() {
        let mut rng = RngStream::new(4);
        let times: Vec<f64> = (0..80).map(|_| rng.random_range(0.1..10.0)).collect();
        let events: Vec<u8> = (0..80).map(|_| rng.random_range(0..2)).collect();
        let c = kaplan_meier(&times, &events).unwrap();
        let b = km_confidence_band(&c, 0.95).unwrap();
        for k in 0..c.n_steps() {
            assert!(b.lower[k] <= c.survival[k] && c.survival[k] <= b.upper[k]);
            assert!(b.lower[k] >= 0.0 && b.upper[k] <= 1.0);
        }
    }

    #[test]
    fn single_event_band_closed_form() {
        let mut times = vec![1.0];
        times.extend((0..99).map(|k| 2.0 + k as f64));
        let mut events = vec![1u8];
        events.extend(vec![0u8; 99]);
        let c = kaplan_meier(&times, &events).unwrap();
        let b = km_confidence_band(&c, 0.95).unwrap();
        // S = 0.99, gw = 1 / (100 * 99); se = sqrt(gw) / |ln 0.99|
        let s: f64 = 0.99;
        let se = (1.0f64 / 9900.0).sqrt() / s.ln().abs();
        let z = 1.959_963_984_540_054;
        assert!((b.lower[0] - s.powf((z * se).exp())).abs() < 1e-12);
        assert!((b.upper[0] - s.powf((-z * se).exp())).abs() < 1e-12);
        assert!((b.lower[0] - 0.9311).abs() < 1e-3);
        assert!((b.upper[0] - 0.99858).abs() < 1e-4);
    }

    #[test]
    fn zero_level_band_is_curve() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0]).unwrap();
        let b = km_confidence_band(&c, 0.0).unwrap();
        assert_eq!(b.lower, c.survival);
        assert_eq!(b.upper, c.survival);
    }

    #[test]
    fn medians() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        let b = km_confidence_band(&c, 0.95).unwrap();
        assert_eq!(median_survival(&c, &b).median, Some(2.0));

        // S never reaches 0.5
        let mut times: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let mut ev = vec![1u8, 1];
        ev.extend(vec![0u8; 8]);
        let c = kaplan_meier(&times, &ev).unwrap();
        let b = km_confidence_band(&c, 0.95).unwrap();
        assert_eq!(median_survival(&c, &b).median, None);

        // S hits exactly 0.5 at t = 7: two observations, one event at 7
        times = vec![7.0, 9.0];
        let c = kaplan_meier(&times, &[1, 0]).unwrap();
        assert_eq!(c.survival, vec![0.5]);
        let b = km_confidence_band(&c, 0.95).unwrap();
        assert_eq!(median_survival(&c, &b).median, Some(7.0));
    }

    #[test]
    fn median_interval_brackets_median() {
        let mut rng = RngStream::new(10);
        let times: Vec<f64> = (0..300).map(|_| -rng.open01().ln()).collect();
        let events: Vec<u8> = (0..300).map(|_| u8::from(rng.random::<f64>() < 0.8)).collect();
        let m = median_from_data(&times, &events).unwrap();
        let (lo, med, hi) = (m.lo.unwrap(), m.median.unwrap(), m.hi.unwrap());
        assert!(lo <= med && med <= hi);
        assert_eq!(MedianEstimate { median: Some(436.0), lo: Some(352.0), hi: None }.format(0), "436(352,NA)");
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = RngStream::new(2);
        let times: Vec<f64> = (0..50).map(|_| rng.random_range(1..20) as f64).collect();
        let events: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let mut idx: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut idx);
        let t2: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let e2: Vec<u8> = idx.iter().map(|&i| events[i]).collect();
        assert_eq!(kaplan_meier(&times, &events).unwrap(), kaplan_meier(&t2, &e2).unwrap());
    }
}
