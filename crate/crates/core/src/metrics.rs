//! Forecast accuracy measures and naive reference forecasts.
//!
//! Point measures: MFE, MAD, MSE, MAPE, MAAPE, WAPE and MASE at lags 1 and 7.
//! Interval measures: PICP, PINAW and MSIS. Measures whose denominator is
//! zero or undefined are reported as `None` instead of failing.
//!
//! Training series passed for scaling are calendar-ordered with `None` for
//! missing days; a lag-`m` pair only counts when both ends are observed.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub mfe: Option<f64>,
    pub mad: Option<f64>,
    pub mse: Option<f64>,
    pub mape: Option<f64>,
    pub maape: Option<f64>,
    pub wape: Option<f64>,
    pub mase1: Option<f64>,
    pub mase7: Option<f64>,
    pub picp: Option<f64>,
    pub pinaw: Option<f64>,
    pub msis: Option<f64>,
    /// Number of test points.
    pub p: usize,
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 11] = [
    "MFE", "MAD", "MSE", "MAPE", "MAAPE", "WAPE", "MASE1", "MASE7", "PICP", "PINAW", "MSIS",
];

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 11] {
        [
            self.mfe, self.mad, self.mse, self.mape, self.maape, self.wape, self.mase1, self.mase7, self.picp,
            self.pinaw, self.msis,
        ]
    }

    fn from_values(v: [Option<f64>; 11], p: usize) -> Self {
        Self {
            mfe: v[0],
            mad: v[1],
            mse: v[2],
            mape: v[3],
            maape: v[4],
            wape: v[5],
            mase1: v[6],
            mase7: v[7],
            picp: v[8],
            pinaw: v[9],
            msis: v[10],
            p,
        }
    }

    /// Unweighted mean of each metric over the reports where it is defined.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let mut out = [None; 11];
        for (k, slot) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[k]).collect();
            if !vals.is_empty() {
                *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        let p = reports.iter().map(|r| r.p).sum::<usize>();
        Self::from_values(out, p)
    }

    pub fn merge_intervals(mut self, other: &IntervalMetrics) -> Self {
        self.picp = Some(other.picp);
        self.pinaw = other.pinaw;
        self.msis = other.msis;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub picp: f64,
    pub pinaw: Option<f64>,
    pub msis: Option<f64>,
}

fn check_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { what, left: a, right: b });
    }
    if a == 0 {
        return Err(Error::Empty("test window"));
    }
    Ok(())
}

/// Mean absolute lag-`m` difference over observed pairs of the training series.
pub fn naive_scale(train: &[Option<f64>], m: usize) -> Option<f64> {
    if m == 0 || train.len() <= m {
        return None;
    }
    let diffs: Vec<f64> = (m..train.len())
        .filter_map(|t| match (train[t], train[t - m]) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        })
        .collect();
    if diffs.is_empty() {
        return None;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (mean > 0.0).then_some(mean)
}

/// `arctan|(y − ŷ)/y|` with the limits `π/2` for `y = 0, ŷ ≠ 0` and `0` for `y = ŷ = 0`.
pub fn arctan_ape(actual: f64, predicted: f64) -> f64 {
    if actual == 0.0 {
        if predicted == 0.0 {
            0.0
        } else {
            FRAC_PI_2
        }
    } else {
        ((actual - predicted) / actual).abs().atan()
    }
}

/// Point-forecast measures on a test window.
pub fn point_metrics(actual: &[f64], predicted: &[f64], train: &[Option<f64>]) -> Result<MetricReport> {
    check_len("actual vs predicted", actual.len(), predicted.len())?;
    let p = actual.len() as f64;
    let errors: Vec<f64> = actual.iter().zip(predicted).map(|(y, f)| y - f).collect();
    let mfe = errors.iter().sum::<f64>() / p;
    let abs_sum: f64 = errors.iter().map(|e| e.abs()).sum();
    let mad = abs_sum / p;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / p;
    let mape = actual
        .iter()
        .all(|y| *y != 0.0)
        .then(|| errors.iter().zip(actual).map(|(e, y)| (e / y).abs()).sum::<f64>() / p);
    let maape = actual.iter().zip(predicted).map(|(y, f)| arctan_ape(*y, *f)).sum::<f64>() / p;
    let volume: f64 = actual.iter().sum();
    let wape = (volume > 0.0).then(|| abs_sum / volume);
    Ok(MetricReport {
        mfe: Some(mfe),
        mad: Some(mad),
        mse: Some(mse),
        mape,
        maape: Some(maape),
        wape,
        mase1: naive_scale(train, 1).map(|s| mad / s),
        mase7: naive_scale(train, 7).map(|s| mad / s),
        p: actual.len(),
        ..Default::default()
    })
}

/// Interval measures at level `1 − alpha`; MSIS is scaled by the lag-`m`
/// naive MAD of the training series.
pub fn interval_metrics(
    actual: &[f64],
    lower: &[f64],
    upper: &[f64],
    alpha: f64,
    train: &[Option<f64>],
    m: usize,
) -> Result<IntervalMetrics> {
    check_len("actual vs lower", actual.len(), lower.len())?;
    check_len("actual vs upper", actual.len(), upper.len())?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidArgument("lower bound above upper bound".into()));
    }
    let p = actual.len() as f64;
    let inside = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(y, (l, u))| *l <= *y && *y <= *u)
        .count();
    let mean_width = lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / p;
    let max = actual.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = actual.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let pinaw = (range > 0.0).then(|| mean_width / range);
    let mean_score = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(y, (l, u))| interval_score(*y, *l, *u, alpha))
        .sum::<f64>()
        / p;
    Ok(IntervalMetrics {
        picp: inside as f64 / p,
        pinaw,
        msis: naive_scale(train, m).map(|s| mean_score / s),
    })
}

/// `(u − l) + (2/α)(l − y)₊ + (2/α)(y − u)₊`
pub fn interval_score(y: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    (upper - lower) + 2.0 / alpha * ((lower - y).max(0.0) + (y - upper).max(0.0))
}

/// Repeats the last `m` training values: step `h` gets `y[n − m + (h−1) mod m]`.
pub fn seasonal_naive(train: &[f64], m: usize, horizon: usize) -> Result<Vec<f64>> {
    if m == 0 || train.len() < m {
        return Err(Error::InvalidArgument(format!(
            "seasonal naive needs at least m = {m} training values, have {}",
            train.len()
        )));
    }
    let base = train.len() - m;
    Ok((0..horizon).map(|h| train[base + h % m]).collect())
}

/// Renders rows of `(label, label, report)` as an aligned text table.
pub fn render_table(header: (&str, &str), rows: &[(String, String, MetricReport)]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    let mut cells: Vec<Vec<String>> = vec![std::iter::once(header.0.to_string())
        .chain(std::iter::once(header.1.to_string()))
        .chain(METRIC_NAMES.iter().map(|s| s.to_string()))
        .collect()];
    for (a, b, r) in rows {
        cells.push(
            [a.clone(), b.clone()]
                .into_iter()
                .chain(r.values().iter().map(|v| fmt(*v)))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        for (c, cell) in row.iter().enumerate() {
            if c < 2 {
                let _ = write!(out, "{cell:<w$}  ", w = widths[c]);
            } else {
                let _ = write!(out, "{cell:>w$}  ", w = widths[c]);
            }
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|x| Some(*x)).collect()
    }

    #[test]
    fn perfect_forecast() {
        let y = [3.0, 0.0, 5.0];
        let r = point_metrics(&y, &y, &obs(&[1.0, 2.0, 4.0])).unwrap();
        for v in [r.mfe, r.mad, r.mse, r.wape, r.maape] {
            assert_eq!(v, Some(0.0));
        }
        assert_eq!(r.mape, None);
    }

    #[test]
    fn maape_zero_convention() {
        let r = point_metrics(&[0.0, 2.0], &[1.0, 2.0], &[]).unwrap();
        assert!((r.maape.unwrap() - FRAC_PI_2 / 2.0).abs() < 1e-12);
        assert_eq!(arctan_ape(0.0, 0.0), 0.0);
        assert_eq!(arctan_ape(0.0, 3.0), FRAC_PI_2);
    }

    #[test]
    fn hand_computed_mase() {
        let r = point_metrics(&[3.0, 5.0, 4.0, 6.0], &[4.0; 4], &obs(&[2.0, 4.0, 6.0, 8.0])).unwrap();
        // errors (-1, 1, 0, 2); lag-1 training differences all 2
        assert!((r.mad.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.mase1.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.mase7, None);
        assert!((r.mfe.unwrap() - 0.5).abs() < 1e-12);
        assert!((r.mse.unwrap() - 1.5).abs() < 1e-12);
        assert!((r.wape.unwrap() - 4.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn mase_skips_pairs_across_missing() {
        let train = [Some(1.0), None, Some(4.0), Some(10.0)];
        // only (4 → 10) is a complete lag-1 pair
        assert_eq!(naive_scale(&train, 1), Some(6.0));
        assert_eq!(naive_scale(&[Some(2.0), Some(2.0)], 1), None);
    }

    #[test]
    fn interval_examples() {
        let y = [1.0, 5.0, 9.0];
        let m = interval_metrics(&y, &[0.0, 4.0, 8.0], &[2.0, 6.0, 10.0], 0.05, &[], 7).unwrap();
        assert_eq!(m.picp, 1.0);
        let m = interval_metrics(&y, &y, &y, 0.05, &obs(&[1.0, 3.0]), 1).unwrap();
        assert_eq!(m.pinaw, Some(0.0));
        assert_eq!(m.msis, Some(0.0));
        assert!((interval_score(10.0, 0.0, 8.0, 0.05) - 88.0).abs() < 1e-12);
        assert!(interval_metrics(&y, &[2.0, 0.0, 0.0], &[1.0, 9.0, 9.0], 0.05, &[], 7).is_err());
        assert!(interval_metrics(&y, &y, &y, 1.5, &[], 7).is_err());
    }

    #[test]
    fn seasonal_naive_examples() {
        assert_eq!(seasonal_naive(&[3.0, 8.0], 1, 3).unwrap(), vec![8.0; 3]);
        let week: Vec<f64> = (1..=7).map(f64::from).collect();
        let mut train = vec![0.0; 5];
        train.extend(&week);
        let expect: Vec<f64> = week.iter().chain(&week).cloned().collect();
        assert_eq!(seasonal_naive(&train, 7, 14).unwrap(), expect);
        assert_eq!(seasonal_naive(&[2.0, 4.0, 6.0], 2, 3).unwrap(), vec![4.0, 6.0, 4.0]);
        assert!(seasonal_naive(&[1.0], 2, 1).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(point_metrics(&[1.0], &[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn table_renders() {
        let r = point_metrics(&[1.0, 2.0], &[1.0, 1.0], &[]).unwrap();
        let t = render_table(("item", "method"), &[("a".into(), "naive".into(), r)]);
        assert!(t.lines().next().unwrap().starts_with("item"));
        assert!(t.contains("NA"));
    }

    proptest! {
        #[test]
        fn point_metric_invariants(
            pairs in prop::collection::vec((0u32..50, -5.0f64..60.0), 1..40),
            train in prop::collection::vec(0u32..50, 0..30),
        ) {
            let actual: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let train: Vec<Option<f64>> = train.iter().map(|v| Some(*v as f64)).collect();
            let r = point_metrics(&actual, &pred, &train).unwrap();
            let (mad, mse, mfe) = (r.mad.unwrap(), r.mse.unwrap(), r.mfe.unwrap());
            prop_assert!(mad * mad <= mse + 1e-9);
            prop_assert!(mfe.abs() <= mad + 1e-12);
            prop_assert!(r.maape.unwrap() <= FRAC_PI_2 + 1e-15);
            let volume: f64 = actual.iter().sum();
            if volume > 0.0 {
                prop_assert!((r.wape.unwrap() - mad * actual.len() as f64 / volume).abs() < 1e-9);
            }
            for (y, f) in actual.iter().zip(&pred) {
                if *y != 0.0 {
                    prop_assert!((arctan_ape(*y, *f) - ((y - f) / y).abs().atan()).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn msis_constant_width_covered(ys in prop::collection::vec(0.0f64..100.0, 1..20), w in 0.0f64..10.0) {
            let lower: Vec<f64> = ys.iter().map(|y| y - w / 2.0).collect();
            let upper: Vec<f64> = ys.iter().map(|y| y + w / 2.0).collect();
            let train = [Some(1.0), Some(4.0), Some(2.0)];
            let m = interval_metrics(&ys, &lower, &upper, 0.05, &train, 1).unwrap();
            prop_assert_eq!(m.picp, 1.0);
            prop_assert!((m.msis.unwrap() - w / 2.5).abs() < 1e-9);
        }
    }
}
