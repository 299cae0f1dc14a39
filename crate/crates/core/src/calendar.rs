//! Calendar features: model time, trend knots and design matrices.
//!
//! Dates are mapped onto model time by `δ(t) = (t − t₁) / N`, where `N` is the
//! number of calendar days in the training span. The trend design uses the
//! truncated power basis `1, δ, …, δ^l, (δ − δ(k₁))₊^l, …, (δ − δ(k_m))₊^l`,
//! and the seasonal design is a full one-hot coding of weekday, day of month
//! and month of year (no reference level dropped).

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Maps calendar dates to model time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateMap {
    pub origin: NaiveDate,
    /// Calendar days in `[t₁, tₙ]`, both ends included.
    pub span_days: i64,
}

impl DateMap {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        if last < first {
            return Err(Error::InvalidArgument(format!("last date {last} before first {first}")));
        }
        Ok(Self {
            origin: first,
            span_days: (last - first).num_days() + 1,
        })
    }

    pub fn delta(&self, date: NaiveDate) -> Result<f64> {
        if date < self.origin {
            return Err(Error::BeforeOrigin {
                date,
                origin: self.origin,
            });
        }
        Ok((date - self.origin).num_days() as f64 / self.span_days as f64)
    }
}

/// Candidate trend change points, one every `spacing` days after the origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnotSet {
    pub knots: Vec<NaiveDate>,
    pub spacing: i64,
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// Knots at `first + k, first + 2k, …` strictly before `last`.
pub fn place_knots(first: NaiveDate, last: NaiveDate, k: i64) -> Result<KnotSet> {
    if k < 1 {
        return Err(Error::InvalidArgument(format!("knot spacing must be >= 1, got {k}")));
    }
    let knots = (1..)
        .map(|j| first + Duration::days(j * k))
        .take_while(|d| *d < last)
        .collect();
    Ok(KnotSet { knots, spacing: k })
}

/// Which seasonal dummy groups are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonGranularity {
    pub weekday: bool,
    pub day_of_month: bool,
    pub month: bool,
}

impl SeasonGranularity {
    pub const WEEKDAY: Self = Self {
        weekday: true,
        day_of_month: false,
        month: false,
    };
    pub const WEEKDAY_MONTH: Self = Self {
        weekday: true,
        day_of_month: false,
        month: true,
    };
    pub const ALL: Self = Self {
        weekday: true,
        day_of_month: true,
        month: true,
    };
    /// No seasonal terms at all. Never chosen automatically; useful for
    /// trend-only fits.
    pub const NONE: Self = Self {
        weekday: false,
        day_of_month: false,
        month: false,
    };

    pub fn n_columns(&self) -> usize {
        7 * self.weekday as usize + 31 * self.day_of_month as usize + 12 * self.month as usize
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_columns());
        if self.weekday {
            out.extend(WEEKDAYS.iter().map(|w| format!("weekday:{w}")));
        }
        if self.day_of_month {
            out.extend((1..=31).map(|d| format!("dom:{d}")));
        }
        if self.month {
            out.extend(MONTHS.iter().map(|m| format!("month:{m}")));
        }
        out
    }
}

/// Seasonal granularity for `n` observed days: weekday below 30, plus month
/// of year below 120, everything from 120 on.
pub fn granularity_for(n: usize) -> SeasonGranularity {
    match n {
        0..=29 => SeasonGranularity::WEEKDAY,
        30..=119 => SeasonGranularity::WEEKDAY_MONTH,
        _ => SeasonGranularity::ALL,
    }
}

/// Seasonal (`x`) and trend (`z`) design matrices for a set of dates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    pub x: Matrix,
    pub z: Matrix,
    pub degree: usize,
    pub x_labels: Vec<String>,
    pub z_labels: Vec<String>,
}

impl DesignPair {
    pub fn n_rows(&self) -> usize {
        self.z.rows()
    }

    pub fn n_seasonal(&self) -> usize {
        self.x.cols()
    }

    pub fn n_trend(&self) -> usize {
        self.z.cols()
    }

    pub fn n_knots(&self) -> usize {
        self.z.cols() - self.degree - 1
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            z: self.z.select_rows(idx),
            degree: self.degree,
            x_labels: self.x_labels.clone(),
            z_labels: self.z_labels.clone(),
        }
    }
}

pub fn truncated_power(x: f64, degree: usize) -> f64 {
    if x < 0.0 {
        0.0
    } else if degree == 0 {
        // (t − k)₊⁰ is the step function, 1 from the knot on
        1.0
    } else {
        x.powi(degree as i32)
    }
}

/// Trend design rows `[1, δ, …, δ^l, (δ − δ(k₁))₊^l, …]`.
pub fn trend_design(dates: &[NaiveDate], knots: &[NaiveDate], degree: usize, map: &DateMap) -> Result<Matrix> {
    if dates.is_empty() {
        return Err(Error::Empty("design dates"));
    }
    let knot_deltas = knots.iter().map(|k| map.delta(*k)).collect::<Result<Vec<_>>>()?;
    let cols = degree + 1 + knots.len();
    let mut z = Matrix::zeros(dates.len(), cols);
    for (i, date) in dates.iter().enumerate() {
        let t = map.delta(*date)?;
        let mut p = 1.0;
        for j in 0..=degree {
            z.set(i, j, p);
            p *= t;
        }
        for (j, kd) in knot_deltas.iter().enumerate() {
            z.set(i, degree + 1 + j, truncated_power(t - kd, degree));
        }
    }
    Ok(z)
}

pub fn trend_labels(knots: &[NaiveDate], degree: usize) -> Vec<String> {
    let mut out = vec!["intercept".to_string()];
    out.extend((1..=degree).map(|p| format!("poly:{p}")));
    out.extend(knots.iter().map(|k| format!("change:{}", k.format("%Y-%m-%d"))));
    out
}

/// One-hot seasonal design for the active groups.
pub fn season_design(dates: &[NaiveDate], g: SeasonGranularity) -> Matrix {
    let mut x = Matrix::zeros(dates.len(), g.n_columns());
    for (i, date) in dates.iter().enumerate() {
        let mut offset = 0;
        if g.weekday {
            x.set(i, offset + date.weekday().num_days_from_monday() as usize, 1.0);
            offset += 7;
        }
        if g.day_of_month {
            x.set(i, offset + date.day0() as usize, 1.0);
            offset += 31;
        }
        if g.month {
            x.set(i, offset + date.month0() as usize, 1.0);
        }
    }
    x
}

/// Both design matrices for `dates`.
pub fn build_design(
    dates: &[NaiveDate],
    map: &DateMap,
    knots: &[NaiveDate],
    degree: usize,
    granularity: SeasonGranularity,
) -> Result<DesignPair> {
    let z = trend_design(dates, knots, degree, map)?;
    Ok(DesignPair {
        x: season_design(dates, granularity),
        z,
        degree,
        x_labels: granularity.labels(),
        z_labels: trend_labels(knots, degree),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn delta_values() {
        let map = DateMap::new(d("2020-01-01"), d("2020-01-11")).unwrap();
        assert_eq!(map.span_days, 11);
        assert_eq!(map.delta(d("2020-01-01")).unwrap(), 0.0);
        assert_eq!(map.delta(d("2020-01-11")).unwrap(), 10.0 / 11.0);
        assert_eq!(map.delta(d("2020-01-22")).unwrap(), 21.0 / 11.0);
        assert!(matches!(map.delta(d("2019-12-31")), Err(Error::BeforeOrigin { .. })));
    }

    #[test]
    fn knots_for_spans() {
        let first = d("2020-01-01");
        let k100 = place_knots(first, first + Duration::days(99), 30).unwrap();
        assert_eq!(
            k100.knots,
            vec![first + Duration::days(30), first + Duration::days(60), first + Duration::days(90)]
        );
        assert!(place_knots(first, first + Duration::days(24), 30).unwrap().is_empty());
        assert_eq!(place_knots(first, first + Duration::days(599), 30).unwrap().len(), 19);
        // a knot landing exactly on the last date is excluded
        assert_eq!(place_knots(first, first + Duration::days(90), 30).unwrap().len(), 2);
    }

    #[test]
    fn trend_rows() {
        let map = DateMap { origin: d("2020-01-01"), span_days: 10 };
        let z = trend_design(&[d("2020-01-06")], &[], 1, &map).unwrap();
        assert_eq!(z.row(0), &[1.0, 0.5]);

        let knot = [d("2020-01-06")];
        let z = trend_design(&[d("2020-01-04"), d("2020-01-08")], &knot, 1, &map).unwrap();
        assert_eq!(z.get(0, 2), 0.0);
        assert!((z.get(1, 2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn season_rows() {
        let thu = d("2020-01-02");
        let x = season_design(&[thu], SeasonGranularity::WEEKDAY);
        assert_eq!(x.cols(), 7);
        assert_eq!(x.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);

        let wed = d("2019-12-11");
        let g = SeasonGranularity::ALL;
        let x = season_design(&[wed], g);
        let labels = g.labels();
        assert_eq!(x.cols(), 50);
        let ones: Vec<_> = (0..50).filter(|&c| x.get(0, c) == 1.0).map(|c| labels[c].as_str()).collect();
        assert_eq!(ones, vec!["weekday:Wed", "dom:11", "month:Dec"]);
        assert_eq!(x.row(0).iter().filter(|v| **v == 0.0).count(), 47);
    }

    #[test]
    fn dom_31_absent_in_february() {
        let dates: Vec<_> = (0..29).map(|i| d("2020-02-01") + Duration::days(i)).collect();
        let x = season_design(&dates, SeasonGranularity::ALL);
        let c = SeasonGranularity::ALL.labels().iter().position(|l| l == "dom:31").unwrap();
        assert!(x.column(c).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn granularity_thresholds() {
        assert_eq!(granularity_for(29), SeasonGranularity::WEEKDAY);
        assert_eq!(granularity_for(30), SeasonGranularity::WEEKDAY_MONTH);
        assert_eq!(granularity_for(119), SeasonGranularity::WEEKDAY_MONTH);
        assert_eq!(granularity_for(120), SeasonGranularity::ALL);
        assert_eq!(
            [SeasonGranularity::WEEKDAY, SeasonGranularity::WEEKDAY_MONTH, SeasonGranularity::ALL].map(|g| g.n_columns()),
            [7, 19, 50]
        );
    }

    proptest! {
        #[test]
        fn delta_step_is_one_over_span(off in 0i64..2000, span in 1i64..1000) {
            let origin = d("2019-06-15");
            let map = DateMap { origin, span_days: span };
            let t = origin + Duration::days(off);
            let step = map.delta(t + Duration::days(1)).unwrap() - map.delta(t).unwrap();
            prop_assert!((step - 1.0 / span as f64).abs() < 1e-12);
        }

        #[test]
        fn design_structure(n in 1usize..80, span in 40i64..400, degree in 0usize..3, start in 0i64..3000) {
            let first = d("2015-01-01") + Duration::days(start);
            let last = first + Duration::days(span - 1);
            let map = DateMap::new(first, last).unwrap();
            let knots = place_knots(first, last, 30).unwrap();
            let dates: Vec<_> = (0..n as i64).map(|i| first + Duration::days(i * span / n as i64)).collect();
            let g = granularity_for(n);
            let dp = build_design(&dates, &map, &knots.knots, degree, g).unwrap();
            prop_assert_eq!(dp.z.cols(), degree + knots.len() + 1);
            prop_assert_eq!(dp.x.cols(), g.n_columns());
            prop_assert_eq!(dp.z_labels.len(), dp.z.cols());
            for i in 0..n {
                prop_assert_eq!(dp.z.get(i, 0), 1.0);
                let ones: f64 = dp.x.row(i).iter().sum();
                prop_assert_eq!(ones as usize, [g.weekday, g.day_of_month, g.month].iter().filter(|b| **b).count());
                prop_assert!(dp.x.row(i).iter().all(|v| *v == 0.0 || *v == 1.0));
                for (j, k) in knots.knots.iter().enumerate() {
                    let v = dp.z.get(i, degree + 1 + j);
                    prop_assert!(v >= 0.0);
                    if dates[i] < *k {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
            let again = build_design(&dates, &map, &knots.knots, degree, g).unwrap();
            prop_assert_eq!(again, dp);
        }
    }
}
