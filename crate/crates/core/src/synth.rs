//! Synthetic sales generator.
//!
//! Daily means are `exp(level + trend + weekday + day-of-month + yearly)` with
//! negative-binomial noise. Venue closures become missing days. All draws come
//! from ChaCha streams derived from a single seed.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LineItem, SalesSeries};
use crate::seed::derive;

/// Change of the log mean starting at `day`: a level jump plus a slope (per day).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendChange {
    pub day: usize,
    pub level: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub start: NaiveDate,
    pub n_days: usize,
    /// Mean on an average day before any change.
    pub base_mean: f64,
    /// Log effects Monday..Sunday.
    pub weekday: [f64; 7],
    /// Amplitude of a smooth day-of-month cycle (log scale).
    pub month_cycle: f64,
    /// Amplitude of the yearly cycle (log scale).
    pub yearly: f64,
    pub yearly_phase: f64,
    pub changes: Vec<TrendChange>,
    /// Negative-binomial dispersion `φ`; `None` gives Poisson counts.
    pub phi: Option<f64>,
    /// Days the venue is closed, as offsets from `start`.
    pub closed: Vec<usize>,
}

impl SynthSpec {
    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.n_days).map(|i| self.start + Duration::days(i as i64)).collect()
    }

    /// Expected count for every day.
    pub fn means(&self) -> Vec<f64> {
        self.dates()
            .iter()
            .enumerate()
            .map(|(t, date)| {
                let mut eta = self.base_mean.ln() + self.weekday[date.weekday().num_days_from_monday() as usize];
                eta += self.month_cycle * (2.0 * PI * (date.day() as f64 - 1.0) / 31.0).cos();
                eta += self.yearly * (2.0 * PI * date.ordinal0() as f64 / 365.25 + self.yearly_phase).sin();
                for c in &self.changes {
                    if t >= c.day {
                        eta += c.level + c.slope * (t - c.day) as f64;
                    }
                }
                eta.exp()
            })
            .collect()
    }
}

/// A generated series with the truth it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub series: SalesSeries,
    pub means: Vec<f64>,
    pub spec: SynthSpec,
}

/// One count with mean `mu`: gamma–Poisson mixture for finite `phi`.
pub fn draw_count<R: Rng>(rng: &mut R, mu: f64, phi: Option<f64>) -> Result<u64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::NonFinite("synthetic mean"));
    }
    let lambda = match phi {
        Some(phi) => Gamma::new(phi, mu / phi)
            .map_err(|e| Error::InvalidArgument(format!("gamma: {e}")))?
            .sample(rng),
        None => mu,
    };
    if lambda <= 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(lambda)
        .map_err(|e| Error::InvalidArgument(format!("poisson: {e}")))?
        .sample(rng);
    Ok(draw as u64)
}

/// Counts for the given means.
pub fn simulate_counts(means: &[f64], phi: Option<f64>, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    means.iter().map(|m| draw_count(&mut rng, *m, phi)).collect()
}

/// Draws a series. The first and last day are forced open with at least one sale.
pub fn generate(spec: &SynthSpec, item_id: &str, seed: u64) -> Result<SynthSeries> {
    if spec.n_days < 2 {
        return Err(Error::InvalidArgument("need at least two days".into()));
    }
    let means = spec.means();
    let mut counts = simulate_counts(&means, spec.phi, seed)?;
    let last = spec.n_days - 1;
    counts[0] = counts[0].max(1);
    counts[last] = counts[last].max(1);
    let mut values: Vec<Option<u64>> = counts.into_iter().map(Some).collect();
    for &c in &spec.closed {
        if c > 0 && c < last {
            values[c] = None;
        }
    }
    Ok(SynthSeries {
        series: SalesSeries::new(item_id, spec.start, values)?,
        means,
        spec: spec.clone(),
    })
}

pub const LEVEL_SHIFT_DAYS: usize = 540;
pub const LEVEL_SHIFT_DAY: usize = 270;

/// 540 days, weekday effects and one level shift by `e^0.8` at day 270.
pub fn level_shift_spec() -> SynthSpec {
    SynthSpec {
        start: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
        n_days: LEVEL_SHIFT_DAYS,
        base_mean: 20.0,
        weekday: [-0.2, -0.15, -0.1, 0.0, 0.25, 0.4, -0.2],
        month_cycle: 0.0,
        yearly: 0.0,
        yearly_phase: 0.0,
        changes: vec![TrendChange {
            day: LEVEL_SHIFT_DAY,
            level: 0.8,
            slope: 0.0,
        }],
        phi: Some(10.0),
        closed: Vec::new(),
    }
}

pub fn level_shift_series(seed: u64) -> Result<SynthSeries> {
    generate(&level_shift_spec(), "level-shift", derive(seed, "level-shift", &[]))
}

/// Venue closures shared by a suite: Christmas, New Year and about 1.5% random days.
pub fn venue_closures(start: NaiveDate, n_days: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "closures", &[]));
    (1..n_days.saturating_sub(1))
        .filter(|&i| {
            let d = start + Duration::days(i as i64);
            let holiday = (d.month(), d.day()) == (12, 25) || (d.month(), d.day()) == (1, 1);
            let random = rng.random::<f64>() < 0.015;
            holiday || random
        })
        .collect()
}

/// Benchmark suite: weekly, monthly and yearly effects, over-dispersion,
/// shared closures and one to three trend changes per series.
pub fn benchmark_suite(n_series: usize, seed: u64) -> Result<Vec<SynthSeries>> {
    let start = NaiveDate::from_ymd_opt(2019, 1, 2).unwrap();
    let n_days = 700;
    let closed = venue_closures(start, n_days, seed);
    (0..n_series)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "suite-spec", &[i as u64]));
            let mut weekday = [0.0; 7];
            for w in weekday.iter_mut() {
                *w = rng.random_range(-0.35..0.35);
            }
            let n_changes = rng.random_range(1..=3);
            let mut changes: Vec<TrendChange> = (0..n_changes)
                .map(|_| TrendChange {
                    day: rng.random_range(100..n_days - 60),
                    level: rng.random_range(0.2..0.6) * if rng.random::<bool>() { 1.0 } else { -1.0 },
                    slope: rng.random_range(-4e-4..4e-4),
                })
                .collect();
            changes.sort_by_key(|c| c.day);
            let spec = SynthSpec {
                start,
                n_days,
                base_mean: rng.random_range(4.0..40.0),
                weekday,
                month_cycle: rng.random_range(0.05..0.2),
                yearly: rng.random_range(0.1..0.4),
                yearly_phase: rng.random_range(0.0..2.0 * PI),
                changes,
                phi: Some(rng.random_range(2.0..25.0)),
                closed: closed.clone(),
            };
            generate(&spec, &format!("item{:02}", i + 1), derive(seed, "suite-counts", &[i as u64]))
        })
        .collect()
}

/// Line items reproducing the series: every sold unit is split into
/// transactions of one to three units spread over opening hours.
pub fn to_line_items(series: &[SalesSeries], seed: u64) -> Result<Vec<LineItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "line-items", &[]));
    let open = NaiveTime::from_hms_opt(11, 0, 0).unwrap();
    let mut out = Vec::new();
    for s in series {
        for (date, v) in s.entries() {
            let mut rest = v.unwrap_or(0);
            while rest > 0 {
                let q = rng.random_range(1..=3u64).min(rest);
                rest -= q;
                let minute = rng.random_range(0..660i64);
                let ts = date.and_time(open) + Duration::minutes(minute);
                out.push(LineItem::new(s.item_id(), ts, q)?);
            }
        }
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)));
    Ok(out)
}

/// Writes line items as `item_id,timestamp,quantity`.
pub fn write_line_items<W: std::io::Write>(items: &[LineItem], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item_id", "timestamp", "quantity"])?;
    for it in items {
        w.write_record([
            it.item_id.clone(),
            it.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            it.quantity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_item, read_line_items, OpenDayCalendar};

    #[test]
    fn level_shift_shape() {
        let s = level_shift_series(1).unwrap();
        assert_eq!(s.series.span_days(), 540);
        let ratio = s.means[300] / s.means[300 - 35];
        assert!((ratio - 0.8f64.exp()).abs() < 1e-9);
        assert_eq!(s.series.n_missing(), 0);
    }

    #[test]
    fn deterministic() {
        assert_eq!(benchmark_suite(2, 5).unwrap(), benchmark_suite(2, 5).unwrap());
        assert_ne!(benchmark_suite(1, 5).unwrap()[0].series, benchmark_suite(1, 6).unwrap()[0].series);
    }

    #[test]
    fn overdispersed_counts() {
        let means = vec![20.0; 20000];
        let y = simulate_counts(&means, Some(4.0), 3).unwrap();
        let n = y.len() as f64;
        let m = y.iter().sum::<u64>() as f64 / n;
        let v = y.iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / n;
        assert!((m - 20.0).abs() < 0.3, "{m}");
        assert!((v - 120.0).abs() < 8.0, "{v}");
    }

    #[test]
    fn line_items_round_trip() {
        let suite = benchmark_suite(3, 11).unwrap();
        let series: Vec<SalesSeries> = suite.iter().map(|s| s.series.clone()).collect();
        let items = to_line_items(&series, 11).unwrap();
        let mut buf = Vec::new();
        write_line_items(&items, &mut buf).unwrap();
        let parsed = read_line_items(buf.as_slice()).unwrap();
        assert_eq!(parsed, items);
        let cal = OpenDayCalendar::from_items(&parsed);
        for s in &series {
            let (back, _) = ingest_item(&parsed, &cal, s.item_id()).unwrap();
            assert_eq!(&back, s);
        }
    }
}
