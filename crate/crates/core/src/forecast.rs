//! Point forecasts and Monte-Carlo prediction intervals.
//!
//! Point forecasts apply the fitted coefficients to the training basis, so the
//! trend continues linearly past the last knot. For intervals the knot grid is
//! continued into the forecast period and the new trend changes are drawn from
//! a Laplace distribution whose scale is the mean absolute historical change.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::Serialize;

use crate::calendar::{truncated_power, DesignPair};
use crate::error::{Error, Result};
use crate::fit::MapEstimate;
use crate::ingest::SalesSeries;
use crate::model::Likelihood;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Fewest replicates accepted by [`sample_predictive`].
pub const MIN_SAMPLES: usize = 100;

fn linear_predictor(est: &MapEstimate, design: &DesignPair) -> Vec<f64> {
    let mut eta = design.x.mul_vec(&est.beta());
    for (e, t) in eta.iter_mut().zip(design.z.mul_vec(&est.gamma())) {
        *e += t;
    }
    eta
}

fn response(est: &MapEstimate, eta: f64) -> f64 {
    match est.spec.likelihood {
        Likelihood::Normal => eta,
        Likelihood::NegBinom => eta.exp(),
    }
}

/// Expected value for each date: `Xβ + Zγ`, exponentiated for the negative
/// binomial model.
pub fn predict_mean(est: &MapEstimate, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    if dates.is_empty() {
        return Ok(Vec::new());
    }
    let design = est.design(dates)?;
    Ok(linear_predictor(est, &design).into_iter().map(|e| response(est, e)).collect())
}

/// Knots added beyond the training period and the scale of their changes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendExtension {
    pub new_knots: Vec<NaiveDate>,
    pub b_hat: f64,
}

/// Last training date implied by the estimate's date map.
pub fn last_training_date(est: &MapEstimate) -> NaiveDate {
    est.date_map.origin + Duration::days(est.date_map.span_days - 1)
}

/// Continues the knot grid up to the last of `dates` and estimates the scale
/// of future changes from the unmasked historical change estimates.
pub fn extend_trend(est: &MapEstimate, dates: &[NaiveDate]) -> Result<TrendExtension> {
    let origin = est.date_map.origin;
    if let Some(&d) = dates.iter().find(|d| **d < origin) {
        return Err(Error::BeforeOrigin { date: d, origin });
    }
    let changes = est.raw_changes();
    let b_hat = if changes.is_empty() {
        log::warn!("no historical trend changes; future trend changes are not sampled");
        0.0
    } else {
        changes.iter().map(|c| c.abs()).sum::<f64>() / changes.len() as f64
    };
    let k = est.knots.spacing;
    let end = dates.iter().copied().max();
    let mut new_knots = Vec::new();
    if let Some(end) = end {
        let last = last_training_date(est);
        let mut j = est.knots.len() as i64 + 1;
        loop {
            let knot = origin + Duration::days(j * k);
            if knot > end {
                break;
            }
            // grid points not used in training because they fell on or after the last date
            if knot >= last {
                new_knots.push(knot);
            }
            j += 1;
        }
    }
    Ok(TrendExtension { new_knots, b_hat })
}

/// Inverse-CDF draw from a zero-mean Laplace distribution with scale `b`.
fn laplace_draw<R: Rng>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One negative-binomial draw as a gamma-Poisson mixture.
fn negbinom_draw<R: Rng>(rng: &mut R, mu: f64, phi: f64) -> Result<f64> {
    if !(mu.is_finite() && phi.is_finite()) {
        return Err(Error::NonFinite("negative-binomial mean or dispersion"));
    }
    if mu <= 0.0 {
        return Ok(0.0);
    }
    let gamma = Gamma::new(phi, mu / phi).map_err(|e| Error::InvalidArgument(format!("gamma draw: {e}")))?;
    let lambda = gamma.sample(rng);
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(format!("poisson draw (lambda={lambda}): {e}")))?;
    Ok(poisson.sample(rng))
}

/// Nearest-rank empirical quantile of sorted values.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = (q * m as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

/// Forecast for a set of future dates with its Monte-Carlo replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastBundle {
    pub dates: Vec<NaiveDate>,
    pub point: Vec<f64>,
    /// `samples[r][i]` is replicate `r` for date `i`.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub n_samples: usize,
    pub b_hat: f64,
    pub new_knots: Vec<NaiveDate>,
    pub seed: u64,
}

impl ForecastBundle {
    /// `(lower, upper)` bounds at level `1 − alpha` from the stored samples.
    pub fn interval(&self, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_alpha(alpha)?;
        Ok(quantile_bounds(&self.samples, self.dates.len(), alpha))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "point", "lower", "upper"])?;
        for i in 0..self.dates.len() {
            w.write_record([
                self.dates[i].to_string(),
                self.point[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide layout: one row per replicate, one column per date.
    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = std::iter::once("replicate".to_string())
            .chain(self.dates.iter().map(|d| d.to_string()))
            .collect();
        w.write_record(&header)?;
        for (r, row) in self.samples.iter().enumerate() {
            let rec: Vec<String> = std::iter::once(r.to_string()).chain(row.iter().map(|v| v.to_string())).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn quantile_bounds(samples: &[Vec<f64>], p: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    let mut col = Vec::with_capacity(samples.len());
    for i in 0..p {
        col.clear();
        col.extend(samples.iter().map(|r| r[i]));
        col.sort_by(f64::total_cmp);
        lower.push(nearest_rank(&col, alpha / 2.0));
        upper.push(nearest_rank(&col, 1.0 - alpha / 2.0));
    }
    (lower, upper)
}

/// Draws `n` replicates of the response at `dates`, adding sampled trend
/// changes at `ext.new_knots`.
fn simulate(
    est: &MapEstimate,
    dates: &[NaiveDate],
    ext: &TrendExtension,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let design = est.design(dates)?;
    let eta = linear_predictor(est, &design);
    // truncated-power columns for the new knots
    let extra: Vec<Vec<f64>> = ext
        .new_knots
        .iter()
        .map(|k| {
            let dk = est.date_map.delta(*k)?;
            dates
                .iter()
                .map(|d| Ok(truncated_power(est.date_map.delta(*d)? - dk, est.spec.degree)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let noise = match est.spec.likelihood {
        Likelihood::Normal => Some(
            Normal::new(0.0, est.sigma().unwrap_or(0.0))
                .map_err(|e| Error::InvalidArgument(format!("normal draw: {e}")))?,
        ),
        Likelihood::NegBinom => None,
    };
    let phi = est.dispersion_a().map(|a| 1.0 / (a * a));
    let sample_changes = ext.b_hat > 0.0 && !ext.new_knots.is_empty();

    let mut out = Vec::with_capacity(n);
    let mut changes = vec![0.0; ext.new_knots.len()];
    for _ in 0..n {
        if sample_changes {
            for c in changes.iter_mut() {
                *c = laplace_draw(rng, ext.b_hat);
            }
        }
        let mut row = Vec::with_capacity(dates.len());
        for i in 0..dates.len() {
            let mut e = eta[i];
            if sample_changes {
                e += changes.iter().zip(&extra).map(|(c, col)| c * col[i]).sum::<f64>();
            }
            let y = match (noise, phi) {
                (Some(noise), _) => e + noise.sample(rng),
                (None, Some(phi)) => negbinom_draw(rng, e.exp(), phi)?,
                (None, None) => unreachable!("negative binomial estimate without dispersion"),
            };
            row.push(y);
        }
        out.push(row);
    }
    Ok(out)
}

/// Point forecasts and `(1 − alpha)` Monte-Carlo intervals for `dates`.
pub fn sample_predictive(
    est: &MapEstimate,
    dates: &[NaiveDate],
    n_samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<ForecastBundle> {
    check_alpha(alpha)?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let ext = extend_trend(est, dates)?;
    sample_with_extension(est, dates, &ext, n_samples, alpha, seed)
}

/// Like [`sample_predictive`] with an explicit trend extension.
pub fn sample_with_extension(
    est: &MapEstimate,
    dates: &[NaiveDate],
    ext: &TrendExtension,
    n_samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<ForecastBundle> {
    check_alpha(alpha)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let point = predict_mean(est, dates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = simulate(est, dates, ext, n_samples, &mut rng)?;
    let (lower, upper) = quantile_bounds(&samples, dates.len(), alpha);
    Ok(ForecastBundle {
        dates: dates.to_vec(),
        point,
        samples,
        lower,
        upper,
        alpha,
        n_samples,
        b_hat: ext.b_hat,
        new_knots: ext.new_knots.clone(),
        seed,
    })
}

/// Fraction of observed training days inside the `(1 − alpha)` interval.
pub fn in_sample_coverage(est: &MapEstimate, series: &SalesSeries, alpha: f64, n_samples: usize, seed: u64) -> Result<f64> {
    let obs = series.observed();
    if obs.is_empty() {
        return Err(Error::Empty("series"));
    }
    let dates: Vec<NaiveDate> = obs.iter().map(|o| o.0).collect();
    let none = TrendExtension {
        new_knots: Vec::new(),
        b_hat: 0.0,
    };
    let bundle = sample_with_extension(est, &dates, &none, n_samples, alpha, seed)?;
    let inside = obs
        .iter()
        .enumerate()
        .filter(|(i, o)| {
            let y = o.1 as f64;
            bundle.lower[*i] <= y && y <= bundle.upper[*i]
        })
        .count();
    Ok(inside as f64 / obs.len() as f64)
}

/// One value of the long-format plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub date: NaiveDate,
    pub series: &'static str,
    pub value: f64,
}

/// Trend, seasonality, expected value, in-sample interval and observations
/// for every calendar day of the training span. For the negative binomial
/// model trend and season are on the response scale (season as a factor).
pub fn plot_data(est: &MapEstimate, series: &SalesSeries, alpha: f64, n_samples: usize, seed: u64) -> Result<Vec<PlotPoint>> {
    let dates: Vec<NaiveDate> = series.entries().map(|e| e.0).collect();
    let design = est.design(&dates)?;
    let trend = design.z.mul_vec(&est.gamma());
    let season = design.x.mul_vec(&est.beta());
    let none = TrendExtension {
        new_knots: Vec::new(),
        b_hat: 0.0,
    };
    let bundle = sample_with_extension(est, &dates, &none, n_samples, alpha, seed)?;
    let nb = est.spec.likelihood == Likelihood::NegBinom;
    let mut out = Vec::with_capacity(dates.len() * 6);
    for (i, (date, y)) in series.entries().enumerate() {
        let (t, s) = if nb { (trend[i].exp(), season[i].exp()) } else { (trend[i], season[i]) };
        out.push(PlotPoint { date, series: "trend", value: t });
        out.push(PlotPoint { date, series: "season", value: s });
        out.push(PlotPoint { date, series: "expected", value: bundle.point[i] });
        out.push(PlotPoint { date, series: "lower", value: bundle.lower[i] });
        out.push(PlotPoint { date, series: "upper", value: bundle.upper[i] });
        if let Some(y) = y {
            out.push(PlotPoint { date, series: "observed", value: y as f64 });
        }
    }
    Ok(out)
}

pub fn write_plot_csv<W: Write>(points: &[PlotPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "series", "value"])?;
    for p in points {
        w.write_record([p.date.to_string(), p.series.to_string(), p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
