//! Forecasting daily sold quantities of menu items from point-of-sale data.
//!
//! Two Bayesian generalized additive models are provided, one with a normal
//! and one with a negative-binomial response. Both combine a truncated power
//! spline trend, whose knots act as candidate change points, with one-hot
//! seasonal effects for weekday, day of month and month of year. Shrinkage
//! priors (Laplace or horseshoe) keep the fitted trend changes and seasonal
//! effects sparse. Models are fitted by maximizing the posterior density and
//! prediction intervals come from Monte-Carlo simulation with sampled future
//! trend changes.
//!
//! # Example
//!
//! ```
//! use chrono::NaiveDate;
//! use menucast_core::{fit_map, predict_mean, Likelihood, ModelSpec, SalesSeries};
//!
//! let first = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
//! let values = (0..60).map(|i| Some(10 + (i % 7) as u64)).collect();
//! let series = SalesSeries::new("soup", first, values).unwrap();
//! let spec = ModelSpec::standard(Likelihood::NegBinom, series.n_observed());
//! let est = fit_map(&series, &spec).unwrap();
//! let next = series.last_date().succ_opt().unwrap();
//! let mean = predict_mean(&est, &[next]).unwrap();
//! assert!(mean[0] > 0.0);
//! ```

pub mod calendar;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod forecast;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod synth;
pub mod tuning;

pub use calendar::{granularity_for, place_knots, DateMap, DesignPair, KnotSet, SeasonGranularity};
pub use error::{Error, Result};
pub use fit::{fit_map, fit_map_with, sparsify, FitOptions, FitReport, MapEstimate};
pub use forecast::{extend_trend, in_sample_coverage, predict_mean, sample_predictive, ForecastBundle};
pub use ingest::{aggregate_daily, classify_days, LineItem, OpenDayCalendar, SalesSeries};
pub use metrics::{interval_metrics, point_metrics, seasonal_naive, MetricReport};
pub use model::{Likelihood, ModelSpec, ParamVector, PriorConfig, PriorFamily};
pub use tuning::{make_folds, standard_settings, stepwise_cv, FoldPlan, TuneResult};
