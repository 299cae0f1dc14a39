//! Cross-validated comparison of the two models against naive baselines.
//!
//! Every item is split with an expanding-window fold plan over its observed
//! days. Model folds are fitted with the standard settings for the fold's
//! training size. Per-item figures are unweighted means over folds; the
//! aggregate is the unweighted mean over all folds of all items.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::forecast::sample_predictive;
use crate::ingest::SalesSeries;
use crate::metrics::{interval_metrics, point_metrics, MetricReport, METRIC_NAMES};
use crate::model::{Likelihood, ModelSpec, PriorConfig, PriorFamily};
use crate::seed::derive;
use crate::tuning::{fit_fold, make_folds, standard_settings, Fold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NORMAL")]
    Normal,
    #[serde(rename = "NEGBINOM")]
    NegBinom,
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "seasonal-naive")]
    SeasonalNaive,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Normal, Method::NegBinom, Method::Naive, Method::SeasonalNaive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Normal => "NORMAL",
            Method::NegBinom => "NEGBINOM",
            Method::Naive => "naive",
            Method::SeasonalNaive => "seasonal-naive",
        }
    }

    fn likelihood(self) -> Option<Likelihood> {
        match self {
            Method::Normal => Some(Likelihood::Normal),
            Method::NegBinom => Some(Likelihood::NegBinom),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_folds: usize,
    pub test_size: usize,
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub prior: PriorFamily,
    pub degree: usize,
    pub knot_spacing: i64,
    /// Fixed `(τ1, τ2, τ3)`; standard settings per fold when absent.
    pub taus: Option<(f64, f64, f64)>,
    /// Season length for MASE scaling of MSIS.
    pub msis_season: usize,
    pub fit: FitOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_folds: 15,
            test_size: 14,
            alpha: 0.05,
            n_samples: 1000,
            seed: 0,
            methods: Method::ALL.to_vec(),
            prior: PriorFamily::Lasso,
            degree: 1,
            knot_spacing: 30,
            taus: None,
            msis_season: 7,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodEvaluation {
    pub method: Method,
    pub mean: MetricReport,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub item_id: String,
    pub method: Option<Method>,
    pub fold: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemEvaluation {
    pub item_id: String,
    pub n_obs: usize,
    pub methods: Vec<MethodEvaluation>,
    pub failures: Vec<Failure>,
}

impl ItemEvaluation {
    pub fn method(&self, m: Method) -> Option<&MethodEvaluation> {
        self.methods.iter().find(|e| e.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEvaluation {
    pub items: Vec<ItemEvaluation>,
    pub aggregate: Vec<(Method, MetricReport)>,
    pub failures: Vec<Failure>,
}

/// Training days up to `end` in calendar order, `None` where missing.
fn calendar_train(series: &SalesSeries, end: NaiveDate) -> Vec<Option<f64>> {
    series
        .entries()
        .take_while(|(d, _)| *d <= end)
        .map(|(_, v)| v.map(|v| v as f64))
        .collect()
}

/// Seasonal naive forecast on the calendar: each date gets the most recent
/// observed training value on a day `m·j` days earlier (last observation if
/// there is none).
pub fn seasonal_naive_dates(train: &[(NaiveDate, f64)], m: i64, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    let last = train.last().ok_or(Error::Empty("training observations"))?;
    if m < 1 {
        return Err(Error::InvalidArgument(format!("season length must be >= 1, got {m}")));
    }
    let lookup: BTreeMap<NaiveDate, f64> = train.iter().copied().collect();
    Ok(dates
        .iter()
        .map(|d| {
            let back = (*d - last.0).num_days().max(0);
            // first same-phase day not after the last training date
            let mut j = (back + m - 1) / m;
            j = j.max(1);
            let first = train[0].0;
            loop {
                let cand = *d - chrono::Duration::days(j * m);
                if cand < first {
                    return last.1;
                }
                if let Some(v) = lookup.get(&cand) {
                    return *v;
                }
                j += 1;
            }
        })
        .collect())
}

fn evaluate_fold(
    series: &SalesSeries,
    obs: &[(NaiveDate, u64)],
    fold: &Fold,
    method: Method,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    let test = &obs[fold.test.clone()];
    let actual: Vec<f64> = test.iter().map(|o| o.1 as f64).collect();
    let dates: Vec<NaiveDate> = test.iter().map(|o| o.0).collect();
    let train_obs: Vec<(NaiveDate, f64)> = obs[..fold.train_end].iter().map(|o| (o.0, o.1 as f64)).collect();
    let train_cal = calendar_train(series, train_obs.last().ok_or(Error::Empty("training observations"))?.0);

    match method.likelihood() {
        None => {
            let m = if method == Method::Naive { 1 } else { 7 };
            let pred = seasonal_naive_dates(&train_obs, m, &dates)?;
            point_metrics(&actual, &pred, &train_cal)
        }
        Some(likelihood) => {
            let (t1, t2, t3) = cfg.taus.unwrap_or_else(|| standard_settings(fold.train_end));
            let spec = ModelSpec {
                likelihood,
                prior: PriorConfig {
                    family: cfg.prior,
                    tau1: t1,
                    tau2: t2,
                    tau3: t3,
                },
                degree: cfg.degree,
                knot_spacing: cfg.knot_spacing,
                granularity: crate::calendar::granularity_for(fold.train_end),
            };
            let (est, _) = fit_fold(obs, fold, &spec, &cfg.fit)?;
            let seed = derive(cfg.seed, series.item_id(), &[fold.index as u64, method as u64]);
            let bundle = sample_predictive(&est, &dates, cfg.n_samples, cfg.alpha, seed)?;
            let report = point_metrics(&actual, &bundle.point, &train_cal)?;
            let im = interval_metrics(&actual, &bundle.lower, &bundle.upper, cfg.alpha, &train_cal, cfg.msis_season)?;
            Ok(report.merge_intervals(&im))
        }
    }
}

/// Runs every configured method on every fold of one item. Fails only when
/// the fold plan is infeasible; failed folds are listed in the result.
pub fn evaluate_item(series: &SalesSeries, cfg: &EvalConfig) -> Result<ItemEvaluation> {
    let obs = series.observed();
    let plan = make_folds(obs.len(), cfg.n_folds, cfg.test_size)?;
    let jobs: Vec<(Method, &Fold)> = cfg
        .methods
        .iter()
        .flat_map(|m| plan.folds.iter().map(move |f| (*m, f)))
        .collect();
    let results: Vec<Result<MetricReport>> = jobs
        .par_iter()
        .map(|(m, f)| evaluate_fold(series, &obs, f, *m, cfg))
        .collect();

    let mut methods = Vec::new();
    let mut failures = Vec::new();
    for (k, &method) in cfg.methods.iter().enumerate() {
        let mut folds = Vec::new();
        for (f, fold) in plan.folds.iter().enumerate() {
            match &results[k * plan.folds.len() + f] {
                Ok(report) => folds.push(FoldMetrics {
                    fold: fold.index,
                    n_train: fold.train_end,
                    report: *report,
                }),
                Err(e) => failures.push(Failure {
                    item_id: series.item_id().to_string(),
                    method: Some(method),
                    fold: Some(fold.index),
                    reason: e.to_string(),
                }),
            }
        }
        let reports: Vec<MetricReport> = folds.iter().map(|f| f.report).collect();
        methods.push(MethodEvaluation {
            method,
            mean: MetricReport::mean(&reports),
            folds,
        });
    }
    Ok(ItemEvaluation {
        item_id: series.item_id().to_string(),
        n_obs: obs.len(),
        methods,
        failures,
    })
}

/// Evaluates all items; items whose fold plan is infeasible are recorded as
/// failures and left out of the aggregate.
pub fn evaluate_suite(series: &[SalesSeries], cfg: &EvalConfig) -> SuiteEvaluation {
    let per_item: Vec<Result<ItemEvaluation>> = series.iter().map(|s| evaluate_item(s, cfg)).collect();
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in series.iter().zip(per_item) {
        match r {
            Ok(item) => {
                failures.extend(item.failures.iter().cloned());
                items.push(item);
            }
            Err(e) => failures.push(Failure {
                item_id: s.item_id().to_string(),
                method: None,
                fold: None,
                reason: e.to_string(),
            }),
        }
    }
    let aggregate = cfg
        .methods
        .iter()
        .map(|&m| {
            let all: Vec<MetricReport> = items
                .iter()
                .filter_map(|i| i.method(m))
                .flat_map(|e| e.folds.iter().map(|f| f.report))
                .collect();
            (m, MetricReport::mean(&all))
        })
        .collect();
    SuiteEvaluation {
        items,
        aggregate,
        failures,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.10}"))
}

impl SuiteEvaluation {
    /// Rows `item,method,fold,n_train,p,<metrics>` for every fold.
    pub fn write_folds_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = ["item", "method", "fold", "n_train", "p"].into_iter().chain(METRIC_NAMES).collect();
        w.write_record(&header)?;
        for item in &self.items {
            for m in &item.methods {
                for f in &m.folds {
                    let mut rec = vec![
                        item.item_id.clone(),
                        m.method.to_string(),
                        f.fold.to_string(),
                        f.n_train.to_string(),
                        f.report.p.to_string(),
                    ];
                    rec.extend(f.report.values().iter().map(|v| fmt_opt(*v)));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-item means followed by the aggregate rows (item `ALL`).
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = ["item", "method", "folds"].into_iter().chain(METRIC_NAMES).collect();
        w.write_record(&header)?;
        let mut row = |item: &str, method: Method, n: usize, r: &MetricReport| -> Result<()> {
            let mut rec = vec![item.to_string(), method.to_string(), n.to_string()];
            rec.extend(r.values().iter().map(|v| fmt_opt(*v)));
            w.write_record(&rec)?;
            Ok(())
        };
        for item in &self.items {
            for m in &item.methods {
                row(&item.item_id, m.method, m.folds.len(), &m.mean)?;
            }
        }
        for (m, r) in &self.aggregate {
            let n = self.items.iter().filter_map(|i| i.method(*m)).map(|e| e.folds.len()).sum();
            row("ALL", *m, n, r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut rows = Vec::new();
        for item in &self.items {
            for m in &item.methods {
                rows.push((item.item_id.clone(), m.method.to_string(), m.mean));
            }
        }
        for (m, r) in &self.aggregate {
            rows.push(("ALL".to_string(), m.to_string(), *r));
        }
        let mut out = crate::metrics::render_table(("item", "method"), &rows);
        if !self.failures.is_empty() {
            out.push_str("\nfailures:\n");
            for f in &self.failures {
                let method = f.method.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
                let fold = f.fold.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
                out.push_str(&format!("  {} {} fold {}: {}\n", f.item_id, method, fold, f.reason));
            }
        }
        out
    }
}
