//! Standard prior settings, expanding-window folds and step-wise tuning.
//!
//! Folds index observed days. Fold 1 tests the last `test_size` observations
//! and trains on everything before; each further fold moves the test block
//! one block earlier, so training sets shrink while test sets stay the same
//! size.

use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::calendar::granularity_for;
use crate::error::{Error, Result};
use crate::fit::{fit_training, FitOptions, MapEstimate, TrainingData};
use crate::forecast::predict_mean;
use crate::ingest::SalesSeries;
use crate::model::ModelSpec;

/// Fewest training observations a fold may have.
pub const DEFAULT_MIN_TRAIN: usize = 30;

/// `(τ1, τ2, τ3)` for a series with `n` observations.
pub fn standard_settings(n: usize) -> (f64, f64, f64) {
    let tau3 = if n < 120 {
        0.001
    } else if n < 350 {
        0.01
    } else {
        0.5
    };
    (5.0, 6.0, tau3)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    /// 1-based; fold 1 has the largest training set.
    pub index: usize,
    /// Training observations are `0..train_end`.
    pub train_end: usize,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub n_obs: usize,
    pub n_folds: usize,
    pub test_size: usize,
    pub folds: Vec<Fold>,
}

pub fn make_folds(n_obs: usize, n_folds: usize, test_size: usize) -> Result<FoldPlan> {
    make_folds_with_min(n_obs, n_folds, test_size, DEFAULT_MIN_TRAIN)
}

pub fn make_folds_with_min(n_obs: usize, n_folds: usize, test_size: usize, min_train: usize) -> Result<FoldPlan> {
    if n_folds == 0 || test_size == 0 {
        return Err(Error::InvalidArgument("fold count and test size must be >= 1".into()));
    }
    let needed = n_folds * test_size + min_train;
    if n_obs < needed {
        return Err(Error::InfeasibleFolds {
            needed,
            have: n_obs,
            shortfall: needed - n_obs,
            folds: n_folds,
            test_size,
            min_train,
        });
    }
    let folds = (1..=n_folds)
        .map(|j| {
            let end = n_obs - (j - 1) * test_size;
            Fold {
                index: j,
                train_end: end - test_size,
                test: end - test_size..end,
            }
        })
        .collect();
    Ok(FoldPlan {
        n_obs,
        n_folds,
        test_size,
        folds,
    })
}

/// Fits `spec` on the fold's training observations (seasonal granularity
/// chosen from the training size) and predicts its test dates.
pub fn fit_fold(
    obs: &[(NaiveDate, u64)],
    fold: &Fold,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<(MapEstimate, Vec<f64>)> {
    let train = &obs[..fold.train_end];
    let spec = ModelSpec {
        granularity: granularity_for(train.len()),
        ..*spec
    };
    let data = TrainingData::from_observations(train, &spec)?;
    let est = fit_training(&data, &spec, opts)?;
    let dates: Vec<NaiveDate> = obs[fold.test.clone()].iter().map(|o| o.0).collect();
    let pred = predict_mean(&est, &dates)?;
    Ok((est, pred))
}

fn mad(actual: &[(NaiveDate, u64)], pred: &[f64]) -> f64 {
    actual.iter().zip(pred).map(|(a, p)| (a.1 as f64 - p).abs()).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneGrids {
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub tau3: Vec<f64>,
}

impl Default for TuneGrids {
    fn default() -> Self {
        Self {
            tau1: vec![1.0, 2.5, 5.0, 10.0, 20.0],
            tau2: vec![1.0, 2.5, 5.0, 10.0, 20.0],
            tau3: vec![0.001, 0.01, 0.1, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub value: f64,
    pub mean_mad: Option<f64>,
    pub fold_mad: Vec<f64>,
    /// Why the candidate was disqualified.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneStep {
    pub parameter: &'static str,
    pub candidates: Vec<CandidateScore>,
    pub chosen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub n_folds: usize,
    pub test_size: usize,
    /// Steps in search order: τ3, τ1, τ2.
    pub steps: Vec<TuneStep>,
    pub n_fits: usize,
}

fn sorted_grid(name: &str, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("empty candidate grid for {name}")));
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("{name} candidate must be finite and > 0, got {v}")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Tunes τ3, then τ1, then τ2, each by minimizing the mean test MAD over an
/// expanding-window fold plan. Parameters not yet tuned stay at the standard
/// settings for the series length; ties go to the smaller value.
pub fn stepwise_cv(
    series: &SalesSeries,
    spec: &ModelSpec,
    grids: &TuneGrids,
    n_folds: usize,
    test_size: usize,
) -> Result<TuneResult> {
    stepwise_cv_with(series, spec, grids, n_folds, test_size, &FitOptions::default())
}

pub fn stepwise_cv_with(
    series: &SalesSeries,
    spec: &ModelSpec,
    grids: &TuneGrids,
    n_folds: usize,
    test_size: usize,
    opts: &FitOptions,
) -> Result<TuneResult> {
    let obs = series.observed();
    let plan = make_folds(obs.len(), n_folds, test_size)?;
    let (mut tau1, mut tau2, mut tau3) = standard_settings(obs.len());
    let order: [(&'static str, Vec<f64>); 3] = [
        ("tau3", sorted_grid("tau3", &grids.tau3)?),
        ("tau1", sorted_grid("tau1", &grids.tau1)?),
        ("tau2", sorted_grid("tau2", &grids.tau2)?),
    ];
    let mut steps = Vec::with_capacity(3);
    let mut n_fits = 0;
    for (name, grid) in order {
        let jobs: Vec<(usize, usize)> = (0..grid.len())
            .flat_map(|c| (0..plan.folds.len()).map(move |f| (c, f)))
            .collect();
        let outcomes: Vec<Result<f64>> = jobs
            .par_iter()
            .map(|&(c, f)| {
                let (t1, t2, t3) = match name {
                    "tau3" => (tau1, tau2, grid[c]),
                    "tau1" => (grid[c], tau2, tau3),
                    _ => (tau1, grid[c], tau3),
                };
                let cand = ModelSpec {
                    prior: crate::model::PriorConfig {
                        tau1: t1,
                        tau2: t2,
                        tau3: t3,
                        ..spec.prior
                    },
                    ..*spec
                };
                let fold = &plan.folds[f];
                let (_, pred) = fit_fold(&obs, fold, &cand, opts)?;
                Ok(mad(&obs[fold.test.clone()], &pred))
            })
            .collect();
        n_fits += jobs.len();

        let mut candidates = Vec::with_capacity(grid.len());
        for (c, &value) in grid.iter().enumerate() {
            let per = &outcomes[c * plan.folds.len()..(c + 1) * plan.folds.len()];
            let mut fold_mad = Vec::with_capacity(per.len());
            let mut failure = None;
            for (f, r) in per.iter().enumerate() {
                match r {
                    Ok(m) if m.is_finite() => fold_mad.push(*m),
                    Ok(m) => {
                        failure = Some(format!("fold {}: non-finite MAD {m}", f + 1));
                        break;
                    }
                    Err(e) => {
                        failure = Some(format!("fold {}: {e}", f + 1));
                        break;
                    }
                }
            }
            if let Some(reason) = &failure {
                log::warn!("{name}={value} disqualified: {reason}");
            }
            let mean_mad = failure.is_none().then(|| fold_mad.iter().sum::<f64>() / fold_mad.len() as f64);
            candidates.push(CandidateScore {
                value,
                mean_mad,
                fold_mad,
                failure,
            });
        }
        let mut best: Option<(f64, f64)> = None;
        for c in &candidates {
            if let Some(m) = c.mean_mad {
                if best.is_none_or(|(_, b)| m < b) {
                    best = Some((c.value, m));
                }
            }
        }
        let chosen = best.ok_or(Error::AllCandidatesFailed(name))?.0;
        match name {
            "tau3" => tau3 = chosen,
            "tau1" => tau1 = chosen,
            _ => tau2 = chosen,
        }
        steps.push(TuneStep {
            parameter: name,
            candidates,
            chosen,
        });
    }
    Ok(TuneResult {
        tau1,
        tau2,
        tau3,
        n_folds,
        test_size,
        steps,
        n_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Likelihood;

    #[test]
    fn standard_values() {
        assert_eq!(standard_settings(100), (5.0, 6.0, 0.001));
        assert_eq!(standard_settings(119), (5.0, 6.0, 0.001));
        assert_eq!(standard_settings(120), (5.0, 6.0, 0.01));
        assert_eq!(standard_settings(349), (5.0, 6.0, 0.01));
        assert_eq!(standard_settings(350), (5.0, 6.0, 0.5));
        assert_eq!(standard_settings(500), (5.0, 6.0, 0.5));
    }

    #[test]
    fn three_folds() {
        let p = make_folds(100, 3, 14).unwrap();
        let tests: Vec<_> = p.folds.iter().map(|f| f.test.clone()).collect();
        assert_eq!(tests, vec![86..100, 72..86, 58..72]);
        assert_eq!(p.folds[0].train_end, 86);
    }

    #[test]
    fn training_sizes() {
        let p = make_folds(74, 2, 14).unwrap();
        assert_eq!(p.folds.iter().map(|f| f.train_end).collect::<Vec<_>>(), vec![60, 46]);
    }

    #[test]
    fn infeasible_reports_shortfall() {
        match make_folds(60, 15, 14) {
            Err(Error::InfeasibleFolds { shortfall, needed, .. }) => {
                assert_eq!(needed, 240);
                assert_eq!(shortfall, 180);
            }
            other => panic!("{other:?}"),
        }
        assert!(make_folds(100, 0, 14).is_err());
    }

    #[test]
    fn tail_tiling() {
        for (n, k, s) in [(600, 15, 14), (45, 1, 15), (200, 6, 14)] {
            let p = make_folds(n, k, s).unwrap();
            let mut idx: Vec<usize> = p.folds.iter().flat_map(|f| f.test.clone()).collect();
            idx.sort();
            assert_eq!(idx, (n - k * s..n).collect::<Vec<_>>());
            for f in &p.folds {
                assert_eq!(f.train_end, f.test.start);
            }
        }
    }

    #[test]
    fn single_candidate_grids() {
        let first = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let values = (0..80).map(|i| Some(8 + (i * 7 % 5) as u64)).collect();
        let s = SalesSeries::new("x", first, values).unwrap();
        let grids = TuneGrids {
            tau1: vec![5.0],
            tau2: vec![6.0],
            tau3: vec![0.01],
        };
        let spec = ModelSpec::standard(Likelihood::NegBinom, 80);
        let r = stepwise_cv(&s, &spec, &grids, 2, 7).unwrap();
        assert_eq!((r.tau1, r.tau2, r.tau3), (5.0, 6.0, 0.01));
        assert_eq!(r.steps.len(), 3);
        assert!(r.steps.iter().all(|s| s.candidates.len() == 1));
        assert_eq!(r.n_fits, 6);
    }
}
