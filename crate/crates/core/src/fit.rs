//! MAP estimation.
//!
//! The log posterior is maximized with orthant-wise L-BFGS, which treats the
//! `|x|` penalties of the Laplace priors exactly and lands unneeded
//! coefficients on zero. For the normal model the Laplace penalty scales with
//! `1/σ`; the optimizer works on `x/σ` for those coefficients so that every
//! penalty weight is constant. Laplace-group coefficients below the zero
//! threshold are reported as exactly zero.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{build_design, place_knots, DateMap, DesignPair, KnotSet};
use crate::error::{Error, Result};
use crate::ingest::SalesSeries;
use crate::model::{Likelihood, ModelSpec, ParamLayout, ParamVector, PriorFamily, Posterior};
use crate::optim::{minimize_l1, LbfgsConfig, OptimResult};

/// Fewest observed days a model is fitted on.
pub const MIN_OBSERVATIONS: usize = 8;
/// Default magnitude below which Laplace-group coefficients are reported as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lbfgs: LbfgsConfig,
    pub zero_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig::default(),
            zero_threshold: DEFAULT_ZERO_THRESHOLD,
        }
    }
}

/// Observed training days with their design.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub dates: Vec<NaiveDate>,
    pub y: Vec<f64>,
    pub date_map: DateMap,
    pub knots: KnotSet,
    pub design: DesignPair,
}

impl TrainingData {
    pub fn new(series: &SalesSeries, spec: &ModelSpec) -> Result<Self> {
        let obs = series.observed();
        Self::from_observations(&obs, spec)
    }

    pub fn from_observations(obs: &[(NaiveDate, u64)], spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if obs.len() < MIN_OBSERVATIONS {
            return Err(Error::TooFewObservations {
                needed: MIN_OBSERVATIONS,
                have: obs.len(),
            });
        }
        let dates: Vec<NaiveDate> = obs.iter().map(|o| o.0).collect();
        let y = obs.iter().map(|o| o.1 as f64).collect();
        let first = dates[0];
        let last = *dates.last().unwrap();
        let date_map = DateMap::new(first, last)?;
        let knots = place_knots(first, last, spec.knot_spacing)?;
        let design = build_design(&dates, &date_map, &knots.knots, spec.degree, spec.granularity)?;
        Ok(Self {
            dates,
            y,
            date_map,
            knots,
            design,
        })
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub spec: ModelSpec,
    pub date_map: DateMap,
    pub knots: KnotSet,
    pub x_labels: Vec<String>,
    pub z_labels: Vec<String>,
    /// Raw optimizer output.
    pub params: ParamVector,
    /// `true` where a coefficient is reported as exactly zero, aligned with `params`.
    pub mask: Vec<bool>,
    pub zero_threshold: f64,
    /// Exact log posterior at `params`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub n_obs: usize,
    /// Provenance of the starting point when it came from another fit.
    pub warm_start: Option<String>,
    /// Log posterior after each accepted iteration.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl MapEstimate {
    pub fn layout(&self) -> ParamLayout {
        self.params.layout
    }

    /// Reported value of each parameter: masked entries become 0.
    pub fn reported(&self) -> Vec<f64> {
        self.params
            .values
            .iter()
            .zip(&self.mask)
            .map(|(v, m)| if *m { 0.0 } else { *v })
            .collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.reported()[self.layout().beta()].to_vec()
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.reported()[self.layout().gamma()].to_vec()
    }

    /// Unmasked trend change estimates.
    pub fn raw_changes(&self) -> &[f64] {
        self.params.changes()
    }

    /// `σ̂` (normal) or `â` (negative binomial).
    pub fn sigma(&self) -> Option<f64> {
        (self.spec.likelihood == Likelihood::Normal).then(|| self.params.nuisance().sqrt())
    }

    pub fn dispersion_a(&self) -> Option<f64> {
        (self.spec.likelihood == Likelihood::NegBinom).then(|| self.params.nuisance())
    }

    /// Design matrices for arbitrary dates on the training time axis and knots.
    pub fn design(&self, dates: &[NaiveDate]) -> Result<DesignPair> {
        build_design(dates, &self.date_map, &self.knots.knots, self.spec.degree, self.spec.granularity)
    }

    /// Labels of unmasked trend change coefficients.
    pub fn active_changes(&self) -> Vec<(NaiveDate, f64)> {
        let lay = self.layout();
        lay.changes()
            .zip(&self.knots.knots)
            .filter(|(i, _)| !self.mask[*i])
            .map(|(i, k)| (*k, self.params.values[i]))
            .collect()
    }

    pub fn report(&self, item_id: &str) -> FitReport {
        let lay = self.layout();
        let mut coefficients = Vec::new();
        for (i, label) in lay.beta().zip(&self.x_labels) {
            coefficients.push(self.coef(i, label, "seasonal"));
        }
        for (j, (i, label)) in lay.gamma().zip(&self.z_labels).enumerate() {
            let group = match j {
                0 => "intercept",
                j if j <= lay.degree => "polynomial",
                _ => "change",
            };
            coefficients.push(self.coef(i, label, group));
        }
        let nuisance = match self.spec.likelihood {
            Likelihood::Normal => Nuisance {
                name: "sigma2".into(),
                value: self.params.nuisance(),
            },
            Likelihood::NegBinom => Nuisance {
                name: "a".into(),
                value: self.params.nuisance(),
            },
        };
        let horseshoe = lay.global_scale().map(|gi| HorseshoeScales {
            local: lay
                .local_scales()
                .zip(self.z_labels.iter().skip(1))
                .map(|(i, l)| (l.clone(), self.params.values[i].exp()))
                .collect(),
            global: self.params.values[gi].exp(),
        });
        FitReport {
            item_id: item_id.to_string(),
            spec: self.spec,
            n_obs: self.n_obs,
            date_map: self.date_map,
            knots: self.knots.clone(),
            coefficients,
            nuisance,
            horseshoe,
            objective: self.objective,
            iterations: self.iterations,
            converged: self.converged,
            grad_norm: self.grad_norm,
            zero_threshold: self.zero_threshold,
            warm_start: self.warm_start.clone(),
        }
    }

    fn coef(&self, i: usize, label: &str, group: &str) -> CoefficientReport {
        CoefficientReport {
            label: label.to_string(),
            group: group.to_string(),
            value: self.params.values[i],
            reported: if self.mask[i] { 0.0 } else { self.params.values[i] },
            masked: self.mask[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub label: String,
    pub group: String,
    pub value: f64,
    pub reported: f64,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeScales {
    pub local: Vec<(String, f64)>,
    pub global: f64,
}

/// JSON-serializable description of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub item_id: String,
    pub spec: ModelSpec,
    pub n_obs: usize,
    pub date_map: DateMap,
    pub knots: KnotSet,
    pub coefficients: Vec<CoefficientReport>,
    pub nuisance: Nuisance,
    pub horseshoe: Option<HorseshoeScales>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub zero_threshold: f64,
    pub warm_start: Option<String>,
}

fn mean_var(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Starting point for a LASSO-prior fit.
pub fn lasso_initial(y: &[f64], layout: ParamLayout) -> ParamVector {
    let mut p = ParamVector::zeros(layout);
    let (mean, var) = mean_var(y);
    match layout.likelihood {
        Likelihood::Normal => {
            p.values[layout.intercept()] = mean;
            p.values[layout.nuisance()] = if var > 0.0 { var.ln() } else { 0.0 };
        }
        Likelihood::NegBinom => {
            p.values[layout.intercept()] = (mean + 0.5).ln();
            p.values[layout.nuisance()] = 0.0;
        }
    }
    p
}

/// Starting point for `spec` on `data`. Horseshoe starts run a LASSO fit
/// first and return its estimate as the warm start.
pub fn initialize(data: &TrainingData, spec: &ModelSpec, opts: &FitOptions) -> Result<(ParamVector, Option<MapEstimate>)> {
    let layout = ParamLayout::new(&data.design, spec);
    match spec.prior.family {
        PriorFamily::Lasso => Ok((lasso_initial(&data.y, layout), None)),
        PriorFamily::Horseshoe => {
            let lasso_spec = ModelSpec {
                prior: crate::model::PriorConfig {
                    family: PriorFamily::Lasso,
                    ..spec.prior
                },
                ..*spec
            };
            let warm = fit_training(data, &lasso_spec, opts)?;
            let mut p = ParamVector::zeros(layout);
            let n_shared = warm.params.values.len();
            // β, γ and nuisance share positions; λ = τ = 1
            p.values[..n_shared].copy_from_slice(&warm.params.values);
            Ok((p, Some(warm)))
        }
    }
}

/// Maximizes the posterior over the parameters listed in `free`, holding the
/// rest of `start` fixed.
pub fn maximize_subset(
    post: &Posterior<'_>,
    start: &[f64],
    free: &[usize],
    cfg: &LbfgsConfig,
) -> Result<(Vec<f64>, OptimResult)> {
    let lay = post.layout();
    let nu = lay.nuisance();
    let normal = post.spec().likelihood == Likelihood::Normal;
    let mut tau = vec![0.0; start.len()];
    for (range, t) in post.laplace_groups() {
        range.for_each(|i| tau[i] = t);
    }
    let is_free: Vec<bool> = (0..start.len()).map(|i| free.contains(&i)).collect();
    // free penalized coordinates are optimized as x/σ (normal model)
    let scaled: Vec<bool> = free.iter().map(|&i| normal && tau[i] > 0.0).collect();
    let frozen_penalized: Vec<usize> = (0..start.len()).filter(|&i| tau[i] > 0.0 && !is_free[i]).collect();
    let l1: Vec<f64> = free.iter().map(|&i| tau[i]).collect();

    let sigma_of = |p: &[f64]| if normal { (0.5 * p[nu]).exp() } else { 1.0 };
    let s0 = sigma_of(start);
    let x0: Vec<f64> = free
        .iter()
        .zip(&scaled)
        .map(|(&i, &sc)| if sc { start[i] / s0 } else { start[i] })
        .collect();

    let to_full = |z: &[f64], full: &mut Vec<f64>| {
        full.copy_from_slice(start);
        for (k, &i) in free.iter().enumerate() {
            full[i] = z[k];
        }
        let s = sigma_of(full);
        for (k, &i) in free.iter().enumerate() {
            if scaled[k] {
                full[i] = z[k] * s;
            }
        }
    };

    let mut full = start.to_vec();
    let mut grad_full = vec![0.0; start.len()];
    let res = minimize_l1(
        |z: &[f64], g: &mut [f64]| {
            to_full(z, &mut full);
            let mut v = post.smooth_part(&full, &mut grad_full);
            // penalties of frozen coefficients still depend on σ
            let factor = post.laplace_factor(full[nu]);
            for &i in &frozen_penalized {
                let pen = tau[i] * factor * full[i].abs();
                v -= pen;
                if normal {
                    grad_full[nu] += 0.5 * pen;
                }
            }
            let s = sigma_of(&full);
            let mut d_theta_extra = 0.0;
            for (k, &i) in free.iter().enumerate() {
                if scaled[k] {
                    g[k] = -grad_full[i] * s;
                    d_theta_extra += grad_full[i] * full[i] * 0.5;
                } else {
                    g[k] = -grad_full[i];
                }
            }
            if normal {
                if let Some(k) = free.iter().position(|&i| i == nu) {
                    g[k] -= d_theta_extra;
                }
            }
            -v
        },
        x0,
        &l1,
        cfg,
    )?;
    let mut values = start.to_vec();
    to_full(&res.x, &mut values);
    Ok((values, res))
}

/// Fits `spec` to prepared training data.
pub fn fit_training(data: &TrainingData, spec: &ModelSpec, opts: &FitOptions) -> Result<MapEstimate> {
    let post = Posterior::new(&data.y, &data.design, spec)?;
    let (init, warm) = initialize(data, spec, opts)?;
    let free: Vec<usize> = (0..init.values.len()).collect();
    let (values, res) = maximize_subset(&post, &init.values, &free, &opts.lbfgs)?;
    let objective = post.log_posterior(&values)?;
    if !objective.is_finite() {
        return Err(Error::Optimizer {
            iteration: res.iterations,
            reason: "non-finite log posterior at the optimum".into(),
        });
    }
    let layout = post.layout();
    let est = MapEstimate {
        spec: *spec,
        date_map: data.date_map,
        knots: data.knots.clone(),
        x_labels: data.design.x_labels.clone(),
        z_labels: data.design.z_labels.clone(),
        params: ParamVector { layout, values },
        mask: vec![false; layout.len()],
        zero_threshold: opts.zero_threshold,
        objective,
        iterations: res.iterations,
        converged: res.converged,
        grad_norm: res.grad_norm,
        n_obs: data.y.len(),
        warm_start: warm.map(|w| {
            format!(
                "lasso fit (tau1={}, tau2={}, tau3={}, objective={:.6}, converged={})",
                w.spec.prior.tau1, w.spec.prior.tau2, w.spec.prior.tau3, w.objective, w.converged
            )
        }),
        trace: res.trace.iter().map(|v| -v).collect(),
    };
    Ok(sparsify(est, opts.zero_threshold))
}

/// MAP estimate of `spec` on the observed days of `series`.
pub fn fit_map(series: &SalesSeries, spec: &ModelSpec) -> Result<MapEstimate> {
    fit_map_with(series, spec, &FitOptions::default())
}

pub fn fit_map_with(series: &SalesSeries, spec: &ModelSpec, opts: &FitOptions) -> Result<MapEstimate> {
    let data = TrainingData::new(series, spec)?;
    fit_training(&data, spec, opts)
}

/// Marks Laplace-group coefficients (seasonal effects and trend changes)
/// below `zero_threshold` as reported zeros. Raw values are kept.
pub fn sparsify(mut est: MapEstimate, zero_threshold: f64) -> MapEstimate {
    let lay = est.layout();
    est.mask = vec![false; lay.len()];
    for i in lay.beta().chain(lay.changes()) {
        est.mask[i] = est.params.values[i].abs() < zero_threshold;
    }
    est.zero_threshold = zero_threshold;
    est
}
