//! Log posteriors of the normal and negative-binomial additive models.
//!
//! Parameters are packed into one flat vector (see [`ParamLayout`]):
//! seasonal coefficients `β`, trend coefficients `γ`, the nuisance parameter
//! in log space (`log σ²` or `log a`), and, for the horseshoe prior, the
//! local scales `log λ₂..log λ_d` followed by the global scale `log τ`.
//!
//! All densities include their normalizing constants except the improper
//! ones: the flat intercept prior contributes 0 and `p(σ²) ∝ 1/σ²`
//! contributes `−log σ²`, which the log-space Jacobian `+log σ²` cancels.

use std::f64::consts::{LN_2, PI};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::calendar::{DesignPair, SeasonGranularity};
use crate::error::{Error, Result};
use crate::matrix::dot;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Smoothing width of the `|x|` surrogate used in Laplace priors.
pub const DEFAULT_SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    Normal,
    NegBinom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    Lasso,
    Horseshoe,
}

/// Shrinkage prior configuration.
///
/// `tau1` scales the Laplace prior on trend changes, `tau2` the Laplace prior
/// on seasonal effects, and `tau3` is the standard deviation of the normal
/// prior on the global polynomial coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub family: PriorFamily,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl PriorConfig {
    pub fn lasso(tau1: f64, tau2: f64, tau3: f64) -> Self {
        Self {
            family: PriorFamily::Lasso,
            tau1,
            tau2,
            tau3,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2), ("tau3", self.tau3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything needed to build and fit one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    pub prior: PriorConfig,
    /// Spline degree `l`.
    pub degree: usize,
    /// Knot spacing `k` in days.
    pub knot_spacing: i64,
    pub granularity: SeasonGranularity,
}

impl ModelSpec {
    /// Standard tuning values and seasonal granularity for `n` observations,
    /// linear spline and a knot every 30 days.
    pub fn standard(likelihood: Likelihood, n: usize) -> Self {
        let (tau1, tau2, tau3) = crate::tuning::standard_settings(n);
        Self {
            likelihood,
            prior: PriorConfig::lasso(tau1, tau2, tau3),
            degree: 1,
            knot_spacing: 30,
            granularity: crate::calendar::granularity_for(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knot_spacing < 1 {
            return Err(Error::InvalidArgument(format!(
                "knot spacing must be >= 1, got {}",
                self.knot_spacing
            )));
        }
        self.prior.validate()
    }
}

/// Positions of each parameter block in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_seasonal: usize,
    pub n_trend: usize,
    pub degree: usize,
    pub likelihood: Likelihood,
    pub horseshoe: bool,
}

impl ParamLayout {
    pub fn new(design: &DesignPair, spec: &ModelSpec) -> Self {
        Self {
            n_seasonal: design.n_seasonal(),
            n_trend: design.n_trend(),
            degree: design.degree,
            likelihood: spec.likelihood,
            horseshoe: spec.prior.family == PriorFamily::Horseshoe,
        }
    }

    pub fn len(&self) -> usize {
        self.n_seasonal + self.n_trend + 1 + if self.horseshoe { self.n_trend } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.n_seasonal
    }

    pub fn gamma(&self) -> Range<usize> {
        self.n_seasonal..self.n_seasonal + self.n_trend
    }

    pub fn intercept(&self) -> usize {
        self.n_seasonal
    }

    /// Global polynomial coefficients `γ₂..γ_{l+1}`.
    pub fn poly(&self) -> Range<usize> {
        self.n_seasonal + 1..self.n_seasonal + 1 + self.degree
    }

    /// Trend change coefficients `γ_{l+2}..γ_d`.
    pub fn changes(&self) -> Range<usize> {
        self.n_seasonal + 1 + self.degree..self.n_seasonal + self.n_trend
    }

    pub fn n_knots(&self) -> usize {
        self.n_trend - self.degree - 1
    }

    pub fn nuisance(&self) -> usize {
        self.n_seasonal + self.n_trend
    }

    /// `log λ₂..log λ_d` (horseshoe only).
    pub fn local_scales(&self) -> Range<usize> {
        let start = self.nuisance() + 1;
        if self.horseshoe {
            start..start + self.n_trend - 1
        } else {
            start..start
        }
    }

    /// `log τ` (horseshoe only).
    pub fn global_scale(&self) -> Option<usize> {
        self.horseshoe.then(|| self.nuisance() + self.n_trend)
    }
}

/// A flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.values[self.layout.beta()]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.values[self.layout.gamma()]
    }

    pub fn changes(&self) -> &[f64] {
        &self.values[self.layout.changes()]
    }

    /// `σ²` for the normal model, `a` for the negative-binomial model.
    pub fn nuisance(&self) -> f64 {
        self.values[self.layout.nuisance()].exp()
    }

    pub fn log_nuisance(&self) -> f64 {
        self.values[self.layout.nuisance()]
    }
}

/// Additive pieces of the log posterior.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Components {
    pub likelihood: f64,
    pub prior_seasonal: f64,
    pub prior_trend: f64,
    pub prior_nuisance: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.likelihood + self.prior_seasonal + self.prior_trend + self.prior_nuisance
    }
}

#[inline]
fn smooth_abs(x: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        x.abs()
    } else {
        x.hypot(eps)
    }
}

#[inline]
fn smooth_abs_grad(x: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        x.signum() * (x != 0.0) as i32 as f64
    } else {
        x / x.hypot(eps)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

/// Laplace(0, scale) log-density.
pub fn laplace_log_density(x: f64, scale: f64) -> f64 {
    -LN_2 - scale.ln() - x.abs() / scale
}

/// Half-normal(0, 1) log-density on `x > 0`.
pub fn half_normal_log_density(x: f64) -> f64 {
    LN_2 - LN_SQRT_2PI - 0.5 * x * x
}

/// Half-Cauchy(0, 1) log-density, `log(2 / (π (1 + x²)))`.
pub fn half_cauchy_log_density(x: f64) -> f64 {
    (2.0 / PI).ln() - (x * x).ln_1p()
}

/// Negative-binomial log-pmf with mean `mu` and dispersion `phi`
/// (variance `mu + mu²/phi`).
pub fn negbinom_log_pmf(y: f64, mu: f64, phi: f64) -> f64 {
    let log_ratio = -(mu / phi).ln_1p(); // log(φ / (φ + μ))
    let y_term = if y == 0.0 { 0.0 } else { y * (mu.ln() - (phi + mu).ln()) };
    ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0) + phi * log_ratio + y_term
}

/// Horseshoe log-prior of `coefs = γ₂..γ_d` given log-scales, with the
/// log-space Jacobians of `λ_j` and `τ`. `sigma2` is present only for the
/// normal likelihood.
pub fn horseshoe_log_prior(coefs: &[f64], log_lambda: &[f64], log_tau: f64, sigma2: Option<f64>) -> f64 {
    assert_eq!(coefs.len(), log_lambda.len(), "one local scale per coefficient");
    let log_sigma = sigma2.map_or(0.0, |s| 0.5 * s.ln());
    let mut total = 0.0;
    for (&g, &u) in coefs.iter().zip(log_lambda) {
        let log_sd = u + log_tau + log_sigma;
        let quad = if g == 0.0 { 0.0 } else { 0.5 * g * g * (-2.0 * log_sd).exp() };
        total += -LN_SQRT_2PI - log_sd - quad;
        total += log_half_cauchy_jacobian(u);
    }
    total + log_half_cauchy_jacobian(log_tau)
}

/// Half-Cauchy log-density of `e^u` plus the Jacobian `u`.
#[inline]
fn log_half_cauchy_jacobian(u: f64) -> f64 {
    (2.0 / PI).ln() - softplus(2.0 * u) + u
}

#[inline]
fn log_half_cauchy_jacobian_grad(u: f64) -> f64 {
    1.0 - 2.0 * sigmoid(2.0 * u)
}

/// Posterior of one model on aligned observations and design.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    y: &'a [f64],
    design: &'a DesignPair,
    spec: ModelSpec,
    layout: ParamLayout,
}

impl<'a> Posterior<'a> {
    pub fn new(y: &'a [f64], design: &'a DesignPair, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if y.len() != design.n_rows() {
            return Err(Error::LengthMismatch {
                what: "observations vs design rows",
                left: y.len(),
                right: design.n_rows(),
            });
        }
        if design.x.rows() != design.z.rows() {
            return Err(Error::LengthMismatch {
                what: "seasonal vs trend design rows",
                left: design.x.rows(),
                right: design.z.rows(),
            });
        }
        if design.n_trend() < design.degree + 1 {
            return Err(Error::InvalidArgument("trend design narrower than its polynomial part".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observations"));
        }
        if spec.likelihood == Likelihood::NegBinom && y.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::InvalidArgument(
                "negative-binomial observations must be non-negative integers".into(),
            ));
        }
        Ok(Self {
            y,
            design,
            spec: *spec,
            layout: ParamLayout::new(design, spec),
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.layout.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector vs layout",
                left: p.len(),
                right: self.layout.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }

    /// Linear predictor `Xβ + Zγ`.
    pub fn linear_predictor(&self, p: &[f64]) -> Vec<f64> {
        let beta = &p[self.layout.beta()];
        let gamma = &p[self.layout.gamma()];
        (0..self.y.len())
            .map(|i| dot(self.design.x.row(i), beta) + dot(self.design.z.row(i), gamma))
            .collect()
    }

    /// Exact log posterior (up to the documented constants).
    pub fn log_posterior(&self, p: &[f64]) -> Result<f64> {
        Ok(self.components(p)?.total())
    }

    pub fn components(&self, p: &[f64]) -> Result<Components> {
        self.check_params(p)?;
        Ok(self.eval(p, 0.0, None))
    }

    /// Log posterior with `|x|` replaced by `√(x² + eps²)`.
    pub fn smoothed_log_posterior(&self, p: &[f64], eps: f64) -> Result<f64> {
        self.check_params(p)?;
        Ok(self.eval(p, eps, None).total())
    }

    /// Gradient of the smoothed log posterior.
    pub fn grad_log_posterior(&self, p: &[f64], eps: f64) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let mut g = vec![0.0; p.len()];
        self.eval(p, eps, Some(&mut g));
        Ok(g)
    }

    /// Smoothed value and gradient without validation; used in the optimizer loop.
    pub fn value_and_grad(&self, p: &[f64], eps: f64, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.eval(p, eps, Some(grad)).total()
    }

    /// Laplace-prior blocks and their `τ`.
    pub fn laplace_groups(&self) -> Vec<(Range<usize>, f64)> {
        let mut out = vec![(self.layout.beta(), self.spec.prior.tau2)];
        if self.spec.prior.family == PriorFamily::Lasso {
            out.push((self.layout.changes(), self.spec.prior.tau1));
        }
        out
    }

    /// Factor multiplying `τ` in the Laplace penalty `τ·f·|x|`: `1/σ` for the
    /// normal model, 1 otherwise.
    pub fn laplace_factor(&self, log_nuisance: f64) -> f64 {
        match self.spec.likelihood {
            Likelihood::Normal => (-0.5 * log_nuisance).exp(),
            Likelihood::NegBinom => 1.0,
        }
    }

    /// Log posterior without the `−τ·f·|x|` penalty terms of the Laplace
    /// priors (their normalizing constants are kept), with its gradient.
    /// Unchecked; used in the optimizer loop.
    pub fn smooth_part(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.eval_mode(p, None, Some(grad)).total()
    }

    fn eval(&self, p: &[f64], eps: f64, grad: Option<&mut [f64]>) -> Components {
        self.eval_mode(p, Some(eps), grad)
    }

    /// `eps = None` leaves the penalty terms out.
    fn eval_mode(&self, p: &[f64], eps: Option<f64>, mut grad: Option<&mut [f64]>) -> Components {
        let lay = self.layout;
        let eta = self.linear_predictor(p);
        let log_nu = p[lay.nuisance()];
        let mut out = Components::default();

        // likelihood and d/dη
        let mut d_eta = vec![0.0; eta.len()];
        let mut d_nu = 0.0;
        // (scale multiplier for Laplace priors, its log, d log-mult / d log-nuisance)
        let laplace_mult;
        match self.spec.likelihood {
            Likelihood::Normal => {
                let n = self.y.len() as f64;
                let inv_var = (-log_nu).exp();
                let mut rss = 0.0;
                for ((r, &y), &e) in d_eta.iter_mut().zip(self.y).zip(&eta) {
                    let res = y - e;
                    rss += res * res;
                    *r = res * inv_var;
                }
                out.likelihood = -n * LN_SQRT_2PI - 0.5 * n * log_nu - 0.5 * rss * inv_var;
                d_nu += -0.5 * n + 0.5 * rss * inv_var;
                // Laplace scale √σ²/τ: density uses 1/σ = e^{-θ/2}
                laplace_mult = (-0.5 * log_nu).exp();
                // p(σ²) ∝ 1/σ² and the Jacobian cancel
                out.prior_nuisance = 0.0;
            }
            Likelihood::NegBinom => {
                let a = log_nu.exp();
                let phi = (-2.0 * log_nu).exp();
                let mut d_phi = 0.0;
                let dg_phi = digamma(phi);
                for ((r, &y), &e) in d_eta.iter_mut().zip(self.y).zip(&eta) {
                    let mu = e.exp();
                    out.likelihood += negbinom_log_pmf(y, mu, phi);
                    *r = phi * (y - mu) / (phi + mu);
                    d_phi += digamma(y + phi) - dg_phi - (mu / phi).ln_1p() + (mu - y) / (phi + mu);
                }
                d_nu += d_phi * (-2.0 * phi);
                out.prior_nuisance = half_normal_log_density(a) + log_nu;
                d_nu += 1.0 - a * a;
                laplace_mult = 1.0;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            self.design.x.tr_mul_add(&d_eta, &mut g[lay.beta()]);
            self.design.z.tr_mul_add(&d_eta, &mut g[lay.gamma()]);
        }
        let normal = self.spec.likelihood == Likelihood::Normal;

        // Laplace prior on a block: Σ [log τ − log 2 − log(mult⁻¹) − τ·mult·|x|]
        let mut laplace_block = |range: Range<usize>, tau: f64, grad: Option<&mut [f64]>| -> f64 {
            let mut total = 0.0;
            let mut d_nu_local = 0.0;
            let k = range.len() as f64;
            let mut abs_sum = 0.0;
            if let Some(eps) = eps {
                match grad {
                    Some(g) => {
                        for i in range {
                            abs_sum += smooth_abs(p[i], eps);
                            g[i] += -tau * laplace_mult * smooth_abs_grad(p[i], eps);
                        }
                    }
                    None => {
                        for i in range {
                            abs_sum += smooth_abs(p[i], eps);
                        }
                    }
                }
            }
            total += k * (tau.ln() - LN_2 + laplace_mult.ln()) - tau * laplace_mult * abs_sum;
            if normal {
                // mult = e^{-θ/2}
                d_nu_local += -0.5 * k + 0.5 * tau * laplace_mult * abs_sum;
            }
            d_nu += d_nu_local;
            total
        };
        out.prior_seasonal = laplace_block(lay.beta(), self.spec.prior.tau2, grad.as_deref_mut());

        match self.spec.prior.family {
            PriorFamily::Lasso => {
                out.prior_trend = laplace_block(lay.changes(), self.spec.prior.tau1, grad.as_deref_mut());
                let tau3 = self.spec.prior.tau3;
                for i in lay.poly() {
                    out.prior_trend += normal_log_density(p[i], 0.0, tau3);
                    if let Some(g) = grad.as_deref_mut() {
                        g[i] += -p[i] / (tau3 * tau3);
                    }
                }
            }
            PriorFamily::Horseshoe => {
                let coefs = lay.intercept() + 1..lay.gamma().end;
                let locals = lay.local_scales();
                let v = p[lay.global_scale().expect("horseshoe layout")];
                let log_sigma = if normal { 0.5 * log_nu } else { 0.0 };
                let mut d_v = log_half_cauchy_jacobian_grad(v);
                out.prior_trend = log_half_cauchy_jacobian(v);
                for (ci, ui) in coefs.zip(locals) {
                    let gj = p[ci];
                    let u = p[ui];
                    let log_sd = u + v + log_sigma;
                    let w = if gj == 0.0 { 0.0 } else { gj * gj * (-2.0 * log_sd).exp() };
                    out.prior_trend += -LN_SQRT_2PI - log_sd - 0.5 * w + log_half_cauchy_jacobian(u);
                    // d/d log_sd of the normal term
                    let d_logsd = -1.0 + w;
                    d_v += d_logsd;
                    if normal {
                        d_nu += 0.5 * d_logsd;
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        g[ci] += if gj == 0.0 { 0.0 } else { -gj * (-2.0 * log_sd).exp() };
                        g[ui] += d_logsd + log_half_cauchy_jacobian_grad(u);
                    }
                }
                if let Some(g) = grad.as_deref_mut() {
                    g[lay.global_scale().unwrap()] += d_v;
                }
            }
        }
        if let Some(g) = grad {
            g[lay.nuisance()] += d_nu;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{build_design, place_knots, DateMap};
    use crate::matrix::Matrix;
    use chrono::{Duration, NaiveDate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty_design(n: usize, degree: usize) -> DesignPair {
        DesignPair {
            x: Matrix::zeros(n, 0),
            z: Matrix::from_rows(&vec![{
                let mut r = vec![0.0; degree + 1];
                r[0] = 1.0;
                r
            }; n]),
            degree,
            x_labels: vec![],
            z_labels: vec![],
        }
    }

    fn spec(lik: Likelihood, family: PriorFamily, tau: (f64, f64, f64)) -> ModelSpec {
        ModelSpec {
            likelihood: lik,
            prior: PriorConfig {
                family,
                tau1: tau.0,
                tau2: tau.1,
                tau3: tau.2,
            },
            degree: 1,
            knot_spacing: 30,
            granularity: SeasonGranularity::WEEKDAY,
        }
    }

    #[test]
    fn normal_at_zero_is_gaussian_density() {
        let n = 9;
        let design = empty_design(n, 1);
        let y = vec![0.0; n];
        let s = spec(Likelihood::Normal, PriorFamily::Lasso, (5.0, 6.0, 2.0));
        let post = Posterior::new(&y, &design, &s).unwrap();
        let c = post.components(&vec![0.0; post.layout().len()]).unwrap();
        let expect_lik = -(n as f64) / 2.0 * (2.0 * PI).ln();
        assert!((c.likelihood - expect_lik).abs() < 1e-12);
        // the only prior term is N(0, τ3²) at zero on the slope
        assert!((c.prior_trend - (-0.5 * (2.0 * PI).ln() - 2.0f64.ln())).abs() < 1e-12);
        assert_eq!(c.prior_seasonal, 0.0);
        assert_eq!(c.prior_nuisance, 0.0);
    }

    #[test]
    fn negbinom_matches_geometric_pmf() {
        // φ = 1 is the geometric law: P(y) = (μ/(1+μ))^y / (1+μ)
        let design = empty_design(1, 0);
        let y = [3.0];
        let s = ModelSpec {
            degree: 0,
            ..spec(Likelihood::NegBinom, PriorFamily::Lasso, (5.0, 6.0, 1.0))
        };
        let post = Posterior::new(&y, &design, &s).unwrap();
        let p = vec![3.0f64.ln(), 0.0];
        let c = post.components(&p).unwrap();
        assert!((c.likelihood - (27.0f64 / 256.0).ln()).abs() < 1e-12);
        assert!((negbinom_log_pmf(3.0, 3.0, 1.0) - (27.0f64 / 256.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn laplace_term_under_doubled_tau1() {
        let design = DesignPair {
            x: Matrix::zeros(2, 0),
            z: Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.5, 0.1, 0.3]]),
            degree: 1,
            x_labels: vec![],
            z_labels: vec![],
        };
        let y = [1.0, 2.0];
        let changes = [0.4, -1.3];
        let mut p = vec![1.0, 0.2, changes[0], changes[1], 0.3f64.ln()];
        p[4] = 0.0; // a = 1
        let eval = |tau1: f64| {
            let s = spec(Likelihood::NegBinom, PriorFamily::Lasso, (tau1, 6.0, 1.0));
            let post = Posterior::new(&y, &design, &s).unwrap();
            post.components(&p).unwrap().prior_trend - normal_log_density(0.2, 0.0, 1.0)
        };
        let closed = |tau1: f64| changes.iter().map(|c| laplace_log_density(*c, 1.0 / tau1)).sum::<f64>();
        assert!((eval(2.5) - closed(2.5)).abs() < 1e-12);
        let diff = eval(5.0) - eval(2.5);
        let extra_penalty = 2.5 * changes.iter().map(|c| c.abs()).sum::<f64>();
        assert!((diff - (2.0 * LN_2 - extra_penalty)).abs() < 1e-12);
    }

    #[test]
    fn half_cauchy_at_one() {
        assert!((half_cauchy_log_density(1.0) - (1.0 / PI).ln()).abs() < 1e-15);
        let x = 2.7f64;
        assert!((half_cauchy_log_density(x) - (2.0 / (PI * (1.0 + x * x))).ln()).abs() < 1e-14);
    }

    #[test]
    fn horseshoe_unit_scales() {
        let coefs = [0.0; 3];
        let lp = horseshoe_log_prior(&coefs, &[0.0; 3], 0.0, None);
        let expect = 3.0 * -0.5 * (2.0 * PI).ln() + 4.0 * (1.0 / PI).ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn horseshoe_normal_terms_invariant_under_rescaling() {
        let coefs = [0.3, -1.2, 2.0];
        let u = [0.1, -0.4, 0.7];
        let v = 0.25;
        let c = 1.7f64.ln();
        let normal_part = |u: &[f64], v: f64| {
            horseshoe_log_prior(&coefs, u, v, Some(2.0))
                - u.iter().map(|x| log_half_cauchy_jacobian(*x)).sum::<f64>()
                - log_half_cauchy_jacobian(v)
        };
        let shifted: Vec<_> = u.iter().map(|x| x + c).collect();
        assert!((normal_part(&u, v) - normal_part(&shifted, v - c)).abs() < 1e-12);
        let direct: f64 = coefs
            .iter()
            .zip(&u)
            .map(|(g, ui)| normal_log_density(*g, 0.0, (ui + v).exp() * 2.0f64.sqrt()))
            .sum();
        assert!((normal_part(&u, v) - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_symmetric_point() {
        let design = DesignPair {
            x: Matrix::zeros(3, 0),
            z: Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 0.5, 0.0], vec![1.0, 0.9, 0.4]]),
            degree: 1,
            x_labels: vec![],
            z_labels: vec![],
        };
        let y = [1.0, 1.0, 1.0];
        let s = spec(Likelihood::Normal, PriorFamily::Lasso, (5.0, 6.0, 1.0));
        let post = Posterior::new(&y, &design, &s).unwrap();
        // fitted exactly: residuals 0, slope 0, change 0 → only the prior derivative remains
        let p = vec![1.0, 0.0, 0.0, 0.0];
        let g = post.grad_log_posterior(&p, DEFAULT_SMOOTHING).unwrap();
        assert!(g[2].abs() < 1e-12);
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn weak_priors_give_least_squares_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let first = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        let dates: Vec<_> = (0..20).map(|i| first + Duration::days(i)).collect();
        let map = DateMap::new(first, *dates.last().unwrap()).unwrap();
        let design = build_design(&dates, &map, &[], 1, SeasonGranularity::WEEKDAY).unwrap();
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..10.0)).collect();
        let s = spec(Likelihood::Normal, PriorFamily::Lasso, (1e-12, 1e-12, 1e12));
        let post = Posterior::new(&y, &design, &s).unwrap();
        let p: Vec<f64> = (0..post.layout().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = post.grad_log_posterior(&p, DEFAULT_SMOOTHING).unwrap();
        let sigma2 = p[post.layout().nuisance()].exp();
        let eta = post.linear_predictor(&p);
        let r: Vec<f64> = y.iter().zip(&eta).map(|(a, b)| (a - b) / sigma2).collect();
        let mut expect = vec![0.0; 9];
        design.x.tr_mul_add(&r, &mut expect[..7]);
        design.z.tr_mul_add(&r, &mut expect[7..]);
        for (a, b) in g[..9].iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let design = empty_design(3, 1);
        let s = spec(Likelihood::Normal, PriorFamily::Lasso, (5.0, 6.0, 1.0));
        assert!(matches!(
            Posterior::new(&[1.0, 2.0], &design, &s),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            Posterior::new(&[1.0, f64::NAN, 2.0], &design, &s),
            Err(Error::NonFinite(_))
        ));
        let y = [1.0, 2.0, 3.0];
        let post = Posterior::new(&y, &design, &s).unwrap();
        assert!(post.log_posterior(&[0.0, f64::NAN, 0.0]).is_err());
        assert!(post.log_posterior(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn negbinom_overdispersion_identity() {
        use rand_distr::{Distribution, Gamma, Poisson};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mu, phi) = (12.0f64, 3.0f64);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let lam = Gamma::new(phi, mu / phi).unwrap().sample(&mut rng);
                Poisson::new(lam).unwrap().sample(&mut rng)
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let expect = mu + mu * mu / phi;
        assert!((mean - mu).abs() < 0.05);
        assert!((var - expect).abs() / expect < 0.03, "{var} vs {expect}");
        // and the pmf sums to one with the right mean
        let (mut total, mut m1) = (0.0, 0.0);
        for k in 0..2000 {
            let p = negbinom_log_pmf(k as f64, mu, phi).exp();
            total += p;
            m1 += k as f64 * p;
        }
        assert!((total - 1.0).abs() < 1e-10);
        assert!((m1 - mu).abs() < 1e-8);
    }

    #[test]
    fn row_permutation_invariance() {
        let first = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let dates: Vec<_> = (0..40).map(|i| first + Duration::days(i)).collect();
        let map = DateMap::new(first, dates[39]).unwrap();
        let knots = place_knots(first, dates[39], 10).unwrap();
        let design = build_design(&dates, &map, &knots.knots, 1, SeasonGranularity::WEEKDAY_MONTH).unwrap();
        let y: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let s = spec(Likelihood::NegBinom, PriorFamily::Lasso, (5.0, 6.0, 0.5));
        let post = Posterior::new(&y, &design, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<f64> = (0..post.layout().len()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let perm: Vec<usize> = (0..40).rev().collect();
        let design2 = design.select_rows(&perm);
        let y2: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let post2 = Posterior::new(&y2, &design2, &s).unwrap();
        let a = post.log_posterior(&p).unwrap();
        let b = post2.log_posterior(&p).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }
}
