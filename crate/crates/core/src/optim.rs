//! Limited-memory BFGS minimizer with a backtracking Armijo line search.
//!
//! The two-loop recursion follows Nocedal (1980). Non-finite trial values are
//! treated as a failed Armijo test so the step shrinks back into the domain.
//! [`minimize_l1`] adds weighted `|x|` terms handled orthant-wise.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when `|f_k − f_{k+1}| / max(|f_k|, 1)` falls below this after a quasi-Newton step.
    pub rel_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 2000,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Minimizes `f`, which returns the value and writes the gradient.
pub fn minimize<F>(f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let l1 = vec![0.0; x0.len()];
    minimize_l1(f, x0, &l1, cfg)
}

/// Pseudo-gradient of `f + Σ cᵢ|xᵢ|`: the one-sided derivative of steepest
/// descent, zero where the subdifferential contains 0.
fn pseudo_gradient(x: &[f64], g: &[f64], l1: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        let c = l1[i];
        out[i] = if c == 0.0 {
            g[i]
        } else if x[i] > 0.0 {
            g[i] + c
        } else if x[i] < 0.0 {
            g[i] - c
        } else if g[i] + c < 0.0 {
            g[i] + c
        } else if g[i] - c > 0.0 {
            g[i] - c
        } else {
            0.0
        };
    }
}

fn l1_term(x: &[f64], l1: &[f64]) -> f64 {
    x.iter().zip(l1).map(|(v, c)| c * v.abs()).sum()
}

/// Minimizes `f(x) + Σ l1ᵢ·|xᵢ|` where `f` is smooth and writes its gradient.
///
/// Orthant-wise L-BFGS (Andrew & Gao, 2007): the quasi-Newton direction is
/// taken against the pseudo-gradient, restricted to the orthant of the current
/// point, and trial points are projected back onto that orthant, so
/// coordinates with a positive weight land exactly on zero. With all weights
/// zero this is plain L-BFGS.
pub fn minimize_l1<F>(mut f: F, x0: Vec<f64>, l1: &[f64], cfg: &LbfgsConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if l1.len() != n {
        return Err(Error::LengthMismatch {
            what: "l1 weights vs parameters",
            left: l1.len(),
            right: n,
        });
    }
    if l1.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidArgument("l1 weights must be finite and >= 0".into()));
    }
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer {
            iteration: 0,
            reason: format!("non-finite objective or gradient at the initial point (f = {fx})"),
        });
    }
    fx += l1_term(&x, l1);
    let mut pg = vec![0.0; n];
    pseudo_gradient(&x, &g, l1, &mut pg);
    let mut trace = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut orthant = vec![0.0; n];
    let mut converged = norm(&pg) < cfg.grad_tol;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let mut dir = two_loop(&pg, &hist);
        for i in 0..n {
            if l1[i] > 0.0 && dir[i] * pg[i] >= 0.0 {
                dir[i] = 0.0;
            }
        }
        let mut slope = dot(&dir, &pg);
        if slope >= 0.0 || !slope.is_finite() {
            hist.clear();
            dir = pg.iter().map(|v| -v).collect();
            slope = dot(&dir, &pg);
        }
        for i in 0..n {
            orthant[i] = if x[i] != 0.0 { x[i].signum() } else { -pg[i].signum() * (pg[i] != 0.0) as i32 as f64 };
        }
        // a steepest-descent step has arbitrary length, so it cannot signal convergence
        let quasi_newton = !hist.is_empty();
        let mut step = if quasi_newton { 1.0 } else { (1.0 / norm(&pg)).min(1.0) };

        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                let v = x[i] + step * dir[i];
                x_new[i] = if l1[i] > 0.0 && v * orthant[i] <= 0.0 { 0.0 } else { v };
            }
            let f_smooth = f(&x_new, &mut g_new);
            let f_new = f_smooth + l1_term(&x_new, l1);
            let finite = f_new.is_finite() && g_new.iter().all(|v| v.is_finite());
            saw_finite |= finite;
            let decrease: f64 = (0..n).map(|i| pg[i] * (x_new[i] - x[i])).sum();
            if finite && f_new <= fx + ARMIJO_C1 * decrease.min(step * slope) {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }

        let Some(f_new) = accepted else {
            if !hist.is_empty() {
                // retry once from steepest descent
                hist.clear();
                iterations -= 1;
                continue;
            }
            if !saw_finite {
                return Err(Error::Optimizer {
                    iteration: iterations,
                    reason: format!("objective non-finite along every trial step from f = {fx}"),
                });
            }
            // no representable improvement left along the gradient
            converged = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - f_new).abs() / fx.abs().max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        pseudo_gradient(&x, &g, l1, &mut pg);
        fx = f_new;
        trace.push(fx);
        converged = norm(&pg) < cfg.grad_tol || (quasi_newton && rel < cfg.rel_tol);
    }

    Ok(OptimResult {
        grad_norm: norm(&pg),
        x,
        value: fx,
        iterations,
        converged,
        trace,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
