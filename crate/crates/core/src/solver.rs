//! Maximum-likelihood fit under nonnegativity.
//!
//! The optimiser is a projected limited-memory BFGS: the quasi-Newton
//! direction is formed on the free variables (those not held at zero by an
//! outward-pointing gradient), steps are projected back onto `θ ≥ 0`, and a
//! backtracking Armijo search on the projected path guarantees that the
//! objective never decreases. When the quasi-Newton direction fails to make
//! progress the memory is dropped and a projected-gradient step is tried.

use std::collections::VecDeque;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::Dataset;
use crate::kernel::{Kernel, ParameterFile, ParameterSet};
use crate::likelihood::{build_design, value_and_gradient, DesignMatrix, ParameterIndex};

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;
const CURVATURE_EPS: f64 = 1e-12;
const STALL_ITERATIONS: usize = 3;
const STALE_BACKTRACKS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Bound on the infinity norm of the projected gradient.
    pub grad_tolerance: f64,
    /// Bound on the relative objective change between iterations.
    pub objective_rel_tolerance: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Starting value of every coordinate.
    pub init_value: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 500,
            grad_tolerance: 1e-6,
            objective_rel_tolerance: 1e-9,
            memory: 10,
            init_value: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.grad_tolerance) || !positive(self.objective_rel_tolerance) {
            return Err(Error::ConfigInvalid("tolerances must be positive".into()));
        }
        if self.memory == 0 {
            return Err(Error::ConfigInvalid("memory must be at least 1".into()));
        }
        if !(self.init_value.is_finite() && self.init_value >= 0.0) {
            return Err(Error::ConfigInvalid("init value must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    Gradient,
    Objective,
    MaxIter,
}

/// Raw optimiser output.
#[derive(Clone, Debug, PartialEq)]
pub struct Maximum {
    pub theta: Vec<f64>,
    /// Objective after every accepted iterate, starting point first.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged_by: ConvergedBy,
    pub projected_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ParameterSet,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged_by: ConvergedBy,
    pub projected_grad_norm: f64,
    /// Seconds spent inside the solver.
    pub wall_time: f64,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the start point")
    }

    /// Serializable form; wall time is left out so reruns compare equal.
    pub fn to_file(&self, d: &Dataset, model: &str) -> FitFile {
        FitFile {
            model: model.into(),
            log_likelihood: self.log_likelihood(),
            iterations: self.iterations,
            converged_by: self.converged_by,
            projected_grad_norm: self.projected_grad_norm,
            objective_trace: self.objective_trace.clone(),
            parameters: ParameterFile::from_params(&self.params, d),
        }
    }
}

/// JSON document written by a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub model: String,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged_by: ConvergedBy,
    pub projected_grad_norm: f64,
    pub objective_trace: Vec<f64>,
    pub parameters: ParameterFile,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Infinity norm of the projected ascent gradient at `x`.
fn projected_norm(x: &[f64], grad: &[f64]) -> f64 {
    x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| if xi <= 0.0 && gi < 0.0 { 0.0 } else { gi.abs() })
        .fold(0.0, f64::max)
}

/// Maximise a smooth concave function over `θ ≥ 0`.
///
/// `eval` returns the objective and its gradient.
pub fn maximize_nonnegative<F>(eval: F, x0: Vec<f64>, opts: &SolverOptions) -> Maximum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let scale = vec![1.0; x0.len()];
    maximize_nonnegative_scaled(eval, x0, &scale, opts)
}

/// As [`maximize_nonnegative`], iterating on `z = θ / scale` for positive
/// `scale`. Stopping tests and the returned gradient norm refer to `θ`.
pub fn maximize_nonnegative_scaled<F>(
    mut eval_theta: F,
    theta0: Vec<f64>,
    scale: &[f64],
    opts: &SolverOptions,
) -> Maximum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert_eq!(theta0.len(), scale.len(), "one scale per coordinate");
    assert!(scale.iter().all(|&s| s > 0.0 && s.is_finite()), "scales must be positive");
    let mut eval = |z: &[f64]| {
        let theta: Vec<f64> = z.iter().zip(scale).map(|(a, b)| a * b).collect();
        let (v, g) = eval_theta(&theta);
        (v, g.iter().zip(scale).map(|(a, b)| a * b).collect::<Vec<f64>>())
    };
    // Ascent gradient in θ from the internal descent gradient in z.
    let grad_of = |g: &[f64]| -> Vec<f64> { g.iter().zip(scale).map(|(a, b)| -a / b).collect() };
    let n = theta0.len();
    let mut x: Vec<f64> = theta0.iter().zip(scale).map(|(v, s)| v.max(0.0) / s).collect();
    // Internally minimise f = -L with gradient g = -∇L.
    let (value, grad) = eval(&x);
    let mut f = -value;
    let mut g: Vec<f64> = grad.iter().map(|v| -v).collect();
    let mut trace = vec![value];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged_by = ConvergedBy::MaxIter;
    let mut stalled = 0;

    while iterations < opts.max_iterations {
        if projected_norm(&x, &grad_of(&g)) <= opts.grad_tolerance {
            converged_by = ConvergedBy::Gradient;
            break;
        }
        let free: Vec<bool> = x.iter().zip(&g).map(|(&xi, &gi)| !(xi <= 0.0 && gi > 0.0)).collect();
        let q: Vec<f64> = g.iter().zip(&free).map(|(&gi, &fr)| if fr { gi } else { 0.0 }).collect();

        let mut attempt_quasi_newton = !memory.is_empty();
        let step = loop {
            let (d, first_step) = if attempt_quasi_newton {
                let mut d = two_loop(&memory, &q);
                for (di, &fr) in d.iter_mut().zip(&free) {
                    *di = if fr { -*di } else { 0.0 };
                }
                if dot(&d, &g) < 0.0 {
                    (d, 1.0)
                } else {
                    attempt_quasi_newton = false;
                    continue;
                }
            } else {
                let norm = dot(&q, &q).sqrt();
                (q.iter().map(|v| -v).collect(), 1.0f64.min(1.0 / norm.max(f64::MIN_POSITIVE)))
            };
            match line_search(&mut eval, &x, f, &g, &d, first_step) {
                Some(found) => break Some(found),
                None if attempt_quasi_newton => {
                    memory.clear();
                    attempt_quasi_newton = false;
                }
                None => break None,
            }
        };

        let Some((x_new, f_new, g_new, backtracks)) = step else {
            converged_by = ConvergedBy::Objective;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if attempt_quasi_newton && backtracks > STALE_BACKTRACKS {
            // The curvature model is far off; rebuild it from a gradient step.
            memory.clear();
        } else if sy > CURVATURE_EPS * dot(&y, &y) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let rel = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(-f);
        // Single small steps also occur right after a memory reset or a
        // shortened search, so the test needs a run of them.
        stalled = if backtracks == 0 && rel <= opts.objective_rel_tolerance { stalled + 1 } else { 0 };
        if stalled >= STALL_ITERATIONS {
            converged_by = ConvergedBy::Objective;
            break;
        }
    }
    if converged_by == ConvergedBy::MaxIter && projected_norm(&x, &grad_of(&g)) <= opts.grad_tolerance
    {
        converged_by = ConvergedBy::Gradient;
    }
    debug_assert_eq!(x.len(), n);
    Maximum {
        projected_grad_norm: projected_norm(&x, &grad_of(&g)),
        theta: x.iter().zip(scale).map(|(a, b)| a * b).collect(),
        trace,
        iterations,
        converged_by,
    }
}

/// `H q` for the inverse-Hessian approximation held in `memory`.
fn two_loop(memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, q: &[f64]) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &r);
        for (ri, yi) in r.iter_mut().zip(y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for ri in &mut r {
            *ri *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r
}

/// Backtracking Armijo search along the projected path `P(x + t d)`.
fn line_search<F>(
    eval: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    mut t: f64,
) -> Option<(Vec<f64>, f64, Vec<f64>, usize)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    for tries in 0..=MAX_BACKTRACKS {
        let x_new: Vec<f64> = x.iter().zip(d).map(|(&xi, &di)| (xi + t * di).max(0.0)).collect();
        let slope: f64 = x_new.iter().zip(x).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
        if slope < 0.0 {
            let (value, grad) = eval(&x_new);
            let f_new = -value;
            if f_new.is_finite() && f_new <= f + ARMIJO_C1 * slope {
                return Some((x_new, f_new, grad.iter().map(|v| -v).collect(), tries));
            }
        }
        t *= BACKTRACK_SHRINK;
    }
    None
}

/// Fit the model on a prebuilt design.
pub fn fit_design(
    d: &Dataset,
    kernel: Kernel,
    idx: &ParameterIndex,
    x: &DesignMatrix,
    opts: &SolverOptions,
) -> Result<FitResult> {
    opts.check()?;
    if d.contributions.is_empty() {
        return Err(Error::NoContributions);
    }
    let start = Instant::now();
    let theta0 = vec![opts.init_value; idx.len()];
    // Equilibrate columns: μ coefficients grow with t while α and k stay O(1).
    let scale: Vec<f64> = x
        .column_norms()
        .into_iter()
        .map(|c| if c > 0.0 { 1.0 / c } else { 1.0 })
        .collect();
    let max = maximize_nonnegative_scaled(
        |theta| value_and_gradient(x, theta).expect("design and index agree"),
        theta0,
        &scale,
        opts,
    );
    Ok(FitResult {
        params: idx.unpack(&max.theta, d, kernel),
        objective_trace: max.trace,
        iterations: max.iterations,
        converged_by: max.converged_by,
        projected_grad_norm: max.projected_grad_norm,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Fit with a given coordinate index (full or baseline).
pub fn fit_with_index(
    d: &Dataset,
    kernel: Kernel,
    idx: &ParameterIndex,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if d.contributions.is_empty() {
        return Err(Error::NoContributions);
    }
    let x = build_design(d, kernel, idx);
    fit_design(d, kernel, idx, &x, opts)
}

/// Maximum-likelihood fit of the full model.
pub fn fit(d: &Dataset, kernel: Kernel, opts: &SolverOptions) -> Result<FitResult> {
    fit_with_index(d, kernel, &ParameterIndex::build(d), opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub half_life_days: f64,
    pub negative_log_likelihood: f64,
    /// `(nll - min nll) / |min nll|`.
    pub relative_to_min: f64,
    pub converged_by: ConvergedBy,
}

/// Refit for each half-life; output sorted by half-life.
pub fn sweep_half_life(
    d: &Dataset,
    half_lives: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SweepPoint>> {
    if half_lives.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one half-life".into()));
    }
    let mut sorted = half_lives.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ParameterIndex::build(d);
    let fits: Vec<Result<(f64, f64, ConvergedBy)>> = sorted
        .par_iter()
        .map(|&h| {
            let kernel = Kernel::from_half_life(h)?;
            let r = fit_with_index(d, kernel, &idx, opts)?;
            Ok((h, -r.log_likelihood(), r.converged_by))
        })
        .collect();
    let fits: Vec<(f64, f64, ConvergedBy)> = fits.into_iter().collect::<Result<_>>()?;
    let min = fits.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(fits
        .into_iter()
        .map(|(h, nll, converged_by)| SweepPoint {
            half_life_days: h,
            negative_log_likelihood: nll,
            relative_to_min: (nll - min) / min.abs().max(f64::MIN_POSITIVE),
            converged_by,
        })
        .collect())
}
