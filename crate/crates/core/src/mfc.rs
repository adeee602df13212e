//! Cooperative setting: minimize the population-average cost over a shared
//! policy.
//!
//! For the one-shot game the objective is the box-constrained, generally
//! non-convex quadratic program
//!
//! ```text
//! min  pi^T Q pi + c^T pi + const   s.t.  0 <= pi_j <= 1
//! Q_jk = p_j p_k L_j / f_per,  c_j = p_j (W_j/R_j - L_j/f_j),  const = sum_j p_j L_j/f_j
//! ```
//!
//! The stationary objective is not quadratic and is only defined on the
//! feasible region `f_per - lambda * E[XL] > 0`. Both are solved by an
//! exhaustive lattice search followed by projected-gradient refinement from
//! the best lattice point.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostModel, OneShotScenario, Policy, Scenario, StationaryScenario};

/// Default cap on the number of lattice points a grid search may visit.
pub const DEFAULT_EVALUATION_CAP: f64 = 1e8;

/// `pi^T Q pi + c^T pi + constant`. `Q` is kept exactly as assembled, not
/// symmetrized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticProgram {
    /// Row-major `K x K`.
    q: Vec<f64>,
    c: Vec<f64>,
    constant: f64,
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn q(&self, j: usize, k: usize) -> f64 {
        self.q[j * self.dim() + k]
    }

    pub fn linear(&self) -> &[f64] {
        &self.c
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(Error::LengthMismatch { expected: self.dim(), found })
        }
    }

    /// Unchecked evaluation on a slice of length [`dim`](Self::dim); points
    /// outside the box are fine.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let k = self.dim();
        let mut quad = 0.0;
        for (j, xj) in x.iter().enumerate() {
            let row = &self.q[j * k..(j + 1) * k];
            let qx: f64 = row.iter().zip(x).map(|(q, xk)| q * xk).sum();
            quad += xj * qx;
        }
        let lin: f64 = self.c.iter().zip(x).map(|(c, xj)| c * xj).sum();
        quad + lin + self.constant
    }

    /// `(Q + Q^T) x + c` into `out`, unchecked.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.dim();
        for (j, g) in out.iter_mut().enumerate() {
            let mut acc = self.c[j];
            for (i, xi) in x.iter().enumerate() {
                acc += (self.q[j * k + i] + self.q[i * k + j]) * xi;
            }
            *g = acc;
        }
    }

    pub fn objective(&self, pi: &Policy) -> Result<f64> {
        self.check_dim(pi.len())?;
        Ok(self.eval(pi.as_slice()))
    }

    /// `(Q + Q^T) pi + c`.
    pub fn gradient(&self, pi: &Policy) -> Result<Vec<f64>> {
        self.check_dim(pi.len())?;
        let mut out = vec![0.0; self.dim()];
        self.grad_into(pi.as_slice(), &mut out);
        Ok(out)
    }
}

pub fn assemble_qp(s: &OneShotScenario) -> QuadraticProgram {
    let pts = s.distribution().points();
    let k = pts.len();
    let mut q = vec![0.0; k * k];
    for (j, a) in pts.iter().enumerate() {
        for (i, b) in pts.iter().enumerate() {
            q[j * k + i] = a.prob * b.prob * a.config.l / s.f_per();
        }
    }
    let c = pts.iter().map(|pt| pt.prob * pt.config.w / pt.config.r - pt.prob * pt.config.l / pt.config.f).collect();
    let constant = pts.iter().map(|pt| pt.prob * pt.config.l / pt.config.f).sum();
    QuadraticProgram { q, c, constant }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub argmin: Policy,
    pub value: f64,
    /// Objective evaluations spent, including infeasible lattice points.
    pub evaluations: u64,
    pub refined: bool,
}

/// Points `0, r, 2r, ..., 1` of one lattice axis.
pub fn lattice_axis(resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidParameter { name: "resolution", value: resolution });
    }
    let inv = 1.0 / resolution;
    let rounded = inv.round();
    if (inv - rounded).abs() < 1e-9 {
        let steps = rounded as usize;
        Ok((0..=steps).map(|i| i as f64 / steps as f64).collect())
    } else {
        let steps = inv.ceil() as usize;
        Ok((0..=steps).map(|i| (i as f64 * resolution).min(1.0)).collect())
    }
}

/// Exhaustive search of `f` over the lattice `{0, r, ..., 1}^k`.
///
/// Non-finite values are skipped. Ties go to the lexicographically smallest
/// point, so the result does not depend on how the lattice is split across
/// threads.
pub fn grid_search<F>(f: F, k: usize, resolution: f64, cap: f64) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if k == 0 {
        return Err(Error::InvalidParameter { name: "K", value: 0.0 });
    }
    let axis = lattice_axis(resolution)?;
    let n = axis.len();
    let required = (n as f64).powi(k as i32);
    if required > cap {
        return Err(Error::BudgetExceeded { required, cap });
    }
    let total = n.pow(k as u32);

    let point = |mut idx: usize, buf: &mut [f64]| {
        for slot in buf.iter_mut().rev() {
            *slot = axis[idx % n];
            idx /= n;
        }
    };

    let best = (0..total)
        .into_par_iter()
        .with_min_len(1024)
        .fold(
            || (None::<(f64, usize)>, vec![0.0; k]),
            |(best, mut buf), idx| {
                point(idx, &mut buf);
                let v = f(&buf);
                let best = match best {
                    Some((bv, bi)) if !(v < bv || (v == bv && idx < bi)) => Some((bv, bi)),
                    _ if v.is_finite() => Some((v, idx)),
                    other => other,
                };
                (best, buf)
            },
        )
        .map(|(best, _)| best)
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(if (y.0, y.1) < (x.0, x.1) { y } else { x }),
                (x, None) => x,
                (None, y) => y,
            },
        );

    let (value, idx) = best.ok_or(Error::NoFeasiblePoint)?;
    let mut argmin = vec![0.0; k];
    point(idx, &mut argmin);
    Ok(OptimizationResult { argmin: Policy::new(argmin)?, value, evaluations: total as u64, refined: false })
}

/// Gradient oracle for [`refine_local`].
pub enum Gradient<'a> {
    Exact(&'a (dyn Fn(&[f64], &mut [f64]) + Sync)),
    /// Central differences with this step, one-sided at the box faces or
    /// where a neighbour is infeasible.
    Numeric(f64),
}

pub const MAX_REFINE_STEPS: usize = 10_000;

fn project(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64, h: f64, out: &mut [f64], evals: &mut u64) {
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let up = if x[j] + h <= 1.0 {
            probe[j] = x[j] + h;
            *evals += 1;
            Some(f(&probe)).filter(|v| v.is_finite())
        } else {
            None
        };
        let down = if x[j] - h >= 0.0 {
            probe[j] = x[j] - h;
            *evals += 1;
            Some(f(&probe)).filter(|v| v.is_finite())
        } else {
            None
        };
        probe[j] = x[j];
        out[j] = match (up, down) {
            (Some(u), Some(d)) => (u - d) / (2.0 * h),
            (Some(u), None) => (u - fx) / h,
            (None, Some(d)) => (fx - d) / h,
            (None, None) => 0.0,
        };
    }
}

/// Projected-gradient descent on `[0, 1]^k` with Armijo backtracking.
///
/// The objective never increases between accepted steps. Stops when the
/// projected-gradient step `|P(x - g) - x|` is below `tol`, when no step
/// length gives sufficient decrease, or after [`MAX_REFINE_STEPS`].
pub fn refine_local<F>(f: F, gradient: Gradient<'_>, start: &Policy, tol: f64) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64,
{
    let k = start.len();
    let mut x = start.as_slice().to_vec();
    let mut fx = f(&x);
    let mut evals = 1u64;
    if !fx.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let mut g = vec![0.0; k];
    let mut trial = vec![0.0; k];
    let mut step: f64 = 1.0;

    for _ in 0..MAX_REFINE_STEPS {
        match gradient {
            Gradient::Exact(grad) => grad(&x, &mut g),
            Gradient::Numeric(h) => numeric_gradient(&f, &x, fx, h, &mut g, &mut evals),
        }
        let pg_norm = x.iter().zip(&g).map(|(xi, gi)| ((xi - gi).clamp(0.0, 1.0) - xi).powi(2)).sum::<f64>().sqrt();
        if pg_norm < tol {
            break;
        }

        let mut accepted = false;
        step = (step * 2.0).min(1e6);
        while step > 1e-16 {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            project(&mut trial);
            let moved: f64 = trial.iter().zip(&x).map(|(t, xi)| (t - xi).powi(2)).sum();
            let ft = f(&trial);
            evals += 1;
            if ft.is_finite() && ft <= fx - 1e-4 * moved / step {
                accepted = moved > 0.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        fx = f(&x);
        evals += 1;
    }

    Ok(OptimizationResult { argmin: Policy::new(x)?, value: fx, evaluations: evals, refined: true })
}

/// Grid resolution used when none is given: 0.01 up to three types, 0.05 up
/// to six, 0.1 beyond.
pub fn default_resolution(k: usize) -> f64 {
    match k {
        0..=3 => 0.01,
        4..=6 => 0.05,
        _ => 0.1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfcOptions {
    /// `None` picks [`default_resolution`].
    pub resolution: Option<f64>,
    pub refine: bool,
    pub refine_tol: f64,
    pub evaluation_cap: f64,
}

impl Default for MfcOptions {
    fn default() -> Self {
        Self { resolution: None, refine: true, refine_tol: 1e-10, evaluation_cap: DEFAULT_EVALUATION_CAP }
    }
}

fn stationary_value(s: &StationaryScenario, x: &[f64]) -> f64 {
    Policy::new(x.to_vec()).and_then(|pi| s.objective(&pi)).unwrap_or(f64::INFINITY)
}

/// Cooperative optimum of either setting. The returned value is recomputed
/// from the scenario's own objective at the returned policy.
pub fn solve_mfc(scenario: &Scenario, opts: MfcOptions) -> Result<OptimizationResult> {
    let k = scenario.distribution().len();
    let resolution = opts.resolution.unwrap_or_else(|| default_resolution(k));

    let mut result = match scenario {
        Scenario::OneShot(s) => {
            let qp = assemble_qp(s);
            let coarse = grid_search(|x| qp.eval(x), k, resolution, opts.evaluation_cap)?;
            if opts.refine {
                let grad = |x: &[f64], out: &mut [f64]| qp.grad_into(x, out);
                let fine = refine_local(|x| qp.eval(x), Gradient::Exact(&grad), &coarse.argmin, opts.refine_tol)?;
                OptimizationResult { evaluations: coarse.evaluations + fine.evaluations, ..fine }
            } else {
                coarse
            }
        }
        Scenario::Stationary(s) => {
            let coarse = grid_search(|x| stationary_value(s, x), k, resolution, opts.evaluation_cap)?;
            if opts.refine {
                let fine = refine_local(
                    |x| stationary_value(s, x),
                    Gradient::Numeric(1e-7),
                    &coarse.argmin,
                    opts.refine_tol.max(1e-8),
                )?;
                OptimizationResult { evaluations: coarse.evaluations + fine.evaluations, ..fine }
            } else {
                coarse
            }
        }
    };
    result.value = scenario.objective(&result.argmin)?;
    Ok(result)
}
