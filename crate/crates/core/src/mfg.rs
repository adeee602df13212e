//! Competitive setting: best responses, exploitability and fictitious play.
//!
//! Against a fixed population policy a single user's cost is linear in its
//! own policy, so the best response is a per-type indicator: offload iff the
//! offload cost is strictly below the local cost. Ties go to local
//! computation.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::error::Error;
use crate::model::{CostModel, Policy, TypeCosts};

fn pure_best_response(costs: &[TypeCosts]) -> Policy {
    Policy::pure(costs.iter().map(|c| c.offload < c.local))
}

/// `sum_j p_j [pi_j (off_j - best_j) + (1 - pi_j)(loc_j - best_j)]`.
///
/// Algebraically equal to `J(pi) - J(BR(pi))`, written termwise so that
/// every summand is nonnegative in floating point as well.
fn exploitability_from_costs(probs: impl Iterator<Item = f64>, pi: &Policy, costs: &[TypeCosts]) -> f64 {
    probs
        .zip(pi.iter())
        .zip(costs)
        .map(|((p, x), c)| {
            let best = c.offload.min(c.local);
            p * (x * (c.offload - best) + (1.0 - x) * (c.local - best))
        })
        .sum()
}

/// Best pure response to the mean field generated by `pop`.
pub fn best_response<S: CostModel + ?Sized>(scenario: &S, pop: &Policy) -> Result<Policy, Error> {
    Ok(pure_best_response(&scenario.type_costs(pop)?))
}

/// Gain available to a single deviator when everyone plays `pi`.
pub fn exploitability<S: CostModel + ?Sized>(scenario: &S, pi: &Policy) -> Result<f64, Error> {
    let costs = scenario.type_costs(pi)?;
    Ok(exploitability_from_costs(scenario.distribution().probs(), pi, &costs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FictitiousPlayOptions {
    pub max_iters: usize,
    /// Stop once the exploitability of the averaged policy drops below this.
    pub tol: f64,
}

impl Default for FictitiousPlayOptions {
    fn default() -> Self {
        Self { max_iters: 5000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Exploitability of the averaged policy at this iteration.
    pub exploitability: f64,
    /// Wall-clock seconds since the solver started.
    pub elapsed_secs: f64,
    /// The averaged policy that was evaluated.
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FictitiousPlayReport {
    pub final_policy: Policy,
    pub history: Vec<IterationRecord>,
    pub iterations_run: usize,
}

impl FictitiousPlayReport {
    pub fn final_exploitability(&self) -> Option<f64> {
        self.history.last().map(|r| r.exploitability)
    }

    pub fn converged(&self, tol: f64) -> bool {
        self.final_exploitability().is_some_and(|e| e < tol)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("fictitious play stopped at iteration {}: {error}", .partial.iterations_run + 1)]
pub struct FictitiousPlayFailure {
    pub error: Error,
    /// Everything computed before the failing iteration.
    pub partial: FictitiousPlayReport,
}

/// Fictitious play on the averaged policy.
///
/// The first best response is taken against everyone computing locally,
/// which is feasible in every setting. The running average of best responses
/// is then updated as `avg <- (n * avg + BR(avg)) / (n + 1)` until the
/// exploitability of `avg` falls below `tol` or `max_iters` averages have
/// been evaluated.
pub fn fictitious_play<S: CostModel + ?Sized>(
    scenario: &S,
    opts: FictitiousPlayOptions,
) -> Result<FictitiousPlayReport, FictitiousPlayFailure> {
    let start = Instant::now();
    let k = scenario.distribution().len();
    let mut avg = vec![0.0; k];
    let mut history = Vec::with_capacity(opts.max_iters.min(1 << 16));

    let fail = |error: Error, history: Vec<IterationRecord>, avg: &[f64]| FictitiousPlayFailure {
        error,
        partial: FictitiousPlayReport {
            final_policy: history
                .last()
                .map(|r: &IterationRecord| r.policy.clone())
                .unwrap_or_else(|| Policy::new(avg.to_vec()).expect("averages stay in [0, 1]")),
            iterations_run: history.len(),
            history,
        },
    };
    if opts.max_iters == 0 {
        return Err(fail(Error::InvalidParameter { name: "max_iters", value: 0.0 }, history, &avg));
    }
    if opts.tol.is_nan() || opts.tol < 0.0 {
        return Err(fail(Error::InvalidParameter { name: "tol", value: opts.tol }, history, &avg));
    }

    match best_response(scenario, &Policy::zeros(k)) {
        Ok(br) => avg = br.into_vec(),
        Err(e) => return Err(fail(e, history, &avg)),
    }

    for n in 1..=opts.max_iters {
        let policy = Policy::new(avg.clone()).expect("averages stay in [0, 1]");
        let costs = match scenario.type_costs(&policy) {
            Ok(c) => c,
            Err(e) => return Err(fail(e, history, &avg)),
        };
        let gap = exploitability_from_costs(scenario.distribution().probs(), &policy, &costs);
        history.push(IterationRecord {
            iteration: n,
            exploitability: gap,
            elapsed_secs: start.elapsed().as_secs_f64(),
            policy,
        });
        if gap < opts.tol || n == opts.max_iters {
            break;
        }
        let br = pure_best_response(&costs);
        let weight = n as f64;
        for (a, b) in avg.iter_mut().zip(br.iter()) {
            *a = ((weight * *a + b) / (weight + 1.0)).clamp(0.0, 1.0);
        }
    }

    let final_policy = history.last().expect("at least one iteration").policy.clone();
    Ok(FictitiousPlayReport { final_policy, iterations_run: history.len(), history })
}
