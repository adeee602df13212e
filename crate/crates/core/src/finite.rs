//! Monte Carlo evaluation of a mean-field policy in the finite `N`-user
//! one-shot system.
//!
//! With `N` users the pool has rate `N * f_per` and is split equally among
//! the `S` users that offload, so an offloading user `i` waits
//! `W_i/R_i + L_i * S / (N * f_per)`.
//!
//! Samples are processed in fixed-size blocks, each sample with its own
//! derived random stream, and block results are merged in block order.
//! Estimates therefore depend only on `(seed, samples, N)`, not on the
//! number of threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CostModel, OneShotScenario, Policy, SupportDistribution};
use crate::seed;

const BLOCK: usize = 256;

/// Largest support size for which all `2^K` pure deviations are enumerated.
pub const MAX_DEVIATION_TYPES: usize = 20;

/// Cap on `samples * 2^K` for the exploitability estimator.
pub const DEFAULT_DEVIATION_BUDGET: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteEvalResult {
    pub n_users: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Inverse-CDF sampler over the support indices.
#[derive(Debug, Clone)]
pub struct TypeSampler {
    cumulative: Vec<f64>,
}

impl TypeSampler {
    pub fn new(dist: &SupportDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = dist
            .probs()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // rounding can leave the last cumulative value just below 1
        idx.min(self.cumulative.len() - 1)
    }
}

/// Types and offloading decisions of one draw of the `N`-user system.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampledPopulation {
    pub type_indices: Vec<usize>,
    pub decisions: Vec<bool>,
}

impl SampledPopulation {
    /// Draws `n` users iid from `sampler`, each offloading with probability
    /// `pi[type]`, reusing the existing buffers.
    pub fn resample<R: Rng + ?Sized>(&mut self, sampler: &TypeSampler, pi: &Policy, n: usize, rng: &mut R) {
        self.type_indices.clear();
        self.decisions.clear();
        for _ in 0..n {
            let t = sampler.sample(rng);
            let u: f64 = rng.random();
            self.type_indices.push(t);
            self.decisions.push(u < pi[t]);
        }
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn offloaders(&self) -> usize {
        self.decisions.iter().filter(|&&x| x).count()
    }
}

fn offload_time(s: &OneShotScenario, t: usize, offloaders: usize, n: usize) -> f64 {
    let c = &s.distribution().points()[t].config;
    c.transmission_time() + c.l * offloaders as f64 / (n as f64 * s.f_per())
}

fn local_time(s: &OneShotScenario, t: usize) -> f64 {
    s.distribution().points()[t].config.local_time()
}

/// Cost paid by user `i` in a realized population with pool rate
/// `N * f_per`.
pub fn realized_cost(pop: &SampledPopulation, s: &OneShotScenario, i: usize) -> f64 {
    let t = pop.type_indices[i];
    if pop.decisions[i] {
        offload_time(s, t, pop.offloaders(), pop.len())
    } else {
        local_time(s, t)
    }
}

fn check_inputs(s: &OneShotScenario, pi: &Policy, n: usize, samples: usize) -> Result<()> {
    let k = s.distribution().len();
    if pi.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: pi.len() });
    }
    if n == 0 {
        return Err(Error::InvalidParameter { name: "N", value: 0.0 });
    }
    if samples == 0 {
        return Err(Error::InvalidParameter { name: "samples", value: 0.0 });
    }
    Ok(())
}

fn blocks(samples: usize) -> impl IndexedParallelIterator<Item = std::ops::Range<usize>> {
    (0..samples.div_ceil(BLOCK)).into_par_iter().map(move |b| b * BLOCK..((b + 1) * BLOCK).min(samples))
}

/// Running count, mean and sum of squared deviations (Welford), mergeable
/// in a fixed order. Constant data gives exactly zero spread.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: &Self) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n / n;
        self.m2 += other.m2 + delta * delta * self.n * other.n / n;
        self.n = n;
    }

    /// Standard error of the mean over `samples` draws, of which the
    /// unrecorded ones are zero.
    fn standard_error_over(&self, samples: usize) -> (f64, f64) {
        let mut all = *self;
        let zeros = Moments { n: samples as f64 - self.n, mean: 0.0, m2: 0.0 };
        all.merge(&zeros);
        let se = if samples > 1 { (all.m2 / (all.n - 1.0) / all.n).max(0.0).sqrt() } else { 0.0 };
        (all.mean, se)
    }
}

/// Per-type moments of the differences between the cost under `pi` and the
/// cost of a deviator who offloads (`off`) or computes locally (`loc`).
#[derive(Debug, Clone)]
struct DeviationSums {
    off: Vec<Moments>,
    loc: Vec<Moments>,
}

impl DeviationSums {
    fn new(k: usize) -> Self {
        Self { off: vec![Moments::default(); k], loc: vec![Moments::default(); k] }
    }

    fn merge(&mut self, other: &Self) {
        for (x, y) in self.off.iter_mut().zip(&other.off).chain(self.loc.iter_mut().zip(&other.loc)) {
            x.merge(y);
        }
    }
}

/// Exploitability of `pi` in the `N`-user game, estimated by Monte Carlo.
///
/// User 0 is the deviator; the other `N - 1` users follow `pi`. Every draw
/// is reused for all `2^K` pure deviation policies. The estimate is the
/// largest sample-average gain over those policies, and the standard error is
/// that of the per-sample gain of the maximizing policy.
pub fn estimate_exploitability_n(
    s: &OneShotScenario,
    pi: &Policy,
    n: usize,
    samples: usize,
    seed_value: u64,
) -> Result<FiniteEvalResult> {
    check_inputs(s, pi, n, samples)?;
    let k = s.distribution().len();
    if k > MAX_DEVIATION_TYPES {
        return Err(Error::BudgetExceeded {
            required: 2f64.powi(k as i32),
            cap: 2f64.powi(MAX_DEVIATION_TYPES as i32),
        });
    }
    let required = samples as f64 * 2f64.powi(k as i32);
    if required > DEFAULT_DEVIATION_BUDGET {
        return Err(Error::BudgetExceeded { required, cap: DEFAULT_DEVIATION_BUDGET });
    }
    let sampler = TypeSampler::new(s.distribution());

    let partials: Vec<DeviationSums> = blocks(samples)
        .map(|range| {
            let mut sums = DeviationSums::new(k);
            let mut pop = SampledPopulation::default();
            for idx in range {
                let mut rng: ChaCha8Rng = seed::stream(seed_value, seed::FINITE_EXPLOITABILITY, idx as u64);
                pop.resample(&sampler, pi, n, &mut rng);
                let t = pop.type_indices[0];
                let others = pop.offloaders() - usize::from(pop.decisions[0]);
                let off = offload_time(s, t, others + 1, n);
                let loc = local_time(s, t);
                let own = if pop.decisions[0] { off } else { loc };
                sums.off[t].push(own - off);
                sums.loc[t].push(own - loc);
            }
            sums
        })
        .collect();
    let mut total = DeviationSums::new(k);
    for p in &partials {
        total.merge(p);
    }

    let mut best: Option<(f64, f64)> = None;
    for mask in 0u32..(1u32 << k) {
        let mut gain = Moments::default();
        for j in 0..k {
            gain.merge(if mask >> j & 1 == 1 { &total.off[j] } else { &total.loc[j] });
        }
        let (mean, se) = gain.standard_error_over(samples);
        if best.is_none_or(|(b, _)| mean > b) {
            best = Some((mean, se));
        }
    }
    let (estimate, standard_error) = best.expect("at least one deviation policy");
    Ok(FiniteEvalResult { n_users: n, estimate, standard_error, samples, seed: seed_value })
}

/// `|E[(1/N) sum_i cost_i] - J(pi)|`: how far the finite-`N` average cost
/// under `pi` is from the mean-field objective.
pub fn estimate_coop_deviation(
    s: &OneShotScenario,
    pi: &Policy,
    n: usize,
    samples: usize,
    seed_value: u64,
) -> Result<FiniteEvalResult> {
    check_inputs(s, pi, n, samples)?;
    let limit = s.objective(pi)?;
    let sampler = TypeSampler::new(s.distribution());

    let partials: Vec<Moments> = blocks(samples)
        .map(|range| {
            let mut pop = SampledPopulation::default();
            let mut acc = Moments::default();
            for idx in range {
                let mut rng: ChaCha8Rng = seed::stream(seed_value, seed::FINITE_COOP, idx as u64);
                pop.resample(&sampler, pi, n, &mut rng);
                let offloaders = pop.offloaders();
                let total: f64 = pop
                    .type_indices
                    .iter()
                    .zip(&pop.decisions)
                    .map(|(&t, &x)| if x { offload_time(s, t, offloaders, n) } else { local_time(s, t) })
                    .sum();
                acc.push(total / n as f64 - limit);
            }
            acc
        })
        .collect();
    let mut acc = Moments::default();
    for p in &partials {
        acc.merge(p);
    }
    let (mean, standard_error) = acc.standard_error_over(samples);
    Ok(FiniteEvalResult { n_users: n, estimate: mean.abs(), standard_error, samples, seed: seed_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::model::Configuration;

    fn single(f_per: f64) -> OneShotScenario {
        let c = Configuration::new(1.0, 1.0, 1.0, 20.0).unwrap();
        OneShotScenario::new(SupportDistribution::degenerate(c), f_per).unwrap()
    }

    #[test]
    fn realized_cost_single_offloader() {
        let s = single(0.5);
        let pop = SampledPopulation { type_indices: vec![0], decisions: vec![true] };
        assert!((realized_cost(&pop, &s, 0) - 2.05).abs() < 1e-15);
    }

    #[test]
    fn realized_cost_local_ignores_others() {
        let s = competitive();
        let a = SampledPopulation { type_indices: vec![1, 0, 2], decisions: vec![false, true, true] };
        let b = SampledPopulation { type_indices: vec![1, 2, 2], decisions: vec![false, false, false] };
        assert_eq!(realized_cost(&a, &s, 0), 2.0);
        assert_eq!(realized_cost(&b, &s, 0), 2.0);
    }

    #[test]
    fn realized_cost_symmetric() {
        let s = competitive();
        let pop = SampledPopulation { type_indices: vec![1, 1], decisions: vec![true, true] };
        assert_eq!(realized_cost(&pop, &s, 0), realized_cost(&pop, &s, 1));
    }

    #[test]
    fn exploitability_single_user_closed_form() {
        let s = single(0.5);
        let r = estimate_exploitability_n(&s, &Policy::ones(1), 1, 100, 3).unwrap();
        assert!((r.estimate - 1.05).abs() < 1e-12);
        assert_eq!(r.standard_error, 0.0);
    }

    #[test]
    fn coop_deviation_exact_when_everyone_offloads() {
        let s = single(0.5);
        let r = estimate_coop_deviation(&s, &Policy::ones(1), 1, 50, 3).unwrap();
        assert!(r.estimate < 1e-15);
    }

    #[test]
    fn coop_deviation_all_local_shrinks_with_samples() {
        let s = cooperative();
        let small = estimate_coop_deviation(&s, &Policy::zeros(2), 10, 200, 1).unwrap();
        let large = estimate_coop_deviation(&s, &Policy::zeros(2), 10, 20_000, 1).unwrap();
        assert!(small.estimate < 4.0 * small.standard_error + 1e-12);
        assert!(large.estimate < 4.0 * large.standard_error + 1e-12);
        assert!(large.standard_error < small.standard_error / 5.0);
    }

    #[test]
    fn estimators_are_deterministic() {
        let s = competitive();
        let pi = Policy::new(vec![1.0, 0.65625, 0.0]).unwrap();
        let a = estimate_exploitability_n(&s, &pi, 20, 1000, 9).unwrap();
        let b = estimate_exploitability_n(&s, &pi, 20, 1000, 9).unwrap();
        assert_eq!(a, b);
        let c = estimate_exploitability_n(&s, &pi, 20, 1000, 10).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let s = cooperative();
        let pi = Policy::new(vec![0.5125, 0.0]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                (
                    estimate_coop_deviation(&s, &pi, 30, 3000, 4).unwrap(),
                    estimate_exploitability_n(&s, &pi, 30, 3000, 4).unwrap(),
                )
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = competitive();
        assert!(estimate_exploitability_n(&s, &Policy::zeros(2), 5, 10, 0).is_err());
        assert!(estimate_exploitability_n(&s, &Policy::zeros(3), 0, 10, 0).is_err());
        assert!(estimate_coop_deviation(&s, &Policy::zeros(3), 5, 0, 0).is_err());
    }

    #[test]
    fn type_sampler_frequencies() {
        let s = competitive();
        let sampler = TypeSampler::new(s.distribution());
        let mut rng = seed::stream(1, 99, 0);
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[sampler.sample(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.4, 0.4]) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.01);
        }
    }
}
