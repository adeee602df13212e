//! Domain types and the exact mean-field timing formulas.
//!
//! A user type is a [`Configuration`] `(W, L, f, R)`: task size in bits,
//! task complexity in CPU cycles, local processing rate in cycles/second and
//! uplink rate in bits/second. A population is described by a
//! [`SupportDistribution`] over finitely many types, and a decentralized
//! policy by one offloading probability per type ([`Policy`]).
//!
//! Two scenarios share these types. In the one-shot setting
//! ([`OneShotScenario`]) every user has a single task and the MEC pool of
//! rate `N * f_per` is split equally among the offloaders, so in the
//! mean-field limit an offloaded task of type `j` costs
//!
//! ```text
//! W_j/R_j + L_j * m / f_per,   m = sum_k p_k pi_k
//! ```
//!
//! In the time-stationary setting ([`StationaryScenario`]) tasks arrive as a
//! Poisson stream of rate `lambda` per user and the pool rate is shared among
//! all offloaded jobs present. With `A = sum p_j pi_j W_j/R_j` and
//! `B = sum p_j pi_j L_j` the per-job allocated rate solves
//! `f_alloc = f_per / (lambda*A + lambda*B/f_alloc)`, i.e.
//! `f_alloc = (f_per - lambda*B) / (lambda*A)`, which requires
//! `f_per - lambda*B > 0`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on `sum p_j = 1`. Distributions outside it are rejected, never
/// renormalized.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// One user type `(W, L, f, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Configuration {
    /// Task size, bits.
    pub w: f64,
    /// Task complexity, CPU cycles.
    pub l: f64,
    /// Local processing rate, cycles/second.
    pub f: f64,
    /// Transmission rate, bits/second.
    pub r: f64,
}

impl Configuration {
    pub fn new(w: f64, l: f64, f: f64, r: f64) -> Result<Self> {
        for (field, value) in [("W", w), ("L", l), ("f", f), ("R", r)] {
            check_positive(field, value)?;
        }
        Ok(Self { w, l, f, r })
    }

    /// `W / R`, seconds.
    pub fn transmission_time(&self) -> f64 {
        self.w / self.r
    }

    /// `L / f`, seconds.
    pub fn local_time(&self) -> f64 {
        self.l / self.f
    }
}

fn check_positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfiguration { field, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportPoint {
    pub prob: f64,
    pub config: Configuration,
}

/// Finite-support type distribution. The support is ordered and policies
/// bind to indices, so repeated configurations stay distinct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportDistribution {
    points: Vec<SupportPoint>,
}

impl SupportDistribution {
    pub fn new(points: Vec<(f64, Configuration)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        for (index, &(value, _)) in points.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let sum: f64 = points.iter().map(|(p, _)| p).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::ProbabilitySum { sum, tolerance: PROBABILITY_TOLERANCE });
        }
        Ok(Self { points: points.into_iter().map(|(prob, config)| SupportPoint { prob, config }).collect() })
    }

    /// Single-type distribution.
    pub fn degenerate(config: Configuration) -> Self {
        Self { points: vec![SupportPoint { prob: 1.0, config }] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|pt| pt.prob)
    }

    pub fn configs(&self) -> impl Iterator<Item = &Configuration> + '_ {
        self.points.iter().map(|pt| &pt.config)
    }

    /// `E[L/f]`: the population cost when nobody offloads.
    pub fn mean_local_time(&self) -> f64 {
        self.points.iter().map(|pt| pt.prob * pt.config.local_time()).sum()
    }

    fn check_aligned(&self, pi: &Policy) -> Result<()> {
        if pi.len() == self.len() {
            Ok(())
        } else {
            Err(Error::LengthMismatch { expected: self.len(), found: pi.len() })
        }
    }

    /// `sum_j p_j pi_j g(C_j)`.
    fn weighted_sum(&self, pi: &Policy, g: impl Fn(&Configuration) -> f64) -> Result<f64> {
        self.check_aligned(pi)?;
        Ok(self.points.iter().zip(pi.iter()).map(|(pt, x)| pt.prob * x * g(&pt.config)).sum())
    }
}

/// Per-type offloading probabilities, index-aligned with a
/// [`SupportDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Policy(Vec<f64>);

impl Policy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::PolicyOutOfRange { index, value });
            }
        }
        Ok(Self(probs))
    }

    pub fn constant(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn ones(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    /// Pure policy from per-type decisions.
    pub fn pure(decisions: impl IntoIterator<Item = bool>) -> Self {
        Self(decisions.into_iter().map(|d| if d { 1.0 } else { 0.0 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Whether every entry is 0 or 1.
    pub fn is_pure(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0 || x == 1.0)
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for Policy {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// `m = sum_j p_j pi_j`, the mass of offloading users.
pub fn offload_mass(dist: &SupportDistribution, pi: &Policy) -> Result<f64> {
    dist.weighted_sum(pi, |_| 1.0)
}

/// Expected cost of one task of a given type, by decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeCosts {
    pub offload: f64,
    pub local: f64,
}

impl TypeCosts {
    /// Expected cost when offloading with probability `x`.
    pub fn mix(&self, x: f64) -> f64 {
        x * self.offload + (1.0 - x) * self.local
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GameMode {
    OneShot,
    Stationary,
}

impl std::fmt::Display for GameMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GameMode::OneShot => "oneshot",
            GameMode::Stationary => "stationary",
        })
    }
}

/// Mean-field cost structure shared by both settings: a representative
/// user's cost is linear in its own policy once the population policy is
/// fixed.
pub trait CostModel {
    fn distribution(&self) -> &SupportDistribution;

    fn mode(&self) -> GameMode;

    /// Per-type (offload, local) cost under the mean field induced by `pop`.
    fn type_costs(&self, pop: &Policy) -> Result<Vec<TypeCosts>>;

    /// Population-average cost when every user follows `pi`.
    fn objective(&self, pi: &Policy) -> Result<f64> {
        self.deviator_cost(pi, pi)
    }

    /// Expected cost of a user following `dev` while everyone else follows
    /// `pop`. Affine in `dev`.
    fn deviator_cost(&self, dev: &Policy, pop: &Policy) -> Result<f64> {
        let dist = self.distribution();
        dist.check_aligned(dev)?;
        let costs = self.type_costs(pop)?;
        Ok(dist.probs().zip(dev.iter()).zip(&costs).map(|((p, x), c)| p * c.mix(x)).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneShotScenario {
    dist: SupportDistribution,
    f_per: f64,
}

impl OneShotScenario {
    /// `f_per` is the per-user MEC rate; a system of `N` users has a pool of
    /// rate `N * f_per`.
    pub fn new(dist: SupportDistribution, f_per: f64) -> Result<Self> {
        if !(f_per.is_finite() && f_per > 0.0) {
            return Err(Error::InvalidParameter { name: "f_per", value: f_per });
        }
        Ok(Self { dist, f_per })
    }

    pub fn f_per(&self) -> f64 {
        self.f_per
    }
}

impl CostModel for OneShotScenario {
    fn distribution(&self) -> &SupportDistribution {
        &self.dist
    }

    fn mode(&self) -> GameMode {
        GameMode::OneShot
    }

    fn type_costs(&self, pop: &Policy) -> Result<Vec<TypeCosts>> {
        let m = offload_mass(&self.dist, pop)?;
        Ok(self
            .dist
            .configs()
            .map(|c| TypeCosts { offload: c.transmission_time() + c.l * m / self.f_per, local: c.local_time() })
            .collect())
    }
}

/// The two population moments that drive the stationary pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolMoments {
    /// `A = E[X W/R]`, seconds.
    pub tx: f64,
    /// `B = E[X L]`, cycles.
    pub work: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryScenario {
    dist: SupportDistribution,
    f_per: f64,
    lambda: f64,
}

impl StationaryScenario {
    pub fn new(dist: SupportDistribution, f_per: f64, lambda: f64) -> Result<Self> {
        if !(f_per.is_finite() && f_per > 0.0) {
            return Err(Error::InvalidParameter { name: "f_per", value: f_per });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter { name: "lambda", value: lambda });
        }
        Ok(Self { dist, f_per, lambda })
    }

    pub fn f_per(&self) -> f64 {
        self.f_per
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The same population and pool without arrivals.
    pub fn one_shot(&self) -> OneShotScenario {
        OneShotScenario { dist: self.dist.clone(), f_per: self.f_per }
    }

    pub fn moments(&self, pi: &Policy) -> Result<PoolMoments> {
        Ok(PoolMoments {
            tx: self.dist.weighted_sum(pi, Configuration::transmission_time)?,
            work: self.dist.weighted_sum(pi, |c| c.l)?,
        })
    }

    /// `f_per - lambda * E[XL]`; the policy is feasible iff this is positive.
    pub fn slack(&self, pi: &Policy) -> Result<f64> {
        Ok(self.f_per - self.lambda * self.moments(pi)?.work)
    }

    pub fn is_feasible(&self, pi: &Policy) -> Result<bool> {
        Ok(self.slack(pi)? > 0.0)
    }

    fn feasible_moments(&self, pi: &Policy) -> Result<(PoolMoments, f64)> {
        let moments = self.moments(pi)?;
        let slack = self.f_per - self.lambda * moments.work;
        if slack > 0.0 {
            Ok((moments, slack))
        } else {
            Err(Error::Infeasible { slack })
        }
    }

    /// Per-job MEC rate `f_alloc = (f_per - lambda*B) / (lambda*A)`.
    pub fn f_alloc(&self, pi: &Policy) -> Result<f64> {
        let (moments, slack) = self.feasible_moments(pi)?;
        if moments.tx == 0.0 {
            return Err(Error::DegeneratePolicy);
        }
        Ok(slack / (self.lambda * moments.tx))
    }

    /// Pool delay per cycle of work, `lambda*A / (f_per - lambda*B)`, i.e.
    /// `1/f_alloc`. Zero when nobody offloads: an offloaded job facing an
    /// empty pool is served at unbounded rate in the limit.
    pub fn pool_delay_per_cycle(&self, pi: &Policy) -> Result<f64> {
        let (moments, slack) = self.feasible_moments(pi)?;
        Ok(self.lambda * moments.tx / slack)
    }

    /// Mean number of offloaded jobs in the system per user,
    /// `lambda * (A + B/f_alloc)`.
    pub fn mean_jobs_per_user(&self, pi: &Policy) -> Result<f64> {
        let moments = self.moments(pi)?;
        let delay = self.pool_delay_per_cycle(pi)?;
        Ok(self.lambda * (moments.tx + moments.work * delay))
    }
}

impl CostModel for StationaryScenario {
    fn distribution(&self) -> &SupportDistribution {
        &self.dist
    }

    fn mode(&self) -> GameMode {
        GameMode::Stationary
    }

    fn type_costs(&self, pop: &Policy) -> Result<Vec<TypeCosts>> {
        let delay = self.pool_delay_per_cycle(pop)?;
        Ok(self
            .dist
            .configs()
            .map(|c| TypeCosts { offload: c.transmission_time() + c.l * delay, local: c.local_time() })
            .collect())
    }
}

/// Either scenario kind, for callers that pick the setting at run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Scenario {
    #[serde(rename = "oneshot")]
    OneShot(OneShotScenario),
    Stationary(StationaryScenario),
}

impl CostModel for Scenario {
    fn distribution(&self) -> &SupportDistribution {
        match self {
            Scenario::OneShot(s) => s.distribution(),
            Scenario::Stationary(s) => s.distribution(),
        }
    }

    fn mode(&self) -> GameMode {
        match self {
            Scenario::OneShot(_) => GameMode::OneShot,
            Scenario::Stationary(_) => GameMode::Stationary,
        }
    }

    fn type_costs(&self, pop: &Policy) -> Result<Vec<TypeCosts>> {
        match self {
            Scenario::OneShot(s) => s.type_costs(pop),
            Scenario::Stationary(s) => s.type_costs(pop),
        }
    }
}

impl From<OneShotScenario> for Scenario {
    fn from(s: OneShotScenario) -> Self {
        Scenario::OneShot(s)
    }
}

impl From<StationaryScenario> for Scenario {
    fn from(s: StationaryScenario) -> Self {
        Scenario::Stationary(s)
    }
}

/// The scenarios used throughout the documentation and tests.
pub mod presets {
    use super::*;

    fn dist(points: &[(f64, [f64; 4])]) -> SupportDistribution {
        SupportDistribution::new(
            points.iter().map(|&(p, [w, l, f, r])| (p, Configuration::new(w, l, f, r).unwrap())).collect(),
        )
        .unwrap()
    }

    /// Three-type competitive example: p = (0.2, 0.4, 0.4), f_per = 0.5.
    pub fn competitive() -> OneShotScenario {
        OneShotScenario::new(
            dist(&[(0.2, [1.0, 1.0, 1.0, 20.0]), (0.4, [3.0, 2.0, 1.0, 20.0]), (0.4, [5.0, 3.0, 1.0, 20.0])]),
            0.5,
        )
        .unwrap()
    }

    /// Stationary competitive example at lambda = 0.225.
    pub fn competitive_stationary() -> StationaryScenario {
        StationaryScenario::new(
            dist(&[(0.2, [1.0, 1.0, 5.0, 10.0]), (0.4, [3.0, 2.0, 5.0, 10.0]), (0.4, [5.0, 3.0, 5.0, 10.0])]),
            0.5,
            0.225,
        )
        .unwrap()
    }

    /// Two-type cooperative example: p = (0.8, 0.2), f_per = 3.
    pub fn cooperative() -> OneShotScenario {
        OneShotScenario::new(dist(&[(0.8, [3.0, 5.0, 3.0, 10.0]), (0.2, [1.5, 1.5, 5.0, 25.0])]), 3.0).unwrap()
    }

    /// Stationary cooperative example at lambda = 0.6.
    pub fn cooperative_stationary() -> StationaryScenario {
        StationaryScenario::new(dist(&[(0.8, [3.0, 1.5, 5.0, 12.0]), (0.2, [1.5, 1.0, 2.0, 20.0])]), 3.0, 0.6).unwrap()
    }
}
