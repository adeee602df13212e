//! Mean-field solvers for task offloading in large edge-computing systems.
//!
//! Users with heterogeneous tasks decide whether to compute locally or
//! offload to a shared MEC pool whose capacity scales with the number of
//! users. In the limit of many users the problem only depends on the type
//! distribution and a per-type offloading probability, which makes both the
//! selfish and the cooperative problem tractable:
//!
//! - [`mfg`] finds mean-field equilibria by fictitious play and measures
//!   their exploitability.
//! - [`mfc`] minimizes the average cost with a lattice search plus
//!   projected-gradient refinement.
//! - [`finite`] checks a mean-field policy in the finite `N`-user one-shot
//!   system by Monte Carlo.
//! - [`queue`] simulates the finite time-stationary system with Poisson
//!   arrivals and a shared processing pool.
//!
//! ```
//! use mfoffload::model::{presets, Policy};
//! use mfoffload::mfg::{fictitious_play, FictitiousPlayOptions};
//!
//! let scenario = presets::competitive();
//! let report = fictitious_play(&scenario, FictitiousPlayOptions::default()).unwrap();
//! let target = Policy::new(vec![1.0, 0.65625, 0.0]).unwrap();
//! assert!(report.final_policy.max_abs_diff(&target) < 1e-2);
//! ```

pub mod error;
pub mod finite;
pub mod mfc;
pub mod mfg;
pub mod model;
pub mod queue;
pub mod seed;

pub use error::{Error, Result};
pub use model::{
    Configuration, CostModel, GameMode, OneShotScenario, Policy, Scenario, StationaryScenario, SupportDistribution,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/competitive.md")]
    mod competitive {}
    #[doc = include_str!("../../../book/src/cooperative.md")]
    mod cooperative {}
    #[doc = include_str!("../../../book/src/stationary.md")]
    mod stationary {}
    #[doc = include_str!("../../../book/src/finite.md")]
    mod finite {}
    #[doc = include_str!("../../../book/src/queue.md")]
    mod queue {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
