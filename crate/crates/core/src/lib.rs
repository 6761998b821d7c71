//! Combinatorial reinforcement learning with multinomial-logit preference
//! feedback in linear MDPs.
//!
//! Modules, bottom-up:
//! - [`numerics`]: dense symmetric linear algebra and root finding;
//! - [`mnl`]: the MNL choice model and its online mirror-descent estimator;
//! - [`values`]: ridge value fits, bonuses and variance schedules;
//! - [`assort`]: size-capped assortment optimization;
//! - [`envs`]: tabular environments and the exact DP oracle;
//! - [`agents`]: MNL-VQL and the comparison policies;
//! - [`bench`]: seeded experiment runner and CSV output.

pub mod agents;
pub mod assort;
pub mod bench;
pub mod envs;
pub mod mnl;
pub mod numerics;
pub mod values;
