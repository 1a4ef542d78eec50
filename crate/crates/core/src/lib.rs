//! Securities markets structured by Bayesian networks.
//!
//! Build compact conditional-security markets from a DAG, solve for
//! competitive equilibrium among expected-utility agents, and check whether
//! the equilibrium reaches risk-neutral consensus, matches a complete-market
//! benchmark, and prices redundant claims by inference.

pub mod agents;
pub mod arbitrage;
pub mod bayesnet;
pub mod equilibrium;
pub mod experiment;
pub mod error;
pub mod joint;
pub mod linalg;
pub mod protocol;
pub mod sampling;
pub mod scenario;
pub mod search;
pub mod securities;

pub use agents::{Agent, DemandOptions, Holdings, PriceVector, Utility};
pub use bayesnet::{BayesNet, Dag};
pub use equilibrium::{EquilibriumResult, SolverOptions};
pub use error::{Error, Result};
pub use joint::{EventExpr, EventSpace, JointDistribution, WorldState};
pub use securities::{Market, Security};
