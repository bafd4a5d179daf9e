//! Distributed mechanisms that compute Groves-taxed social choices by dual
//! decomposition and average consensus.
//!
//! The library provides the allocation model, an exact centralized oracle,
//! a round-based leader/follower protocol, the dual-decomposition and
//! consensus mechanisms, deviant follower programs and incentive sweeps.

pub mod analysis;
pub mod consensus;
pub mod dd;
pub mod error;
pub mod instances;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod scenario;
pub mod strategies;

pub use analysis::{asymptotic_ic_sweep, deviation_gain, net_cost, ArmStatus, ICReport, ICRow};
pub use consensus::{CommGraph, ConsensusRun};
pub use dd::{run_dd_mechanism, DdConfig, DdRun, DdTax, MechanismOutcome};
pub use error::{Error, Result};
pub use model::{AgentModel, AgentType, AllocationProblem, Coupling, QuadraticCost, SocialChoice, Society};
pub use oracle::{solve_social_optimum, DirectTax, SocialOptimum, VcgBaseline};
pub use protocol::{
    BroadcastPayload, FollowerReport, LeaderBroadcast, ReportPayload, RunConfig, Schedule, Strategy, Transcript,
};
pub use scenario::{load_scenario, parse_scenario, MechanismKind, Scenario, ScenarioRun, TaxRule};
pub use strategies::StrategyKind;
