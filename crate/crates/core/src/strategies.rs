//! Follower programs: the suggested dual-decomposition follower and the
//! deviations used to probe incentive compatibility.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{CommGraph, DualConsensusFollower, LinearConsensusFollower};
use crate::error::{Error, Result};
use crate::model::{AgentModel, AgentType, AllocationProblem, Coupling, QuadraticCost, Society};
use crate::protocol::{
    BroadcastPayload, EdgeDual, LeaderBroadcast, NeighborMessage, ReportPayload, Strategy, StrategyError,
};

/// Declarative description of a follower's behaviour.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    Honest,
    /// Runs the suggested program for a different type.
    Misreport { theta: Vec<f64> },
    /// Misreport drawn uniformly from `θ ± scale` with the scenario seed.
    RandomMisreport { scale: f64 },
    /// Quantity leader anticipating the price reaction (dual decomposition only).
    Stackelberg,
    /// Same proposal every round.
    Constant { value: Vec<f64> },
}

impl StrategyKind {
    pub fn is_honest(&self) -> bool {
        matches!(self, StrategyKind::Honest)
    }

    /// The type this strategy acts on, if it acts as some type at all.
    pub fn acted_type(&self, truth: &AgentType, agent: usize, seed: u64) -> Result<Option<AgentType>> {
        match self {
            StrategyKind::Honest => Ok(Some(truth.clone())),
            StrategyKind::Misreport { theta } => {
                if theta.len() != truth.dim() {
                    return Err(Error::dims(format!("misreport of agent {agent}"), truth.dim(), theta.len()));
                }
                AgentType::new(theta.clone()).map(Some)
            }
            StrategyKind::RandomMisreport { scale } => {
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::Config(format!("misreport scale must be >= 0, got {scale}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(agent as u64));
                let theta = truth
                    .theta()
                    .iter()
                    .map(|t| t + scale * rng.gen_range(-1.0..=1.0))
                    .collect();
                AgentType::new(theta).map(Some)
            }
            StrategyKind::Stackelberg | StrategyKind::Constant { .. } => Ok(None),
        }
    }

    /// Short label for reports.
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Honest => "honest".into(),
            StrategyKind::Misreport { theta } => format!("misreport{theta:?}"),
            StrategyKind::RandomMisreport { scale } => format!("random-misreport({scale})"),
            StrategyKind::Stackelberg => "stackelberg".into(),
            StrategyKind::Constant { value } => format!("constant{value:?}"),
        }
    }
}

fn dual_broadcast(b: &LeaderBroadcast) -> Result<(&[f64], &[f64]), StrategyError> {
    match &b.payload {
        BroadcastPayload::Dual { p, x } => Ok((p, x)),
        other => Err(StrategyError(format!("expected a price broadcast, got {other:?}"))),
    }
}

fn eval(cost: &QuadraticCost, x: &DVector<f64>) -> Result<f64, StrategyError> {
    cost.evaluate(x).map_err(|e| StrategyError(e.to_string()))
}

/// Cost at this agent's block of the broadcast point.
fn cost_at_broadcast(
    cost: &QuadraticCost,
    block: &std::ops::Range<usize>,
    x: &[f64],
) -> Result<f64, StrategyError> {
    let xi = x
        .get(block.clone())
        .ok_or_else(|| StrategyError("broadcast point has the wrong dimension".into()))?;
    eval(cost, &DVector::from_column_slice(xi))
}

/// The suggested follower: best response to the broadcast price with
/// truthful cost reports `(v_i(x_i), x̂_i, v_i(x̂_i))`.
#[derive(Clone, Debug)]
pub struct HonestDd {
    cost: QuadraticCost,
    r_block: DMatrix<f64>,
    block: std::ops::Range<usize>,
    v: f64,
    x_hat: DVector<f64>,
    v_hat: f64,
}

impl HonestDd {
    pub fn new(cost: QuadraticCost, coupling: &Coupling, agent: usize) -> Self {
        let x_hat = cost.unconstrained_minimizer();
        HonestDd {
            r_block: coupling.r_block(agent),
            block: coupling.block(agent),
            v: cost.minimum(),
            v_hat: cost.minimum(),
            x_hat,
            cost,
        }
    }

    pub fn proposal(&self) -> &DVector<f64> {
        &self.x_hat
    }
}

impl Strategy for HonestDd {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        self.x_hat = self.cost.unconstrained_minimizer();
        self.v_hat = eval(&self.cost, &self.x_hat)?;
        self.v = self.v_hat;
        Ok(self.emit_report())
    }

    fn update_state(&mut self, broadcast: &LeaderBroadcast, _: &[NeighborMessage<'_>]) -> Result<(), StrategyError> {
        let (p, x) = dual_broadcast(broadcast)?;
        self.v = cost_at_broadcast(&self.cost, &self.block, x)?;
        let q = self.r_block.transpose() * DVector::from_column_slice(p);
        self.x_hat = self
            .cost
            .argmin_augmented(&q)
            .map_err(|e| StrategyError(e.to_string()))?;
        self.v_hat = eval(&self.cost, &self.x_hat)?;
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        ReportPayload::Dual {
            v: self.v,
            x_hat: self.x_hat.as_slice().to_vec(),
            v_hat: self.v_hat,
        }
    }
}

pub fn honest_dd(cost: QuadraticCost, coupling: &Coupling, agent: usize) -> HonestDd {
    HonestDd::new(cost, coupling, agent)
}

/// The suggested program run for `fake` instead of the true type. Net cost
/// is still judged at the true type by the analysis.
pub fn misreport_type(model: &AgentModel, fake: &AgentType, coupling: &Coupling, agent: usize) -> Result<HonestDd> {
    Ok(HonestDd::new(model.cost(fake)?, coupling, agent))
}

/// Inner tolerance on `‖Rx̂ − c‖` when simulating the market reaction.
pub const REACTION_TOLERANCE: f64 = 1e-8;
pub const REACTION_ITERATION_CAP: usize = 1_000_000;
const FINITE_DIFFERENCE_STEP: f64 = 1e-3;

/// A quantity leader: moves its proposal by gradient descent on
/// `u_i(x_i) = v_i(x_i) + p(x_i)ᵀR_i x_i`, where the price reaction `p(·)` is
/// found by simulating the other followers and the dual update to their fixed
/// point with `x_i` frozen, and differentiated by central differences.
#[derive(Clone, Debug)]
pub struct StackelbergLeader {
    agent: usize,
    market: AllocationProblem,
    gamma: f64,
    iteration_cap: usize,
    block: std::ops::Range<usize>,
    v: f64,
    x_hat: DVector<f64>,
}

impl StackelbergLeader {
    pub fn new(market: AllocationProblem, agent: usize, gamma: f64) -> Self {
        let x_hat = market.cost(agent).unconstrained_minimizer();
        StackelbergLeader {
            agent,
            block: market.coupling().block(agent),
            v: market.cost(agent).minimum(),
            x_hat,
            market,
            gamma,
            iteration_cap: REACTION_ITERATION_CAP,
        }
    }

    /// Bound on the inner iterations used to settle the market reaction.
    pub fn with_iteration_cap(mut self, cap: usize) -> Self {
        self.iteration_cap = cap;
        self
    }

    fn own_cost(&self) -> &QuadraticCost {
        self.market.cost(self.agent)
    }

    /// Price and the other agents' proposals once the market settles around
    /// the frozen proposal `own`.
    pub fn reaction(&self, own: &DVector<f64>, warm: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), StrategyError> {
        let coupling = self.market.coupling();
        let fixed = coupling.r_block(self.agent) * own - coupling.c();
        let mut p = warm.clone();
        let mut x = DVector::zeros(coupling.dim());
        x.rows_mut(self.block.start, self.block.len()).copy_from(own);
        for _ in 0..self.iteration_cap {
            let mut violation = fixed.clone();
            for j in (0..self.market.agents()).filter(|&j| j != self.agent) {
                let rj = coupling.r_block(j);
                let xj = self
                    .market
                    .cost(j)
                    .argmin_augmented(&(rj.transpose() * &p))
                    .map_err(|e| StrategyError(e.to_string()))?;
                violation += &rj * &xj;
                let b = coupling.block(j);
                x.rows_mut(b.start, b.len()).copy_from(&xj);
            }
            if violation.norm() <= REACTION_TOLERANCE {
                return Ok((p, x));
            }
            p += violation * self.gamma;
        }
        Err(StrategyError(format!(
            "market reaction did not settle within {} iterations",
            self.iteration_cap
        )))
    }

    fn utility(&self, own: &DVector<f64>, warm: &DVector<f64>) -> Result<f64, StrategyError> {
        let (p, _) = self.reaction(own, warm)?;
        let ri = self.market.coupling().r_block(self.agent);
        Ok(eval(self.own_cost(), own)? + p.dot(&(ri * own)))
    }

    pub fn proposal(&self) -> &DVector<f64> {
        &self.x_hat
    }
}

impl Strategy for StackelbergLeader {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        self.x_hat = self.own_cost().unconstrained_minimizer();
        self.v = eval(self.own_cost(), &self.x_hat)?;
        Ok(self.emit_report())
    }

    fn update_state(&mut self, broadcast: &LeaderBroadcast, _: &[NeighborMessage<'_>]) -> Result<(), StrategyError> {
        let (p, x) = dual_broadcast(broadcast)?;
        self.v = cost_at_broadcast(self.own_cost(), &self.block, x)?;
        let warm = DVector::from_column_slice(p);
        let h = FINITE_DIFFERENCE_STEP;
        let mut grad = DVector::zeros(self.x_hat.len());
        for d in 0..self.x_hat.len() {
            let mut up = self.x_hat.clone();
            up[d] += h;
            let mut down = self.x_hat.clone();
            down[d] -= h;
            grad[d] = (self.utility(&up, &warm)? - self.utility(&down, &warm)?) / (2.0 * h);
        }
        self.x_hat -= grad * self.gamma;
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        let v_hat = self.own_cost().evaluate(&self.x_hat).unwrap_or(f64::NAN);
        ReportPayload::Dual {
            v: self.v,
            x_hat: self.x_hat.as_slice().to_vec(),
            v_hat,
        }
    }
}

/// `market` is the true problem: the leader is assumed to know how the
/// others react.
pub fn stackelberg_leader(market: AllocationProblem, agent: usize, gamma: f64) -> StackelbergLeader {
    StackelbergLeader::new(market, agent, gamma)
}

/// Reports the same proposal every round, with truthful cost values.
#[derive(Clone, Debug)]
pub struct ConstantDd {
    cost: QuadraticCost,
    block: std::ops::Range<usize>,
    value: DVector<f64>,
    v: f64,
}

impl Strategy for ConstantDd {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        self.v = eval(&self.cost, &self.value)?;
        Ok(self.emit_report())
    }

    fn update_state(&mut self, broadcast: &LeaderBroadcast, _: &[NeighborMessage<'_>]) -> Result<(), StrategyError> {
        let (_, x) = dual_broadcast(broadcast)?;
        self.v = cost_at_broadcast(&self.cost, &self.block, x)?;
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        ReportPayload::Dual {
            v: self.v,
            x_hat: self.value.as_slice().to_vec(),
            v_hat: self.cost.evaluate(&self.value).unwrap_or(f64::NAN),
        }
    }
}

pub fn constant_report(cost: QuadraticCost, coupling: &Coupling, agent: usize, value: Vec<f64>) -> Result<ConstantDd> {
    if value.len() != cost.dim() {
        return Err(Error::dims(format!("constant proposal of agent {agent}"), cost.dim(), value.len()));
    }
    Ok(ConstantDd {
        block: coupling.block(agent),
        v: 0.0,
        value: DVector::from_vec(value),
        cost,
    })
}

/// A consensus follower stuck at one value. It never moves the duals it owns.
#[derive(Clone, Debug)]
pub struct ConstantConsensus {
    theta: f64,
    value: f64,
    owned: Vec<usize>,
}

impl ConstantConsensus {
    pub fn new(graph: &CommGraph, agent: usize, theta: f64, value: f64) -> Self {
        let owned = graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, &(i, _))| i == agent)
            .map(|(l, _)| l)
            .collect();
        ConstantConsensus { theta, value, owned }
    }
}

impl Strategy for ConstantConsensus {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        Ok(self.emit_report())
    }

    fn update_state(&mut self, _: &LeaderBroadcast, _: &[NeighborMessage<'_>]) -> Result<(), StrategyError> {
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        ReportPayload::Consensus {
            x: self.value,
            v: (self.value - self.theta).powi(2),
            duals: self.owned.iter().map(|&edge| EdgeDual { edge, p: 0.0 }).collect(),
        }
    }
}

/// Followers for the dual-decomposition mechanism.
pub fn build_dd_followers(
    society: &Society,
    types: &[AgentType],
    profile: &[StrategyKind],
    gamma: f64,
    seed: u64,
) -> Result<Vec<Box<dyn Strategy>>> {
    if profile.len() != types.len() {
        return Err(Error::dims("strategy profile", types.len(), profile.len()));
    }
    let truth = society.instantiate(types)?;
    let coupling = society.coupling();
    profile
        .iter()
        .enumerate()
        .map(|(i, kind)| -> Result<Box<dyn Strategy>> {
            Ok(match kind {
                StrategyKind::Stackelberg => Box::new(stackelberg_leader(truth.clone(), i, gamma)),
                StrategyKind::Constant { value } => {
                    Box::new(constant_report(truth.cost(i).clone(), coupling, i, value.clone())?)
                }
                _ => {
                    let acted = kind.acted_type(&types[i], i, seed)?.expect("type-based strategy");
                    Box::new(misreport_type(&society.models()[i], &acted, coupling, i)?)
                }
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsensusAlgorithm {
    /// Edge-dual decomposition.
    Dual,
    /// Linear averaging.
    Linear,
}

/// Followers for one of the consensus mechanisms.
pub fn build_consensus_followers(
    graph: &CommGraph,
    theta: &[f64],
    profile: &[StrategyKind],
    algorithm: ConsensusAlgorithm,
    gamma: f64,
    seed: u64,
) -> Result<Vec<Box<dyn Strategy>>> {
    if profile.len() != theta.len() || theta.len() != graph.vertices() {
        return Err(Error::dims("strategy profile", graph.vertices(), profile.len()));
    }
    profile
        .iter()
        .enumerate()
        .map(|(i, kind)| -> Result<Box<dyn Strategy>> {
            let truth = AgentType::scalar(theta[i])?;
            Ok(match kind {
                StrategyKind::Stackelberg => {
                    return Err(Error::Config(
                        "the Stackelberg strategy is defined for dual decomposition only".into(),
                    ))
                }
                StrategyKind::Constant { value } => {
                    let [v] = value.as_slice() else {
                        return Err(Error::dims(format!("constant value of agent {i}"), 1, value.len()));
                    };
                    Box::new(ConstantConsensus::new(graph, i, theta[i], *v))
                }
                _ => {
                    let acted = kind.acted_type(&truth, i, seed)?.expect("type-based strategy");
                    let t = acted.theta()[0];
                    match algorithm {
                        ConsensusAlgorithm::Dual => Box::new(DualConsensusFollower::new(graph, i, t, gamma)),
                        ConsensusAlgorithm::Linear => Box::new(LinearConsensusFollower::new(graph, i, t)),
                    }
                }
            })
        })
        .collect()
}
