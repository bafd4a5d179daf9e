//! Average consensus on trees: the edge-dual mechanism and the linear
//! averaging mechanism, both stopping once `‖Rx‖₂ ≤ 1/n` and charging
//! `t_i = Σ_{j≠i} v_j` on the reported costs.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::{connected_components, is_cyclic_undirected};
use petgraph::graph::UnGraph;
use serde::Serialize;

use crate::dd::MechanismOutcome;
use crate::error::{Error, Result};
use crate::model::{AgentModel, AgentType, SocialChoice, Society};
use crate::oracle::others_sum;
use crate::protocol::{
    run_rounds, BroadcastPayload, EdgeDual, FollowerReport, Leader, LeaderBroadcast, NeighborMessage,
    ReportPayload, RunConfig, Strategy, StrategyError, Topology, Transcript,
};

/// Undirected communication tree with edges oriented from the lower to the
/// higher vertex index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommGraph {
    vertices: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn tree(vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if vertices == 0 {
            return Err(Error::NotATree("no vertices".into()));
        }
        let mut oriented = Vec::with_capacity(edges.len());
        let mut g = UnGraph::<(), ()>::with_capacity(vertices, edges.len());
        let nodes: Vec<_> = (0..vertices).map(|_| g.add_node(())).collect();
        for &(a, b) in edges {
            if a >= vertices || b >= vertices {
                return Err(Error::NotATree(format!("edge ({a}, {b}) names a missing vertex")));
            }
            if a == b {
                return Err(Error::NotATree(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if oriented.contains(&e) {
                return Err(Error::NotATree(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            oriented.push(e);
            g.add_edge(nodes[a], nodes[b], ());
        }
        if is_cyclic_undirected(&g) {
            return Err(Error::NotATree("graph has a cycle".into()));
        }
        let components = connected_components(&g);
        if components != 1 {
            return Err(Error::NotATree(format!("graph has {components} components")));
        }
        debug_assert_eq!(oriented.len(), vertices - 1);

        let mut neighbors = vec![Vec::new(); vertices];
        for &(a, b) in &oriented {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Ok(CommGraph {
            vertices,
            edges: oriented,
            neighbors,
        })
    }

    pub fn path(vertices: usize) -> Result<Self> {
        let edges: Vec<_> = (1..vertices).map(|i| (i - 1, i)).collect();
        Self::tree(vertices, &edges)
    }

    pub fn star(vertices: usize, center: usize) -> Result<Self> {
        let edges: Vec<_> = (0..vertices).filter(|&v| v != center).map(|v| (center, v)).collect();
        Self::tree(vertices, &edges)
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Vertex-by-edge matrix `B` with `+1` where the edge leaves the vertex.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.vertices, self.edges.len());
        for (l, &(i, j)) in self.edges.iter().enumerate() {
            b[(i, l)] = 1.0;
            b[(j, l)] = -1.0;
        }
        b
    }

    /// `R = Bᵀ`; row `l` reads `x_i − x_j` for edge `l = (i, j)`.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        self.incidence_matrix().transpose()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.vertices, self.vertices);
        for &(i, j) in &self.edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }

    pub fn topology(&self) -> Topology {
        Topology::from_neighbors(self.neighbors.clone()).expect("tree adjacency is symmetric")
    }

    /// The consensus problem `min Σ (x_i − θ_i)²` s.t. `Rx = 0` as a society.
    pub fn society(&self) -> Result<Society> {
        let models = vec![AgentModel::consensus(); self.vertices];
        Society::new(models, self.constraint_matrix(), DVector::zeros(self.edges.len()))
    }

    /// Per edge incident to `v`: (edge index, other endpoint, whether `v` is the tail).
    fn incident(&self, v: usize) -> Vec<Incident> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(l, &(i, j))| {
                if i == v {
                    Some(Incident { edge: l, other: j, owned: true })
                } else if j == v {
                    Some(Incident { edge: l, other: i, owned: false })
                } else {
                    None
                }
            })
            .collect()
    }
}

/// `‖Rx‖₂` for the graph's constraint matrix.
pub fn disagreement(graph: &CommGraph, x: &[f64]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| (x[i] - x[j]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// The exact target: the average on every vertex and `t_i = Σ_{j≠i} (x_j − θ_j)²`.
pub fn consensus_social_choice(theta: &[f64]) -> SocialChoice {
    let n = theta.len();
    let mean = theta.iter().sum::<f64>() / n as f64;
    let costs: Vec<f64> = theta.iter().map(|t| (mean - t).powi(2)).collect();
    SocialChoice::new(vec![mean; n], others_sum(&costs))
}

/// `1/λ_max(RRᵀ)`.
pub fn default_dual_step(graph: &CommGraph) -> f64 {
    if graph.edges().is_empty() {
        return 1.0;
    }
    let r = graph.constraint_matrix();
    1.0 / (&r * r.transpose()).symmetric_eigenvalues().max()
}

/// `1/(2·d_max)`.
pub fn default_averaging_step(graph: &CommGraph) -> f64 {
    match graph.max_degree() {
        0 => 0.5,
        d => 1.0 / (2.0 * d as f64),
    }
}

/// Spectral radius of `I − αRᵀR` on the complement of the consensus direction.
pub fn linear_contraction_factor(graph: &CommGraph, alpha: f64) -> f64 {
    let eig = graph.laplacian().symmetric_eigenvalues();
    let tol = 1e-10 * eig.amax().max(1.0);
    eig.iter()
        .filter(|&&l| l > tol)
        .map(|l| (1.0 - alpha * l).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug)]
struct Incident {
    edge: usize,
    other: usize,
    owned: bool,
}

fn neighbor_report<'m>(
    neighbors: &[NeighborMessage<'m>],
    from: usize,
) -> Result<(f64, &'m [EdgeDual]), StrategyError> {
    let msg = neighbors
        .iter()
        .find(|m| m.from == from)
        .ok_or_else(|| StrategyError(format!("no message from neighbor {from}")))?;
    match msg.payload {
        ReportPayload::Consensus { x, duals, .. } => Ok((*x, duals.as_slice())),
        _ => Err(StrategyError(format!("neighbor {from} sent a non-consensus report"))),
    }
}

/// The suggested follower of the edge-dual mechanism.
///
/// `x_i = θ_i − ½ Σ_l R_{l i} p_l`. The tail of each edge owns its dual and
/// updates `p_l += γ(x_i − x_j)` from the previous round's estimates; the head
/// reads the owner's value one round later.
#[derive(Clone, Debug)]
pub struct DualConsensusFollower {
    theta: f64,
    gamma: f64,
    incident: Vec<Incident>,
    duals: Vec<f64>,
    x: f64,
}

impl DualConsensusFollower {
    pub fn new(graph: &CommGraph, agent: usize, theta: f64, gamma: f64) -> Self {
        let incident = graph.incident(agent);
        DualConsensusFollower {
            theta,
            gamma,
            duals: vec![0.0; incident.len()],
            incident,
            x: theta,
        }
    }

    fn owned_duals(&self) -> Vec<EdgeDual> {
        self.incident
            .iter()
            .zip(&self.duals)
            .filter(|(inc, _)| inc.owned)
            .map(|(inc, &p)| EdgeDual { edge: inc.edge, p })
            .collect()
    }
}

impl Strategy for DualConsensusFollower {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        self.x = self.theta;
        self.duals.iter_mut().for_each(|p| *p = 0.0);
        Ok(self.emit_report())
    }

    fn update_state(
        &mut self,
        broadcast: &LeaderBroadcast,
        neighbors: &[NeighborMessage<'_>],
    ) -> Result<(), StrategyError> {
        if let BroadcastPayload::EdgeDuals { p } = &broadcast.payload {
            for (inc, dual) in self.incident.iter().zip(self.duals.iter_mut()) {
                *dual = *p
                    .get(inc.edge)
                    .ok_or_else(|| StrategyError(format!("broadcast lacks dual of edge {}", inc.edge)))?;
            }
        }
        for (inc, dual) in self.incident.iter().zip(self.duals.iter_mut()) {
            let (x_other, their_duals) = neighbor_report(neighbors, inc.other)?;
            if inc.owned {
                *dual += self.gamma * (self.x - x_other);
            } else {
                *dual = their_duals
                    .iter()
                    .find(|d| d.edge == inc.edge)
                    .map(|d| d.p)
                    .ok_or_else(|| StrategyError(format!("owner of edge {} sent no dual", inc.edge)))?;
            }
        }
        let price: f64 = self
            .incident
            .iter()
            .zip(&self.duals)
            .map(|(inc, p)| if inc.owned { *p } else { -p })
            .sum();
        self.x = self.theta - 0.5 * price;
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        ReportPayload::Consensus {
            x: self.x,
            v: (self.x - self.theta).powi(2),
            duals: self.owned_duals(),
        }
    }
}

/// The suggested follower of the linear averaging mechanism:
/// `z_i(τ) = z_i(τ−1) + α Σ_{j∈N_i} (z_j(τ−1) − z_i(τ−1))`, `z_i(0) = θ_i`.
#[derive(Clone, Debug)]
pub struct LinearConsensusFollower {
    theta: f64,
    neighbors: Vec<usize>,
    alpha: Option<f64>,
    z: f64,
}

impl LinearConsensusFollower {
    pub fn new(graph: &CommGraph, agent: usize, theta: f64) -> Self {
        LinearConsensusFollower {
            theta,
            neighbors: graph.neighbors(agent).to_vec(),
            alpha: None,
            z: theta,
        }
    }
}

impl Strategy for LinearConsensusFollower {
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
        self.z = self.theta;
        Ok(self.emit_report())
    }

    fn update_state(
        &mut self,
        broadcast: &LeaderBroadcast,
        neighbors: &[NeighborMessage<'_>],
    ) -> Result<(), StrategyError> {
        if let BroadcastPayload::StepSize { alpha } = broadcast.payload {
            self.alpha = Some(alpha);
        }
        let alpha = self
            .alpha
            .ok_or_else(|| StrategyError("no averaging step received".into()))?;
        let mut pull = 0.0;
        for &j in &self.neighbors {
            pull += neighbor_report(neighbors, j)?.0 - self.z;
        }
        self.z += alpha * pull;
        Ok(())
    }

    fn emit_report(&self) -> ReportPayload {
        ReportPayload::Consensus {
            x: self.z,
            v: (self.z - self.theta).powi(2),
            duals: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsensusRecord {
    pub round: usize,
    pub disagreement: f64,
    /// `Σ (v_i + (Rᵀp)_i x_i)` from the reported duals; diagnostic only.
    pub dual_value: Option<f64>,
}

/// Leader shared by both consensus mechanisms.
pub struct ConsensusLeader {
    graph: CommGraph,
    n: u64,
    initial: BroadcastPayload,
    x: Vec<f64>,
    v: Vec<f64>,
    round: usize,
    history: Vec<ConsensusRecord>,
}

impl ConsensusLeader {
    fn new(graph: CommGraph, n: u64, initial: BroadcastPayload) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("accuracy parameter n must be >= 1".into()));
        }
        let vertices = graph.vertices();
        Ok(ConsensusLeader {
            graph,
            n,
            initial,
            x: vec![0.0; vertices],
            v: vec![0.0; vertices],
            round: 0,
            history: Vec::new(),
        })
    }

    pub fn converged(&self) -> bool {
        self.round >= 1 && self.history.last().is_some_and(|h| h.disagreement <= 1.0 / self.n as f64)
    }

    pub fn history(&self) -> &[ConsensusRecord] {
        &self.history
    }
}

impl Leader for ConsensusLeader {
    fn initialize(&mut self) -> BroadcastPayload {
        self.initial.clone()
    }

    fn update(&mut self, round: usize, reports: &[FollowerReport]) -> Result<BroadcastPayload> {
        let mut p = vec![0.0; self.graph.edges().len()];
        let mut have_duals = false;
        for rep in reports {
            let ReportPayload::Consensus { x, v, duals } = &rep.payload else {
                return Err(Error::MalformedReport {
                    agent: rep.agent,
                    round,
                    reason: "expected a consensus report".into(),
                });
            };
            self.x[rep.agent] = *x;
            self.v[rep.agent] = *v;
            for d in duals {
                if let Some(slot) = p.get_mut(d.edge) {
                    *slot = d.p;
                    have_duals = true;
                }
            }
        }
        self.round = round;
        let dual_value = have_duals.then(|| {
            let mut q = vec![0.0; self.graph.vertices()];
            for (l, &(i, j)) in self.graph.edges().iter().enumerate() {
                q[i] += p[l];
                q[j] -= p[l];
            }
            (0..q.len()).map(|i| self.v[i] + q[i] * self.x[i]).sum()
        });
        self.history.push(ConsensusRecord {
            round,
            disagreement: disagreement(&self.graph, &self.x),
            dual_value,
        });
        Ok(BroadcastPayload::Idle)
    }

    fn outcome(&self) -> SocialChoice {
        SocialChoice::new(self.x.clone(), others_sum(&self.v))
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusRun {
    pub outcome: MechanismOutcome,
    pub transcript: Transcript,
    pub history: Vec<ConsensusRecord>,
}

fn run(graph: &CommGraph, followers: &mut [Box<dyn Strategy>], n: u64, initial: BroadcastPayload, run: &RunConfig) -> Result<ConsensusRun> {
    if followers.len() != graph.vertices() {
        return Err(Error::dims("followers", graph.vertices(), followers.len()));
    }
    let mut leader = ConsensusLeader::new(graph.clone(), n, initial)?;
    let transcript = run_rounds(&mut leader, followers, &graph.topology(), ConsensusLeader::converged, run)?;
    Ok(ConsensusRun {
        outcome: MechanismOutcome {
            choice: leader.outcome(),
            rounds: transcript.last_round(),
        },
        transcript,
        history: leader.history,
    })
}

/// Edge-dual mechanism.
pub fn run_consensus_dd(
    graph: &CommGraph,
    followers: &mut [Box<dyn Strategy>],
    n: u64,
    gamma: f64,
    config: &RunConfig,
) -> Result<ConsensusRun> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {gamma}")));
    }
    let initial = BroadcastPayload::EdgeDuals {
        p: vec![0.0; graph.edges().len()],
    };
    run(graph, followers, n, initial, config)
}

/// Checks `α ∈ (0, 1/d_max)` and the contraction of the averaging map.
pub fn validate_averaging_step(graph: &CommGraph, alpha: f64) -> Result<()> {
    let d = graph.max_degree();
    let upper = if d == 0 { f64::INFINITY } else { 1.0 / d as f64 };
    if !(alpha > 0.0 && alpha < upper) {
        return Err(Error::Config(format!("averaging step {alpha} outside (0, {upper})")));
    }
    let rho = linear_contraction_factor(graph, alpha);
    if rho >= 1.0 {
        return Err(Error::Config(format!("averaging map does not contract (factor {rho})")));
    }
    Ok(())
}

/// Linear averaging mechanism.
pub fn run_consensus_linear(
    graph: &CommGraph,
    followers: &mut [Box<dyn Strategy>],
    n: u64,
    alpha: Option<f64>,
    config: &RunConfig,
) -> Result<ConsensusRun> {
    let alpha = alpha.unwrap_or_else(|| default_averaging_step(graph));
    validate_averaging_step(graph, alpha)?;
    run(graph, followers, n, BroadcastPayload::StepSize { alpha }, config)
}

pub fn honest_followers_dd(graph: &CommGraph, theta: &[f64], gamma: f64) -> Vec<Box<dyn Strategy>> {
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| Box::new(DualConsensusFollower::new(graph, i, t, gamma)) as Box<dyn Strategy>)
        .collect()
}

pub fn honest_followers_linear(graph: &CommGraph, theta: &[f64]) -> Vec<Box<dyn Strategy>> {
    theta
        .iter()
        .enumerate()
        .map(|(i, &t)| Box::new(LinearConsensusFollower::new(graph, i, t)) as Box<dyn Strategy>)
        .collect()
}

/// Types of a scalar consensus profile.
pub fn scalar_types(theta: &[f64]) -> Result<Vec<AgentType>> {
    theta.iter().map(|&t| AgentType::scalar(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn incidence_examples() {
        let g = CommGraph::path(2).unwrap();
        assert_eq!(g.incidence_matrix(), dmatrix![1.0; -1.0]);
        assert_eq!(g.constraint_matrix(), dmatrix![1.0, -1.0]);
        let g = CommGraph::path(3).unwrap();
        assert_eq!(g.constraint_matrix(), dmatrix![1.0, -1.0, 0.0; 0.0, 1.0, -1.0]);
    }

    #[test]
    fn orientation_is_low_to_high() {
        let g = CommGraph::tree(3, &[(2, 0), (1, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 2), (0, 1)]);
        let b = g.incidence_matrix();
        for l in 0..2 {
            let col = b.column(l);
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&v| v == -1.0).count(), 1);
        }
    }

    #[test]
    fn non_trees_are_rejected() {
        assert!(matches!(
            CommGraph::tree(3, &[(0, 1), (1, 2), (2, 0)]),
            Err(Error::NotATree(_))
        ));
        assert!(matches!(CommGraph::tree(4, &[(0, 1), (2, 3)]), Err(Error::NotATree(_))));
        assert!(matches!(CommGraph::tree(2, &[(0, 0)]), Err(Error::NotATree(_))));
        assert!(matches!(CommGraph::tree(2, &[(0, 5)]), Err(Error::NotATree(_))));
        assert!(matches!(CommGraph::tree(2, &[(0, 1), (1, 0)]), Err(Error::NotATree(_))));
    }

    #[test]
    fn target_examples() {
        let f = consensus_social_choice(&[0.0, 1.0, 2.0]);
        assert_eq!(f.x, vec![1.0; 3]);
        assert_eq!(f.t, vec![1.0, 2.0, 1.0]);
        let f = consensus_social_choice(&[4.0; 3]);
        assert_eq!(f.x, vec![4.0; 3]);
        assert_eq!(f.t, vec![0.0; 3]);
        let f = consensus_social_choice(&[7.5]);
        assert_eq!(f.x, vec![7.5]);
        assert_eq!(f.t, vec![0.0]);
    }

    #[test]
    fn dual_step_on_path() {
        assert_relative_eq!(default_dual_step(&CommGraph::path(3).unwrap()), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_first_step() {
        let g = CommGraph::path(2).unwrap();
        let mut followers = honest_followers_linear(&g, &[0.0, 1.0]);
        let cfg = RunConfig { round_cap: 1, ..RunConfig::default() };
        let Err(Error::NonConvergence { transcript, .. }) =
            run_consensus_linear(&g, &mut followers, 1_000_000, Some(0.4), &cfg)
        else {
            panic!("one round cannot reach 1e-6");
        };
        let z: Vec<f64> = transcript.rounds[1]
            .reports
            .iter()
            .map(|r| match r.payload {
                ReportPayload::Consensus { x, .. } => x,
                _ => unreachable!(),
            })
            .collect();
        assert_relative_eq!(z[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(z[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn averaging_step_range() {
        let g = CommGraph::star(4, 0).unwrap();
        assert!(validate_averaging_step(&g, 1.0 / 3.0).is_err());
        assert!(validate_averaging_step(&g, 0.0).is_err());
        assert!(validate_averaging_step(&g, 0.3).is_ok());
        let mut f = honest_followers_linear(&g, &[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            run_consensus_linear(&g, &mut f, 10, Some(0.5), &RunConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn equal_types_stop_after_one_round() {
        let g = CommGraph::path(3).unwrap();
        let theta = [2.0; 3];
        let mut f = honest_followers_dd(&g, &theta, default_dual_step(&g));
        let run = run_consensus_dd(&g, &mut f, 1000, default_dual_step(&g), &RunConfig::default()).unwrap();
        assert_eq!(run.outcome.rounds, 1);
        assert_eq!(run.outcome.choice.t, vec![0.0; 3]);
        assert_eq!(run.history[0].disagreement, 0.0);
    }

    #[test]
    fn dual_mechanism_two_agents() {
        let g = CommGraph::path(2).unwrap();
        let gamma = default_dual_step(&g);
        let mut f = honest_followers_dd(&g, &[0.0, 1.0], gamma);
        let run = run_consensus_dd(&g, &mut f, 1_000_000, gamma, &RunConfig::default()).unwrap();
        let c = run.outcome.choice;
        assert_relative_eq!(c.x[0], 0.5, epsilon = 1e-5);
        assert_relative_eq!(c.x[1], 0.5, epsilon = 1e-5);
        assert_relative_eq!(c.t[0], 0.25, epsilon = 1e-5);
    }

    #[test]
    fn dual_mechanism_star() {
        let g = CommGraph::star(4, 0).unwrap();
        let gamma = default_dual_step(&g);
        let mut f = honest_followers_dd(&g, &[0.0, 2.0, 2.0, 2.0], gamma);
        let run = run_consensus_dd(&g, &mut f, 100_000, gamma, &RunConfig::default()).unwrap();
        for x in &run.outcome.choice.x {
            assert_relative_eq!(*x, 1.5, epsilon = 1e-4);
        }
    }

    #[test]
    fn linear_mechanism_preserves_sum_and_converges() {
        let g = CommGraph::path(3).unwrap();
        let theta = [0.0, 1.0, 2.0];
        let mut f = honest_followers_linear(&g, &theta);
        let run = run_consensus_linear(&g, &mut f, 100_000, None, &RunConfig::default()).unwrap();
        for round in &run.transcript.rounds {
            let s: f64 = round
                .reports
                .iter()
                .map(|r| match r.payload {
                    ReportPayload::Consensus { x, .. } => x,
                    _ => unreachable!(),
                })
                .sum();
            assert_relative_eq!(s, 3.0, epsilon = 1e-12);
        }
        let target = consensus_social_choice(&theta);
        assert!(run.outcome.choice.distance(&target) < 1e-4);
    }

    #[test]
    fn single_vertex_consensus() {
        let g = CommGraph::path(1).unwrap();
        let mut f = honest_followers_linear(&g, &[3.0]);
        let run = run_consensus_linear(&g, &mut f, 10, None, &RunConfig::default()).unwrap();
        assert_eq!(run.outcome.choice, SocialChoice::new(vec![3.0], vec![0.0]));
    }
}
