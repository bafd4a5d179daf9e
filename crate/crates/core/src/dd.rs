//! Dual-decomposition mechanism with duality-gap termination.
//!
//! The leader keeps a price `p`, broadcasts `(p, x)` where `x` is the nearest
//! feasible point to the last proposals, and stops once the reported upper
//! and lower bounds on the optimal value are within `1/n`. The lower bound is
//! the dual function `g(p) = Σ inf_{x_i}(v_i + pᵀR_i x_i) − pᵀc`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AllocationProblem, Coupling, SocialChoice};
use crate::oracle::others_sum;
use crate::protocol::{
    run_rounds, BroadcastPayload, FollowerReport, Leader, ReportPayload, RunConfig, Strategy, Topology,
    Transcript,
};

/// Feasibility tolerance for points handed to [`upper_bound`].
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DdTax {
    /// `t_i = Σ_{j≠i} v_j` from the reported costs.
    Groves,
    /// `t_i = pᵀR_i x_i`, the price-taking market charge.
    Price,
}

/// `p + γ(Rx̂ − c)`.
pub fn dual_update(p: &DVector<f64>, x_hat: &DVector<f64>, coupling: &Coupling, gamma: f64) -> DVector<f64> {
    p + (coupling.r() * x_hat - coupling.c()) * gamma
}

/// Euclidean projection onto `{x : Rx = c}`.
pub fn project_feasible(x_hat: &DVector<f64>, coupling: &Coupling) -> DVector<f64> {
    let r = coupling.r();
    let mut x = x_hat - r.transpose() * coupling.solve_gram(&(r * x_hat - coupling.c()));
    // one refinement pass
    let e = r * &x - coupling.c();
    x -= r.transpose() * coupling.solve_gram(&e);
    x
}

/// The dual function at `p`.
pub fn lower_bound(p: &DVector<f64>, problem: &AllocationProblem) -> Result<f64> {
    let coupling = problem.coupling();
    let mut total = -p.dot(coupling.c());
    for (i, cost) in problem.costs().iter().enumerate() {
        let q = coupling.r_block(i).transpose() * p;
        let z = cost.argmin_augmented(&q)?;
        total += cost.evaluate(&z)? + q.dot(&z);
    }
    Ok(total)
}

/// Social cost at a feasible point.
pub fn upper_bound(x_feas: &DVector<f64>, problem: &AllocationProblem) -> Result<f64> {
    let coupling = problem.coupling();
    if x_feas.len() != coupling.dim() {
        return Err(Error::dims("feasible point", coupling.dim(), x_feas.len()));
    }
    let residual = coupling.residual(x_feas);
    if residual > FEASIBILITY_TOLERANCE * (1.0 + coupling.c().norm()) {
        return Err(Error::Infeasible { residual });
    }
    problem.social_cost(x_feas)
}

/// `1/λ_max(R·blockdiag(A)⁻¹·Rᵀ)`.
pub fn default_step_size(problem: &AllocationProblem) -> f64 {
    let coupling = problem.coupling();
    let m = coupling.rows();
    let mut curvature = nalgebra::DMatrix::zeros(m, m);
    for (i, cost) in problem.costs().iter().enumerate() {
        let ri = coupling.r_block(i);
        curvature += &ri * cost.inverse_curvature() * ri.transpose();
    }
    1.0 / curvature.symmetric_eigenvalues().max()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRecord {
    pub round: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdLeaderState {
    pub p: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub x_feas: DVector<f64>,
    pub b_lower: f64,
    pub b_upper: f64,
    pub gamma: f64,
    pub n: u64,
    pub k: usize,
}

impl DdLeaderState {
    pub fn gap(&self) -> f64 {
        self.b_upper - self.b_lower
    }

    /// `|b̄ − b̲| ≤ 1/n`. Truthful reports keep the gap non-negative, so a
    /// negative gap only arises from reports that are not best responses.
    pub fn converged(&self) -> bool {
        self.gap().abs() <= 1.0 / self.n as f64
    }
}

/// The point the last bounds refer to, with the price and costs reported there.
#[derive(Clone, Debug)]
struct Decision {
    x: DVector<f64>,
    p: DVector<f64>,
    costs: Vec<f64>,
}

pub struct DdLeader {
    coupling: Coupling,
    tax: DdTax,
    state: DdLeaderState,
    decision: Option<Decision>,
    history: Vec<GapRecord>,
}

impl DdLeader {
    pub fn new(coupling: Coupling, n: u64, gamma: f64, tax: DdTax) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("accuracy parameter n must be >= 1".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {gamma}")));
        }
        let dim = coupling.dim();
        let state = DdLeaderState {
            p: DVector::zeros(coupling.rows()),
            x_hat: DVector::zeros(dim),
            x_feas: DVector::zeros(dim),
            b_lower: f64::NEG_INFINITY,
            b_upper: f64::INFINITY,
            gamma,
            n,
            k: 0,
        };
        Ok(DdLeader {
            coupling,
            tax,
            state,
            decision: None,
            history: Vec::new(),
        })
    }

    pub fn state(&self) -> &DdLeaderState {
        &self.state
    }

    pub fn history(&self) -> &[GapRecord] {
        &self.history
    }

    fn broadcast(&self) -> BroadcastPayload {
        BroadcastPayload::Dual {
            p: self.state.p.as_slice().to_vec(),
            x: self.state.x_feas.as_slice().to_vec(),
        }
    }
}

impl Leader for DdLeader {
    fn initialize(&mut self) -> BroadcastPayload {
        self.state.x_feas = project_feasible(&DVector::zeros(self.coupling.dim()), &self.coupling);
        self.broadcast()
    }

    fn update(&mut self, round: usize, reports: &[FollowerReport]) -> Result<BroadcastPayload> {
        let mut x_hat = DVector::zeros(self.coupling.dim());
        let mut costs = Vec::with_capacity(reports.len());
        let mut proposal_costs = 0.0;
        for rep in reports {
            let ReportPayload::Dual { v, x_hat: xi, v_hat } = &rep.payload else {
                return Err(Error::MalformedReport {
                    agent: rep.agent,
                    round,
                    reason: "expected a dual-decomposition report".into(),
                });
            };
            let block = self.coupling.block(rep.agent);
            if xi.len() != block.len() {
                return Err(Error::MalformedReport {
                    agent: rep.agent,
                    round,
                    reason: format!("proposal has dimension {} instead of {}", xi.len(), block.len()),
                });
            }
            x_hat.rows_mut(block.start, block.len()).copy_from_slice(xi);
            costs.push(*v);
            proposal_costs += v_hat;
        }

        let violation = self.coupling.r() * &x_hat - self.coupling.c();
        let state = &mut self.state;
        state.k = round;
        state.b_upper = costs.iter().sum();
        state.b_lower = proposal_costs + state.p.dot(&violation);
        self.history.push(GapRecord {
            round,
            lower: state.b_lower,
            upper: state.b_upper,
        });
        self.decision = Some(Decision {
            x: state.x_feas.clone(),
            p: state.p.clone(),
            costs,
        });

        state.p += violation * state.gamma;
        state.x_feas = project_feasible(&x_hat, &self.coupling);
        state.x_hat = x_hat;
        Ok(self.broadcast())
    }

    fn outcome(&self) -> SocialChoice {
        let Some(d) = &self.decision else {
            let n = self.coupling.agents();
            return SocialChoice::new(self.state.x_feas.as_slice().to_vec(), vec![0.0; n]);
        };
        let t = match self.tax {
            DdTax::Groves => others_sum(&d.costs),
            DdTax::Price => (0..self.coupling.agents())
                .map(|i| {
                    let b = self.coupling.block(i);
                    let ri = self.coupling.r_block(i);
                    d.p.dot(&(ri * d.x.rows(b.start, b.len())))
                })
                .collect(),
        };
        SocialChoice::new(d.x.as_slice().to_vec(), t)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DdConfig {
    pub n: u64,
    pub gamma: f64,
    pub tax: DdTax,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MechanismOutcome {
    pub choice: SocialChoice,
    /// Number of rounds after initialization.
    pub rounds: usize,
}

#[derive(Clone, Debug)]
pub struct DdRun {
    pub outcome: MechanismOutcome,
    pub transcript: Transcript,
    pub gaps: Vec<GapRecord>,
    pub final_state: DdLeaderState,
}

/// Runs the mechanism until the duality gap is at most `1/n`.
pub fn run_dd_mechanism(coupling: &Coupling, followers: &mut [Box<dyn Strategy>], config: &DdConfig) -> Result<DdRun> {
    if followers.len() != coupling.agents() {
        return Err(Error::dims("followers", coupling.agents(), followers.len()));
    }
    let mut leader = DdLeader::new(coupling.clone(), config.n, config.gamma, config.tax)?;
    let topology = Topology::star(followers.len());
    let transcript = run_rounds(&mut leader, followers, &topology, |l| l.state().converged(), &config.run)?;
    Ok(DdRun {
        outcome: MechanismOutcome {
            choice: leader.outcome(),
            rounds: transcript.last_round(),
        },
        transcript,
        gaps: leader.history,
        final_state: leader.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticCost;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DMatrix};

    fn example_one() -> AllocationProblem {
        let half = || QuadraticCost::tracking(dmatrix![1.0], &[0.0], 0.0).unwrap();
        AllocationProblem::from_parts(vec![half(), half()], dmatrix![1.0, 1.0], DVector::from_element(1, 1.0))
            .unwrap()
    }

    fn consensus_path3() -> AllocationProblem {
        let costs = [0.0, 1.0, 2.0]
            .iter()
            .map(|&t| QuadraticCost::tracking(dmatrix![2.0], &[t], 0.0).unwrap())
            .collect();
        AllocationProblem::from_parts(costs, dmatrix![1.0, -1.0, 0.0; 0.0, 1.0, -1.0], DVector::zeros(2)).unwrap()
    }

    #[test]
    fn dual_update_examples() {
        let p = example_one();
        let out = dual_update(&DVector::zeros(1), &DVector::zeros(2), p.coupling(), 0.1);
        assert_relative_eq!(out[0], -0.1, epsilon = 1e-15);
        let feasible = DVector::from_vec(vec![0.25, 0.75]);
        let p0 = DVector::from_element(1, 0.3);
        assert_eq!(dual_update(&p0, &feasible, p.coupling(), 0.1), p0);
    }

    #[test]
    fn dual_iteration_reaches_example_price() {
        let prob = example_one();
        let gamma = default_step_size(&prob);
        let mut p = DVector::zeros(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2)
                .map(|i| {
                    let q = prob.coupling().r_block(i).transpose() * &p;
                    prob.cost(i).argmin_augmented(&q).unwrap()[0]
                })
                .collect();
            p = dual_update(&p, &DVector::from_vec(x), prob.coupling(), gamma);
        }
        assert_relative_eq!(p[0], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let prob = example_one();
        let x = project_feasible(&DVector::zeros(2), prob.coupling());
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(x[1], 0.5, epsilon = 1e-15);
        let feasible = DVector::from_vec(vec![0.2, 0.8]);
        let again = project_feasible(&feasible, prob.coupling());
        assert_relative_eq!((again - feasible).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bounds_examples() {
        let prob = example_one();
        // closed-form dual g(p) = −p² − p
        for p in [-1.0, -0.5, 0.0, 0.7] {
            assert_relative_eq!(
                lower_bound(&DVector::from_element(1, p), &prob).unwrap(),
                -p * p - p,
                epsilon = 1e-14
            );
        }
        assert_relative_eq!(
            upper_bound(&DVector::from_vec(vec![0.5, 0.5]), &prob).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert_relative_eq!(upper_bound(&DVector::from_vec(vec![1.0, 0.0]), &prob).unwrap(), 0.5);
        assert!(matches!(
            upper_bound(&DVector::from_vec(vec![1.0, 1.0]), &prob),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn lower_bound_at_zero_price_is_sum_of_minima() {
        let prob = consensus_path3();
        assert_relative_eq!(lower_bound(&DVector::zeros(2), &prob).unwrap(), 0.0);
    }

    #[test]
    fn default_step_examples() {
        assert_relative_eq!(default_step_size(&example_one()), 0.5, epsilon = 1e-12);
        assert_relative_eq!(default_step_size(&consensus_path3()), 2.0 / 3.0, epsilon = 1e-12);
        let single = AllocationProblem::from_parts(
            vec![QuadraticCost::tracking(dmatrix![1.0], &[0.0], 0.0).unwrap()],
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(default_step_size(&single), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn leader_rejects_bad_configuration() {
        let c = example_one().coupling().clone();
        assert!(DdLeader::new(c.clone(), 0, 0.5, DdTax::Groves).is_err());
        assert!(DdLeader::new(c, 10, -1.0, DdTax::Groves).is_err());
    }
}
