//! Problem data shared by the allocation and consensus settings.
//!
//! Every agent cost is a strictly convex quadratic
//! `v(x) = ½ xᵀA x + bᵀx + c0`. Types enter through [`AgentModel`], which
//! declares how a type vector `θ` picks the quadratic:
//! `v(x; θ) = ½ (x − θ)ᵀA (x − θ) + offset`. The consensus cost `(x − θ)²`
//! is the scalar case `A = 2`, `offset = 0`.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue of a curvature matrix.
pub const MIN_CURVATURE: f64 = 1e-8;

/// Relative tolerance for the rank test on the coupling matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// The private parameter of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    theta: Vec<f64>,
}

impl AgentType {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Config("agent type must have dimension >= 1".into()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("agent type".into()));
        }
        Ok(AgentType { theta })
    }

    pub fn scalar(theta: f64) -> Result<Self> {
        Self::new(vec![theta])
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Evaluate/argmin interface used by followers.
pub trait CostFunction {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> Result<f64>;

    /// Unique minimizer of `v(x) + qᵀx`.
    fn argmin_augmented(&self, q: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Clone, Debug)]
pub struct QuadraticCost {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c0: f64,
    a_chol: Cholesky<f64, Dyn>,
    min_curvature: f64,
}

impl QuadraticCost {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c0: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("curvature columns", a.nrows(), a.ncols()));
        }
        if a.nrows() == 0 {
            return Err(Error::Config("cost dimension must be >= 1".into()));
        }
        if b.len() != a.nrows() {
            return Err(Error::dims("linear term", a.nrows(), b.len()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !c0.is_finite() {
            return Err(Error::NonFinite("quadratic cost".into()));
        }
        let asymmetry = (&a - a.transpose()).amax();
        if asymmetry > SYMMETRY_TOLERANCE * a.amax().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry });
        }
        let min_curvature = a.clone().symmetric_eigenvalues().min();
        if min_curvature < MIN_CURVATURE {
            return Err(Error::NotStrictlyConvex {
                min_eigenvalue: min_curvature,
                floor: MIN_CURVATURE,
            });
        }
        let a_chol = Cholesky::new(a.clone()).ok_or(Error::NotStrictlyConvex {
            min_eigenvalue: min_curvature,
            floor: MIN_CURVATURE,
        })?;
        Ok(QuadraticCost {
            a,
            b,
            c0,
            a_chol,
            min_curvature,
        })
    }

    /// `½ (x − θ)ᵀA (x − θ) + offset`.
    pub fn tracking(a: DMatrix<f64>, theta: &[f64], offset: f64) -> Result<Self> {
        if theta.len() != a.nrows() {
            return Err(Error::dims("type", a.nrows(), theta.len()));
        }
        let theta = DVector::from_column_slice(theta);
        let a_theta = &a * &theta;
        let c0 = 0.5 * theta.dot(&a_theta) + offset;
        Self::new(a, -a_theta, c0)
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.c0
    }

    pub fn min_curvature(&self) -> f64 {
        self.min_curvature
    }

    pub fn inverse_curvature(&self) -> DMatrix<f64> {
        self.a_chol.inverse()
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dims("cost argument", self.dim(), x.len()));
        }
        Ok(0.5 * x.dot(&(&self.a * x)) + self.b.dot(x) + self.c0)
    }

    pub fn evaluate_slice(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(&DVector::from_column_slice(x))
    }

    /// `−A⁻¹(b + q)`.
    pub fn argmin_augmented(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.len() != self.dim() {
            return Err(Error::dims("price term", self.dim(), q.len()));
        }
        Ok(-self.a_chol.solve(&(&self.b + q)))
    }

    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        -self.a_chol.solve(&self.b)
    }

    pub fn minimum(&self) -> f64 {
        let z = self.unconstrained_minimizer();
        0.5 * self.b.dot(&z) + self.c0
    }
}

impl CostFunction for QuadraticCost {
    fn dim(&self) -> usize {
        QuadraticCost::dim(self)
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<f64> {
        QuadraticCost::evaluate(self, x)
    }

    fn argmin_augmented(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        QuadraticCost::argmin_augmented(self, q)
    }
}

/// How an agent's type determines its cost.
#[derive(Clone, Debug)]
pub struct AgentModel {
    curvature: DMatrix<f64>,
    offset: f64,
}

impl AgentModel {
    pub fn new(curvature: DMatrix<f64>, offset: f64) -> Result<Self> {
        // validates symmetry and convexity once
        QuadraticCost::new(curvature.clone(), DVector::zeros(curvature.nrows()), 0.0)?;
        if !offset.is_finite() {
            return Err(Error::NonFinite("cost offset".into()));
        }
        Ok(AgentModel { curvature, offset })
    }

    /// The consensus cost `(x − θ)²`.
    pub fn consensus() -> Self {
        AgentModel {
            curvature: DMatrix::from_element(1, 1, 2.0),
            offset: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.curvature.nrows()
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn cost(&self, ty: &AgentType) -> Result<QuadraticCost> {
        QuadraticCost::tracking(self.curvature.clone(), ty.theta(), self.offset)
    }
}

/// Public coupling data `Rx = c` with the column partition `R = [R_1 … R_N]`.
#[derive(Clone, Debug)]
pub struct Coupling {
    r: DMatrix<f64>,
    c: DVector<f64>,
    blocks: Vec<Range<usize>>,
    gram: Cholesky<f64, Dyn>,
}

impl Coupling {
    pub fn new(r: DMatrix<f64>, c: DVector<f64>, block_dims: &[usize]) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(Error::Config("at least one agent is required".into()));
        }
        if c.len() != r.nrows() {
            return Err(Error::dims("constraint target", r.nrows(), c.len()));
        }
        let total: usize = block_dims.iter().sum();
        if total != r.ncols() {
            return Err(Error::dims("coupling columns", total, r.ncols()));
        }
        if r.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coupling".into()));
        }
        let rank = numerical_rank(&r);
        if rank < r.nrows() {
            return Err(Error::RankDeficient {
                rank,
                rows: r.nrows(),
            });
        }
        let gram = Cholesky::new(&r * r.transpose()).ok_or(Error::RankDeficient {
            rank,
            rows: r.nrows(),
        })?;
        let mut blocks = Vec::with_capacity(block_dims.len());
        let mut start = 0;
        for &d in block_dims {
            blocks.push(start..start + d);
            start += d;
        }
        Ok(Coupling { r, c, blocks, gram })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn rows(&self) -> usize {
        self.r.nrows()
    }

    pub fn dim(&self) -> usize {
        self.r.ncols()
    }

    pub fn agents(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, agent: usize) -> Range<usize> {
        self.blocks[agent].clone()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// The column block `R_i`.
    pub fn r_block(&self, agent: usize) -> DMatrix<f64> {
        let b = self.block(agent);
        self.r.columns(b.start, b.len()).into_owned()
    }

    /// `‖Rx − c‖₂`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.r * x - &self.c).norm()
    }

    /// Solves `RRᵀ y = e`.
    pub(crate) fn solve_gram(&self, e: &DVector<f64>) -> DVector<f64> {
        self.gram.solve(e)
    }
}

/// Rank from singular values with tolerance `RANK_TOLERANCE · ‖R‖₂`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let tol = RANK_TOLERANCE * sv.max();
    sv.iter().filter(|&&s| s > tol).count()
}

/// A cost allocation problem: minimize `Σ v_i(x_i)` subject to `Rx = c`.
#[derive(Clone, Debug)]
pub struct AllocationProblem {
    costs: Vec<QuadraticCost>,
    coupling: Coupling,
}

impl AllocationProblem {
    pub fn new(costs: Vec<QuadraticCost>, coupling: Coupling) -> Result<Self> {
        if costs.len() != coupling.agents() {
            return Err(Error::dims("agent count", coupling.agents(), costs.len()));
        }
        for (i, cost) in costs.iter().enumerate() {
            let b = coupling.block(i);
            if cost.dim() != b.len() {
                return Err(Error::dims(format!("block of agent {i}"), b.len(), cost.dim()));
            }
        }
        Ok(AllocationProblem { costs, coupling })
    }

    /// Builds `R` column-wise from the cost dimensions.
    pub fn from_parts(costs: Vec<QuadraticCost>, r: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let dims: Vec<usize> = costs.iter().map(QuadraticCost::dim).collect();
        let coupling = Coupling::new(r, c, &dims)?;
        Self::new(costs, coupling)
    }

    pub fn costs(&self) -> &[QuadraticCost] {
        &self.costs
    }

    pub fn cost(&self, agent: usize) -> &QuadraticCost {
        &self.costs[agent]
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn agents(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.coupling.dim()
    }

    pub fn block_of<'a>(&self, x: &'a DVector<f64>, agent: usize) -> nalgebra::DVectorView<'a, f64> {
        let b = self.coupling.block(agent);
        x.rows(b.start, b.len())
    }

    /// Per-agent costs at a stacked decision vector.
    pub fn agent_costs(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dims("decision vector", self.dim(), x.len()));
        }
        self.costs
            .iter()
            .enumerate()
            .map(|(i, cost)| cost.evaluate(&self.block_of(x, i).into_owned()))
            .collect()
    }

    pub fn social_cost(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.agent_costs(x)?.iter().sum())
    }

    /// Smallest curvature eigenvalue over all agents.
    pub fn min_curvature(&self) -> f64 {
        self.costs
            .iter()
            .map(QuadraticCost::min_curvature)
            .fold(f64::INFINITY, f64::min)
    }

    /// Stacked unconstrained minimizers.
    pub fn unconstrained_minimizers(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for (i, cost) in self.costs.iter().enumerate() {
            let b = self.coupling.block(i);
            x.rows_mut(b.start, b.len())
                .copy_from(&cost.unconstrained_minimizer());
        }
        x
    }

    /// Same coupling with different costs (e.g. reported instead of true).
    pub fn with_costs(&self, costs: Vec<QuadraticCost>) -> Result<Self> {
        Self::new(costs, self.coupling.clone())
    }
}

/// Public knowledge of the society: the type-to-cost map of every agent and the coupling.
#[derive(Clone, Debug)]
pub struct Society {
    models: Vec<AgentModel>,
    coupling: Coupling,
}

impl Society {
    pub fn new(models: Vec<AgentModel>, r: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let dims: Vec<usize> = models.iter().map(AgentModel::dim).collect();
        let coupling = Coupling::new(r, c, &dims)?;
        Ok(Society { models, coupling })
    }

    pub fn models(&self) -> &[AgentModel] {
        &self.models
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn agents(&self) -> usize {
        self.models.len()
    }

    /// The allocation problem for a type profile (true or reported).
    pub fn instantiate(&self, types: &[AgentType]) -> Result<AllocationProblem> {
        if types.len() != self.models.len() {
            return Err(Error::dims("type profile", self.models.len(), types.len()));
        }
        let costs = self
            .models
            .iter()
            .zip(types)
            .map(|(m, t)| m.cost(t))
            .collect::<Result<Vec<_>>>()?;
        AllocationProblem::new(costs, self.coupling.clone())
    }
}

/// A social decision together with a tax per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialChoice {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
}

impl SocialChoice {
    pub fn new(x: Vec<f64>, t: Vec<f64>) -> Self {
        SocialChoice { x, t }
    }

    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    /// Max-norm distance over the concatenated `(x, t)`.
    pub fn distance(&self, other: &SocialChoice) -> f64 {
        debug_assert_eq!(self.x.len(), other.x.len());
        debug_assert_eq!(self.t.len(), other.t.len());
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.t.iter().zip(&other.t))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
