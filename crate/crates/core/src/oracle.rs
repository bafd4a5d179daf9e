//! Centralized ground truth: the social optimum from the KKT system and exact
//! Groves / VCG payments for the direct mechanism.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentType, AllocationProblem, SocialChoice, Society};

/// Primal-dual solution of the allocation problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SocialOptimum {
    pub x: Vec<f64>,
    /// Multiplier of `Rx = c` in `L(x, p) = Σ v_i + pᵀ(Rx − c)`.
    pub p: Vec<f64>,
    pub value: f64,
}

impl SocialOptimum {
    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    pub fn p_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p)
    }
}

/// What the society without agent `i` is allowed to choose when computing
/// the VCG baseline `min Σ_{j≠i} v_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VcgBaseline {
    /// Agent `i`'s block stays in `X` as a zero-cost free variable.
    #[default]
    FreeBlock,
    /// Agent `i`'s block is pinned to zero.
    Excluded,
}

/// Tax rule of the direct mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectTax {
    Groves,
    Vcg,
}

fn block_diagonal_curvature(problem: &AllocationProblem) -> DMatrix<f64> {
    let n = problem.dim();
    let mut h = DMatrix::zeros(n, n);
    for (i, cost) in problem.costs().iter().enumerate() {
        let b = problem.coupling().block(i);
        h.view_mut((b.start, b.start), (b.len(), b.len()))
            .copy_from(cost.curvature());
    }
    h
}

fn stacked_linear(problem: &AllocationProblem) -> DVector<f64> {
    let mut lin = DVector::zeros(problem.dim());
    for (i, cost) in problem.costs().iter().enumerate() {
        let b = problem.coupling().block(i);
        lin.rows_mut(b.start, b.len()).copy_from(cost.linear());
    }
    lin
}

fn kkt_system(
    h: &DMatrix<f64>,
    lin: &DVector<f64>,
    r: &DMatrix<f64>,
    c: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = h.nrows();
    let m = r.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((0, n), (n, m)).copy_from(&r.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(r);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-lin));
    rhs.rows_mut(n, m).copy_from(c);
    (k, rhs)
}

/// Minimizer of `Σ v_i` subject to `Rx = c`, via dense LU on the KKT system
/// `[H Rᵀ; R 0]·[x; p] = [−b; c]`.
pub fn solve_social_optimum(problem: &AllocationProblem) -> Result<SocialOptimum> {
    let h = block_diagonal_curvature(problem);
    let lin = stacked_linear(problem);
    let coupling = problem.coupling();
    let (k, rhs) = kkt_system(&h, &lin, coupling.r(), coupling.c());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("KKT matrix of the allocation problem".into()))?;
    let n = problem.dim();
    let x = sol.rows(0, n).into_owned();
    let p = sol.rows(n, coupling.rows()).into_owned();
    let value = problem.social_cost(&x)?;
    Ok(SocialOptimum {
        x: x.as_slice().to_vec(),
        p: p.as_slice().to_vec(),
        value,
    })
}

/// Stationarity and feasibility residual of a primal-dual pair.
pub fn kkt_residual(problem: &AllocationProblem, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let h = block_diagonal_curvature(problem);
    let lin = stacked_linear(problem);
    let r = problem.coupling().r();
    let stationarity = (&h * x + lin + r.transpose() * p).norm();
    stationarity.max(problem.coupling().residual(x))
}

/// `t_i = Σ_{j≠i} v_j(x_j)`.
pub fn exact_groves_tax(problem: &AllocationProblem, x_star: &DVector<f64>) -> Result<Vec<f64>> {
    let costs = problem.agent_costs(x_star)?;
    Ok(others_sum(&costs))
}

/// `Σ_{j≠i} c_j` for every `i`.
pub fn others_sum(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            values
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .sum()
        })
        .collect()
}

/// Minimum social cost of the society without `agent`.
pub fn reduced_optimum(
    problem: &AllocationProblem,
    agent: usize,
    baseline: VcgBaseline,
) -> Result<f64> {
    let coupling = problem.coupling();
    let removed = coupling.block(agent);
    let mut h = block_diagonal_curvature(problem);
    let mut lin = stacked_linear(problem);
    let mut r = coupling.r().clone();

    match baseline {
        VcgBaseline::FreeBlock => {
            h.view_mut((removed.start, removed.start), (removed.len(), removed.len()))
                .fill(0.0);
            lin.rows_mut(removed.start, removed.len()).fill(0.0);
        }
        VcgBaseline::Excluded => {
            h = h
                .remove_rows(removed.start, removed.len())
                .remove_columns(removed.start, removed.len());
            lin = lin.remove_rows(removed.start, removed.len());
            r = r.remove_columns(removed.start, removed.len());
        }
    }

    let (k, rhs) = kkt_system(&h, &lin, &r, coupling.c());
    let scale = k.amax().max(rhs.amax()).max(1.0);
    let sol = k
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12 * scale)
        .map_err(|e| Error::ReducedProblem {
            agent,
            reason: e.to_string(),
        })?;
    let residual = (&k * &sol - &rhs).amax();
    if residual > 1e-8 * scale {
        return Err(Error::ReducedProblem {
            agent,
            reason: format!("infeasible (KKT residual {residual:e})"),
        });
    }

    let mut total = 0.0;
    let mut offset = 0;
    for (j, cost) in problem.costs().iter().enumerate() {
        let d = cost.dim();
        if j == agent {
            if baseline == VcgBaseline::FreeBlock {
                offset += d;
            }
            continue;
        }
        total += cost.evaluate(&sol.rows(offset, d).into_owned())?;
        offset += d;
    }
    Ok(total)
}

/// `t_i = Σ_{j≠i} v_j(x*) − min_{x∈X} Σ_{j≠i} v_j(x)`.
pub fn exact_vcg_tax(problem: &AllocationProblem, baseline: VcgBaseline) -> Result<Vec<f64>> {
    let optimum = solve_social_optimum(problem)?;
    let groves = exact_groves_tax(problem, &optimum.x_vector())?;
    groves
        .iter()
        .enumerate()
        .map(|(i, g)| Ok(g - reduced_optimum(problem, i, baseline)?))
        .collect()
}

/// The direct mechanism: optimum for the reported types and exact taxes on it.
pub fn run_direct_mechanism(
    society: &Society,
    reports: &[AgentType],
    tax: DirectTax,
    baseline: VcgBaseline,
) -> Result<SocialChoice> {
    let reported = society.instantiate(reports)?;
    let optimum = solve_social_optimum(&reported)?;
    let t = match tax {
        DirectTax::Groves => exact_groves_tax(&reported, &optimum.x_vector())?,
        DirectTax::Vcg => exact_vcg_tax(&reported, baseline)?,
    };
    Ok(SocialChoice::new(optimum.x, t))
}
