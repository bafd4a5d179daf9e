//! Seeded random problem generators.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::consensus::CommGraph;
use crate::error::Result;
use crate::model::{numerical_rank, AgentModel, AgentType, AllocationProblem, Society};

/// Uniform random labelled tree on `vertices` vertices built by random attachment.
pub fn random_tree<R: Rng>(rng: &mut R, vertices: usize) -> Result<CommGraph> {
    let mut labels: Vec<usize> = (0..vertices).collect();
    labels.shuffle(rng);
    let edges: Vec<(usize, usize)> = (1..vertices)
        .map(|v| (labels[rng.gen_range(0..v)], labels[v]))
        .collect();
    CommGraph::tree(vertices, &edges)
}

/// Scalar types drawn from `[-bound, bound]`.
pub fn random_scalars<R: Rng>(rng: &mut R, count: usize, bound: f64) -> Vec<f64> {
    (0..count).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// `MᵀM + floor·I` with `M` uniform in `[-1, 1]`.
pub fn random_spd<R: Rng>(rng: &mut R, dim: usize, floor: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..=1.0));
    let mut a = m.transpose() * m + DMatrix::identity(dim, dim) * floor;
    a = (&a + a.transpose()) * 0.5;
    a
}

/// Shape of a random allocation instance.
#[derive(Clone, Copy, Debug)]
pub struct AllocationShape {
    pub agents: usize,
    pub max_block: usize,
    pub max_rows: usize,
}

impl Default for AllocationShape {
    fn default() -> Self {
        AllocationShape {
            agents: 4,
            max_block: 2,
            max_rows: 3,
        }
    }
}

/// A society with random curvatures and a full-row-rank coupling, plus a
/// random true type profile.
pub fn random_society<R: Rng>(rng: &mut R, shape: AllocationShape) -> Result<(Society, Vec<AgentType>)> {
    let dims: Vec<usize> = (0..shape.agents).map(|_| rng.gen_range(1..=shape.max_block)).collect();
    let total: usize = dims.iter().sum();
    let rows = rng.gen_range(1..=shape.max_rows.min(total));
    let r = loop {
        let r = DMatrix::from_fn(rows, total, |_, _| rng.gen_range(-1.0..=1.0));
        if numerical_rank(&r) == rows {
            break r;
        }
    };
    let c = DVector::from_fn(rows, |_, _| rng.gen_range(-2.0..=2.0));
    let models = dims
        .iter()
        .map(|&d| AgentModel::new(random_spd(rng, d, 0.5), rng.gen_range(-1.0..=1.0)))
        .collect::<Result<Vec<_>>>()?;
    let types = dims
        .iter()
        .map(|&d| AgentType::new(random_scalars(rng, d, 2.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok((Society::new(models, r, c)?, types))
}

pub fn random_allocation<R: Rng>(rng: &mut R, shape: AllocationShape) -> Result<AllocationProblem> {
    let (society, types) = random_society(rng, shape)?;
    society.instantiate(&types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trees_are_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..12 {
            let g = random_tree(&mut rng, n).unwrap();
            assert_eq!(g.edges().len(), n - 1);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = random_allocation(&mut ChaCha8Rng::seed_from_u64(3), AllocationShape::default()).unwrap();
        let b = random_allocation(&mut ChaCha8Rng::seed_from_u64(3), AllocationShape::default()).unwrap();
        assert_eq!(a.coupling().r(), b.coupling().r());
        assert_eq!(a.cost(0).curvature(), b.cost(0).curvature());
    }
}
