//! Fixtures shared by the benchmarks.

use dmech_core::consensus::CommGraph;
use dmech_core::instances::{random_allocation, random_scalars, random_tree, AllocationShape};
use dmech_core::AllocationProblem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 2024;

/// A seeded allocation problem with `agents` agents and blocks of size two.
pub fn allocation(agents: usize) -> AllocationProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + agents as u64);
    let shape = AllocationShape {
        agents,
        max_block: 2,
        max_rows: 3,
    };
    random_allocation(&mut rng, shape).expect("valid random instance")
}

/// A seeded random tree with types in `[-5, 5]`.
pub fn consensus(vertices: usize) -> (CommGraph, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ vertices as u64);
    let graph = random_tree(&mut rng, vertices).expect("valid tree");
    let theta = random_scalars(&mut rng, vertices, 5.0);
    (graph, theta)
}
