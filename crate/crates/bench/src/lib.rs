//! Shared fixtures for the benchmarks.

use jmf_core::scenarios::{DatasetSizes, Scenario, ScenarioSpec};
use jmf_core::ssm::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The two-mode tracking scenario with `n` trajectories per split.
pub fn linear2(n: usize) -> Scenario {
    ScenarioSpec {
        sizes: DatasetSizes {
            train: n,
            val: n,
            test: n,
        },
        ..ScenarioSpec::linear2()
    }
    .build()
    .expect("linear2 builds")
}

/// `n` seeded trajectories from `scenario`.
pub fn trajectories(scenario: &Scenario, n: usize, seed: u64) -> Vec<Trajectory> {
    scenario
        .generate(n, &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("simulation succeeds")
}
