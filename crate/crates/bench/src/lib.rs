//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roars_core::policy::{fcfs_initial, NetConfig, PolicyNet};
use roars_core::scenario::{generate_scenario, GenConfig};
use roars_core::schedule::{Instance, ScheduleDag};

/// A quarter-scale single-site instance with at least `min_tasks` tasks.
pub fn quarter_instance(min_tasks: usize) -> Arc<Instance> {
    let gen = GenConfig::intra_site().scaled(4);
    (0..)
        .map(|seed| Arc::new(Instance::new(generate_scenario(&gen, seed).expect("preset is valid")).expect("instance")))
        .find(|i| i.num_tasks() >= min_tasks)
        .expect("some seed has enough tasks")
}

/// The instance's arrival-order insertion schedule.
pub fn initial_dag(inst: &Arc<Instance>) -> ScheduleDag {
    fcfs_initial(inst)
}

/// A freshly initialized network sized for the quarter-scale preset.
pub fn quarter_net(hidden: usize) -> PolicyNet {
    let gen = GenConfig::intra_site().scaled(4);
    PolicyNet::new(NetConfig::for_generator(&gen, hidden), &mut ChaCha8Rng::seed_from_u64(0))
}
