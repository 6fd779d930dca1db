//! Shared fixtures for the benchmarks.

use hpe_core::{sample_instance, ChannelInstance, ScenarioConfig};

/// Held-out instances of the desk scenario (`N = 8`, one group of four
/// users at 10 dB), in raw units.
pub fn desk_instances(count: usize) -> Vec<ChannelInstance> {
    let cfg = ScenarioConfig {
        seed: 4242,
        ..ScenarioConfig::uniform(8, 1, 4, 10.0)
    };
    (0..count as u64)
        .map(|i| sample_instance(&cfg, i).expect("valid desk scenario"))
        .collect()
}
