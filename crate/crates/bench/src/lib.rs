//! Shared inputs for the benchmarks.

use parabuck::presets;
use parabuck::{BankParams, Scenario};

/// The loss-minimization scenario cut to `duration` seconds, without
/// recording intermediate samples.
pub fn exp2_prefix(duration: f64) -> Scenario {
    let mut s = presets::exp2();
    s.duration = duration;
    s.events.retain(|e| e.t <= duration);
    s.decimate = usize::MAX;
    s
}

/// A bank of `m` converters with spread inductances.
pub fn bank(m: usize) -> BankParams {
    let inductance = (0..m).map(|k| 0.8e-3 + 0.45e-3 * k as f64).collect();
    BankParams::new(inductance, 22e-3, 10.0, vec![24.0; m])
}
