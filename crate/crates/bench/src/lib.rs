//! Shared fixtures for the benchmarks.

use tunnelclock::gpe::{Hamiltonian, SimulationPlan, SpinorField};
use tunnelclock::{PotentialProfile, TransferMatrix};

/// Barrier of the slower of the two measured heights, 1.3 µm radius.
pub fn barrier() -> PotentialProfile {
    PotentialProfile::gaussian(4.71, 1.3).expect("valid barrier")
}

pub fn solver() -> TransferMatrix {
    TransferMatrix::default()
}

/// Full collision Hamiltonian on the default grid, with a packet approaching the barrier.
pub fn collision() -> (Hamiltonian, SpinorField, f64) {
    let plan = SimulationPlan::default();
    let ham = plan.collision_hamiltonian().expect("valid plan");
    let field = SpinorField::gaussian(plan.grid().expect("grid"), -60.0, 20.0, plan.v0, &plan.units);
    (ham, field, plan.dt)
}
