//! Tunneling-time laboratory: stationary scattering and weak-value Larmor
//! times, a two-component Gross-Pitaevskii simulator of the Larmor-clock
//! experiment, Bloch-vector tomography and the data-reduction steps used to
//! calibrate it.

pub mod calib;
pub mod error;
pub mod gpe;
pub mod larmor;
pub mod quad;
pub mod scattering;
pub mod spin;
pub mod units;

pub use num_complex::Complex64;

pub use calib::{
    calibrate_barrier_height, deconvolve_width, knife_edge_fit, knife_edge_model,
    BarrierCalibration, KnifeEdgeFit, ScanVariable, TransmissionScan,
};
pub use error::{Error, ErrorKind, Result};
pub use gpe::{
    apply_velocity_kick, calibrate_lens, ground_state, matter_wave_lens, momentum_stats,
    run_larmor_experiment, ComponentMask, GroundStateOptions, Hamiltonian, LensPlan,
    SimResult, SimulationPlan, SpinorField,
};
pub use larmor::{
    dwell_time, ensemble_average_times, larmor_times_global, semiclassical_angle,
    weak_value_density, DwellRegion, EnsembleTimes, EnsembleWeighting, LarmorTimes, TimeDensity,
};
pub use scattering::{
    square_barrier_oracle, transfer_matrix_solve, transmission_curve, tunneling_width, Barrier,
    tunneling_width_vs_height, CurvePoint, PotentialProfile, Scheme, ScatteringSolution,
    TransferMatrix, TunnelingWidth, Waveguide,
};
pub use spin::{
    angles_from_bloch, bloch_from_spinor, calibrate_omega, mle_project, times_from_angles,
    BlochVector, OmegaCalibration,
};
pub use units::{Species, SpatialGrid, UnitSystem, VelocityDistribution};
