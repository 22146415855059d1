//! Units, physical constants, spatial grids and velocity distributions.
//!
//! Internal units: lengths in µm, times in ms, velocities in µm/ms (which is
//! numerically the same as mm/s). Potential energies are carried as
//! equivalent velocities `v_b` with `E = m v_b² / 2`; temperatures in nK.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const BOHR_RADIUS_UM: f64 = 5.291_772_109_03e-5;

/// An atomic species, identified by its mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Species {
    pub mass_kg: f64,
}

impl Species {
    pub fn rubidium87() -> Self {
        Self::from_mass_u(86.909)
    }

    pub fn from_mass_u(mass_u: f64) -> Self {
        Self {
            mass_kg: mass_u * ATOMIC_MASS_UNIT,
        }
    }
}

impl Default for Species {
    fn default() -> Self {
        Self::rubidium87()
    }
}

/// Conversions between the internal unit system and SI-flavoured quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnitSystem {
    pub species: Species,
}

impl UnitSystem {
    pub fn new(species: Species) -> Self {
        Self { species }
    }

    /// ħ/m in µm²/ms.
    pub fn hbar_over_m(&self) -> f64 {
        // 1 µm²/ms = 1e-9 m²/s
        HBAR / self.species.mass_kg * 1e9
    }

    /// Kinetic energy `m v²/2` of a particle moving at `v` (mm/s), in nK.
    pub fn velocity_to_energy(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("velocity must be non-negative, got {v}")));
        }
        let v_si = v * 1e-3;
        Ok(0.5 * self.species.mass_kg * v_si * v_si / BOLTZMANN * 1e9)
    }

    /// Inverse of [`velocity_to_energy`](Self::velocity_to_energy).
    pub fn energy_to_velocity(&self, energy_nk: f64) -> Result<f64> {
        if !(energy_nk >= 0.0) {
            return Err(Error::Domain(format!("energy must be non-negative, got {energy_nk}")));
        }
        let e_si = energy_nk * 1e-9 * BOLTZMANN;
        Ok((2.0 * e_si / self.species.mass_kg).sqrt() * 1e3)
    }

    /// Effective temperature `k_B T = m v_rms²` of a velocity spread, in nK.
    pub fn rms_velocity_to_temperature(&self, v_rms: f64) -> Result<f64> {
        Ok(2.0 * self.velocity_to_energy(v_rms)?)
    }

    /// Wavenumber (1/µm) of a particle moving at `v` (mm/s).
    pub fn wavenumber(&self, v: f64) -> f64 {
        v / self.hbar_over_m()
    }

    /// Velocity (mm/s) of a particle with wavenumber `k` (1/µm).
    pub fn velocity(&self, k: f64) -> f64 {
        k * self.hbar_over_m()
    }
}

/// Uniform periodic grid on `[y_min, y_max)` with a power-of-two point count.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    y_min: f64,
    y_max: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(y_min: f64, y_max: f64, n_points: usize) -> Result<Self> {
        if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::Config(format!(
                "grid bounds must satisfy y_max > y_min, got [{y_min}, {y_max}]"
            )));
        }
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid point count must be a power of two >= 2, got {n_points}"
            )));
        }
        Ok(Self {
            y_min,
            y_max,
            n_points,
        })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn dy(&self) -> f64 {
        self.length() / self.n_points as f64
    }

    pub fn position(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.dy()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.position(i)).collect()
    }

    /// Index of the grid point closest to `y`, clamped to the grid.
    pub fn nearest_index(&self, y: f64) -> usize {
        let i = ((y - self.y_min) / self.dy()).round();
        i.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.y_min && y <= self.y_max
    }

    /// Spacing of the conjugate wavenumber grid, 2π/L.
    pub fn dk(&self) -> f64 {
        2.0 * PI / self.length()
    }

    /// Largest representable wavenumber, π/dy.
    pub fn nyquist_wavenumber(&self) -> f64 {
        PI / self.dy()
    }

    /// Wavenumbers in FFT order: 0, dk, ..., (n/2-1) dk, -n/2 dk, ..., -dk.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points as isize;
        let dk = self.dk();
        (0..n)
            .map(|j| if j < n / 2 { j } else { j - n })
            .map(|j| j as f64 * dk)
            .collect()
    }
}

/// One-dimensional distribution of incident velocities.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityDistribution {
    /// Quartic profile `A (1 - (v - v_0)²/v_R²)²` on `|v - v_0| < v_R`.
    ThomasFermi { center: f64, radius: f64 },
    Gaussian { center: f64, rms: f64 },
    /// Bin centres with normalized weights; bins are assumed uniform.
    Histogram { velocities: Vec<f64>, weights: Vec<f64> },
}

/// Gaussians are truncated at this many standard deviations.
const GAUSSIAN_CUTOFF: f64 = 8.0;

impl VelocityDistribution {
    pub fn thomas_fermi(center: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::Domain(format!("Thomas-Fermi radius must be >= 0, got {radius}")));
        }
        Ok(Self::ThomasFermi { center, radius })
    }

    /// Thomas-Fermi profile with the given rms width (`v_R = √7 · rms`).
    pub fn thomas_fermi_with_rms(center: f64, rms: f64) -> Result<Self> {
        Self::thomas_fermi(center, rms * 7f64.sqrt())
    }

    pub fn gaussian(center: f64, rms: f64) -> Result<Self> {
        if !(rms >= 0.0) {
            return Err(Error::Domain(format!("Gaussian width must be >= 0, got {rms}")));
        }
        Ok(Self::Gaussian { center, rms })
    }

    /// Builds a histogram, normalizing the weights to sum to one.
    pub fn histogram(velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if velocities.len() != weights.len() || velocities.is_empty() {
            return Err(Error::Domain("histogram needs matching, non-empty columns".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("histogram weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("histogram has zero total weight".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self::Histogram {
            velocities,
            weights,
        })
    }

    /// Normalization constant `A` of the continuous profiles.
    pub fn normalization(&self) -> f64 {
        match self {
            Self::ThomasFermi { radius, .. } => 15.0 / (16.0 * radius),
            Self::Gaussian { rms, .. } => 1.0 / ((2.0 * PI).sqrt() * rms),
            Self::Histogram { .. } => 1.0,
        }
    }

    /// Probability density at `v`. Histograms report weight per bin width.
    pub fn density(&self, v: f64) -> f64 {
        match self {
            Self::ThomasFermi { center, radius } => {
                let u = (v - center) / radius;
                if u.abs() < 1.0 {
                    self.normalization() * (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            }
            Self::Gaussian { center, rms } => {
                let u = (v - center) / rms;
                if u.abs() <= GAUSSIAN_CUTOFF {
                    self.normalization() * (-0.5 * u * u).exp()
                } else {
                    0.0
                }
            }
            Self::Histogram {
                velocities,
                weights,
            } => {
                let width = histogram_bin_width(velocities);
                velocities
                    .iter()
                    .zip(weights)
                    .find(|(c, _)| (v - **c).abs() <= 0.5 * width)
                    .map(|(_, w)| w / width)
                    .unwrap_or(0.0)
            }
        }
    }

    /// Closed interval outside which the density vanishes.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::ThomasFermi { center, radius } => (center - radius, center + radius),
            Self::Gaussian { center, rms } => {
                (center - GAUSSIAN_CUTOFF * rms, center + GAUSSIAN_CUTOFF * rms)
            }
            Self::Histogram { velocities, .. } => {
                let lo = velocities.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = velocities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::ThomasFermi { center, .. } | Self::Gaussian { center, .. } => *center,
            Self::Histogram {
                velocities,
                weights,
            } => velocities.iter().zip(weights).map(|(v, w)| v * w).sum(),
        }
    }

    pub fn rms(&self) -> f64 {
        match self {
            Self::ThomasFermi { radius, .. } => radius / 7f64.sqrt(),
            Self::Gaussian { rms, .. } => *rms,
            Self::Histogram {
                velocities,
                weights,
            } => {
                let m = self.mean();
                velocities
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| w * (v - m).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Quadrature nodes `(v, w)` with `Σ w = 1` for averaging over the distribution.
    ///
    /// Continuous profiles use `n`-point Gauss-Legendre on their support; a
    /// histogram returns its own bins. A zero-width profile collapses onto a
    /// single node at its centre.
    pub fn nodes(&self, n: usize) -> Vec<(f64, f64)> {
        match self {
            Self::Histogram {
                velocities,
                weights,
            } => velocities
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, w)| (*v, *w))
                .collect(),
            _ => {
                let (lo, hi) = self.support();
                if !(hi > lo) {
                    return vec![(self.mean(), 1.0)];
                }
                let mut nodes: Vec<(f64, f64)> = quad::gauss_legendre_on(n.max(2), lo, hi)
                    .into_iter()
                    .map(|(v, w)| (v, w * self.density(v)))
                    .collect();
                let total: f64 = nodes.iter().map(|(_, w)| w).sum();
                for node in &mut nodes {
                    node.1 /= total;
                }
                nodes
            }
        }
    }
}

fn histogram_bin_width(centers: &[f64]) -> f64 {
    if centers.len() < 2 {
        return 1.0;
    }
    let (lo, hi) = centers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    (hi - lo) / (centers.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn hbar_over_m_for_rubidium() {
        let units = UnitSystem::default();
        // ħ / (86.909 u) = 1.054571817e-34 / 1.443166e-25 m²/s
        let expected = 1.054_571_817e-34 / (86.909 * 1.660_539_066_60e-27) * 1e9;
        assert_relative_eq!(units.hbar_over_m(), expected, max_relative = 1e-15);
        assert!((units.hbar_over_m() - 0.7308).abs() < 2e-4);
    }

    #[test]
    fn micrometre_squared_per_ms_scaling() {
        // 1 µm²/ms = 1e-12 m² / 1e-3 s
        let units = UnitSystem::default();
        let si = HBAR / units.species.mass_kg;
        assert_relative_eq!(units.hbar_over_m(), si / 1e-9, max_relative = 1e-15);
    }

    #[test]
    fn barrier_energy_scale() {
        let units = UnitSystem::default();
        let e = units.velocity_to_energy(6.9).unwrap();
        assert!((e - 250.0).abs() < 3.0, "got {e} nK");
        assert_eq!(units.velocity_to_energy(0.0).unwrap(), 0.0);
    }

    #[test]
    fn wavepacket_temperature() {
        let units = UnitSystem::default();
        let t = units.rms_velocity_to_temperature(0.35).unwrap();
        assert!((t - 1.28).abs() < 0.02, "got {t} nK");
    }

    #[test]
    fn negative_velocity_is_rejected() {
        let units = UnitSystem::default();
        assert!(matches!(units.velocity_to_energy(-1.0), Err(Error::Domain(_))));
        assert!(matches!(units.energy_to_velocity(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_spacing() {
        let g = SpatialGrid::new(-400.0, 400.0, 4096).unwrap();
        assert!((g.dy() - 0.1953).abs() < 1e-4);
        let g = SpatialGrid::new(-10.0, 10.0, 2).unwrap();
        assert_eq!(g.dy(), 10.0);
        assert_eq!(g.positions(), vec![-10.0, 0.0]);
    }

    #[test]
    fn grid_rejects_bad_configuration() {
        assert!(matches!(SpatialGrid::new(-1.0, 1.0, 1000), Err(Error::Config(_))));
        assert!(matches!(SpatialGrid::new(-1.0, 1.0, 1), Err(Error::Config(_))));
        assert!(matches!(SpatialGrid::new(1.0, -1.0, 8), Err(Error::Config(_))));
    }

    #[test]
    fn wavenumber_grid_is_fourier_dual() {
        let g = SpatialGrid::new(-400.0, 400.0, 4096).unwrap();
        let k = g.wavenumbers();
        assert_relative_eq!(k[1] - k[0], 2.0 * PI / 800.0, max_relative = 1e-12);
        let kmax = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kmin = k.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(kmin, -PI / g.dy(), max_relative = 1e-12);
        assert_relative_eq!(kmax, PI / g.dy() - g.dk(), max_relative = 1e-12);
    }

    #[test]
    fn thomas_fermi_shape_and_moments() {
        let d = VelocityDistribution::thomas_fermi(4.0, 0.8).unwrap();
        assert_eq!(d.density(4.81), 0.0);
        assert_eq!(d.density(5.0), 0.0);
        assert_relative_eq!(d.density(4.0), 15.0 / 16.0 / 0.8, max_relative = 1e-14);
        assert_relative_eq!(d.density(4.4), 15.0 / 16.0 / 0.8 * 0.5625, max_relative = 1e-14);
        let nodes = d.nodes(64);
        let rms: f64 = nodes.iter().map(|(v, w)| w * (v - 4.0).powi(2)).sum::<f64>().sqrt();
        assert_relative_eq!(rms, d.rms(), max_relative = 1e-10);
    }

    #[test]
    fn histogram_normalizes() {
        let d = VelocityDistribution::histogram(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert_relative_eq!(d.mean(), 2.0);
        assert_relative_eq!(d.rms(), 0.5f64.sqrt());
        assert_relative_eq!(d.density(2.2), 0.5);
    }

    proptest! {
        #[test]
        fn velocity_energy_round_trip(v in 1e-6f64..10.0) {
            let units = UnitSystem::default();
            let back = units.energy_to_velocity(units.velocity_to_energy(v).unwrap()).unwrap();
            prop_assert!(((back - v) / v).abs() < 1e-12);
        }

        #[test]
        fn distributions_integrate_to_one(v0 in 1.0f64..8.0, width in 0.05f64..1.5) {
            for d in [
                VelocityDistribution::thomas_fermi(v0, width).unwrap(),
                VelocityDistribution::gaussian(v0, width).unwrap(),
            ] {
                let (lo, hi) = d.support();
                let integral: f64 = quad::gauss_legendre_on(200, lo, hi)
                    .into_iter()
                    .map(|(v, w)| w * d.density(v))
                    .sum();
                prop_assert!((integral - 1.0).abs() < 1e-9, "{d:?}: {integral}");
            }
        }
    }
}
