//! Bloch-vector tomography of the transmitted packet and conversion of
//! Larmor angles to times.
//!
//! Axes: `x` is the initial clock state (component 1), `z` is the
//! occupation difference between the Raman-dressed states
//! `|↑⟩ = (|1⟩ + |2⟩)/√2` (raised by the probe) and `|↓⟩ = (|1⟩ - |2⟩)/√2`,
//! and `y` completes a right-handed frame in which a positive probe
//! frequency rotates `x` toward `+y`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gpe::SpinorField;
use crate::larmor::LarmorTimes;

/// Orientation of the `y` axis relative to `2 Im(ψ1* ψ2)`.
const Y_SIGN: f64 = -1.0;

/// Normalized spin projections of a region, with the region's norm as weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub weight: f64,
}

impl BlochVector {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Self {
        Self { sx, sy, sz, weight: 1.0 }
    }

    pub fn length(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }

    /// Rotation by `angle` about `x`, taking `y` toward `z`.
    ///
    /// Models a compensating pulse applied before the `y`/`z` readout.
    pub fn pre_rotate(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            sy: c * self.sy - s * self.sz,
            sz: s * self.sy + c * self.sz,
            ..*self
        }
    }

    /// Polar angle out of the `x`-`y` plane, `asin(S_z/|S|)`.
    pub fn theta_z(&self) -> f64 {
        let l = self.length();
        if l == 0.0 {
            0.0
        } else {
            (self.sz / l).clamp(-1.0, 1.0).asin()
        }
    }
}

/// Bloch vector of the part of `field` inside `region`.
pub fn bloch_from_spinor(field: &SpinorField, region: (f64, f64)) -> Result<BlochVector> {
    let dy = field.grid.dy();
    let (mut n1, mut n2, mut c) = (0.0, 0.0, num_complex::Complex64::new(0.0, 0.0));
    for (y, (a, b)) in field
        .grid
        .positions()
        .iter()
        .zip(field.psi1.iter().zip(&field.psi2))
    {
        if *y >= region.0 && *y <= region.1 {
            n1 += a.norm_sqr();
            n2 += b.norm_sqr();
            c += a.conj() * b;
        }
    }
    let norm = (n1 + n2) * dy;
    if !(norm >= 1e-12) {
        return Err(Error::DegenerateStatistics { norm });
    }
    let total = n1 + n2;
    Ok(BlochVector {
        sx: (n1 - n2) / total,
        sy: Y_SIGN * 2.0 * c.im / total,
        sz: 2.0 * c.re / total,
        weight: norm,
    })
}

/// Nearest physical Bloch vector: unchanged inside the unit ball, radially
/// projected onto the sphere outside it.
pub fn mle_project(v: &BlochVector) -> BlochVector {
    let l = v.length();
    if l <= 1.0 {
        *v
    } else {
        BlochVector {
            sx: v.sx / l,
            sy: v.sy / l,
            sz: v.sz / l,
            weight: v.weight,
        }
    }
}

/// In-plane angle `θ_y = atan2(S_y, S_x)` and out-of-plane rapidity
/// `α_z = artanh(S_z)`.
pub fn angles_from_bloch(v: &BlochVector) -> Result<(f64, f64)> {
    if v.sz.abs() >= 1.0 {
        return Err(Error::Saturation(v.sz));
    }
    if v.sx == 0.0 && v.sy == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    Ok((v.sy.atan2(v.sx), v.sz.atanh()))
}

/// Times from angles for precession rate `omega_eff` (rad/ms).
///
/// `τ_y = θ_y/Ω_eff`, `τ_z = α_z/Ω_eff`; tunneling gives `S_z < 0` and so `τ_z < 0`.
pub fn times_from_angles(theta_y: f64, alpha_z: f64, omega_eff: f64) -> Result<LarmorTimes> {
    if omega_eff == 0.0 || !omega_eff.is_finite() {
        return Err(Error::DivisionByZero("effective Larmor frequency is zero".into()));
    }
    Ok(LarmorTimes::new(theta_y / omega_eff, alpha_z / omega_eff))
}

/// Converts a frequency in Hz to an angular rate in rad/ms.
pub fn hz_to_rad_per_ms(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f * 1e-3
}

/// Precession-rate calibration from above-barrier runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaCalibration {
    /// `Ω_eff` (rad/ms).
    pub omega: f64,
    /// Rms of the angle residuals (rad).
    pub residual: f64,
}

/// Least-squares `Ω_eff` from `(v, θ_y)` pairs measured well above a
/// Gaussian barrier of height `v_b` and rms `sigma`, against the
/// semiclassical angle per unit frequency.
pub fn calibrate_omega(runs: &[(f64, f64)], v_b: f64, sigma: f64) -> Result<OmegaCalibration> {
    if runs.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "{} run(s); least squares needs at least 2 (see calibrate_omega_single)",
            runs.len()
        )));
    }
    let unit = unit_angles(runs, v_b, sigma)?;
    let (num, den) = unit
        .iter()
        .zip(runs)
        .fold((0.0, 0.0), |(n, d), (s, (_, th))| (n + s * th, d + s * s));
    if den == 0.0 {
        return Err(Error::Underdetermined("semiclassical angles vanish".into()));
    }
    let omega = num / den;
    let residual = (unit
        .iter()
        .zip(runs)
        .map(|(s, (_, th))| (th - omega * s).powi(2))
        .sum::<f64>()
        / runs.len() as f64)
        .sqrt();
    Ok(OmegaCalibration { omega, residual })
}

/// Single-run estimate `Ω_eff = θ_y/θ_sc(v)`, without a residual check.
pub fn calibrate_omega_single(v: f64, theta_y: f64, v_b: f64, sigma: f64) -> Result<OmegaCalibration> {
    let unit = unit_angles(&[(v, theta_y)], v_b, sigma)?;
    Ok(OmegaCalibration {
        omega: theta_y / unit[0],
        residual: 0.0,
    })
}

fn unit_angles(runs: &[(f64, f64)], v_b: f64, sigma: f64) -> Result<Vec<f64>> {
    runs.iter()
        .map(|(v, _)| {
            if *v <= v_b {
                return Err(Error::Domain(format!(
                    "calibration run at {v} mm/s is not above the barrier ({v_b} mm/s)"
                )));
            }
            crate::larmor::semiclassical_angle(*v, v_b, sigma)
        })
        .collect()
}

/// Simulated tomography: each projection of `truth` is measured with
/// Gaussian noise of width `1/√atoms`.
pub fn noisy_tomography(truth: &BlochVector, atoms: f64, seed: u64) -> Result<BlochVector> {
    if !(atoms > 0.0) {
        return Err(Error::Domain(format!("atom number must be > 0, got {atoms}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0 / atoms.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(BlochVector {
        sx: truth.sx + noise.sample(&mut rng),
        sy: truth.sy + noise.sample(&mut rng),
        sz: truth.sz + noise.sample(&mut rng),
        weight: truth.weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::SpatialGrid;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn field_from(a: Complex64, b: Complex64) -> SpinorField {
        let grid = SpatialGrid::new(-1.0, 1.0, 8).unwrap();
        let mut f = SpinorField::zeros(grid);
        f.psi1 = vec![a; 8];
        f.psi2 = vec![b; 8];
        f
    }

    #[test]
    fn clock_state_points_along_x() {
        let f = field_from(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let b = bloch_from_spinor(&f, (-1.0, 1.0)).unwrap();
        assert_eq!((b.sx, b.sy, b.sz), (1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_precession() {
        // exp(-iΩtσx)|1⟩ with Ω_eff t = π/4
        let phi = FRAC_PI_4 / 2.0;
        let f = field_from(Complex64::new(phi.cos(), 0.0), Complex64::new(0.0, -phi.sin()));
        let b = bloch_from_spinor(&f, (-1.0, 1.0)).unwrap();
        let h = 0.5f64.sqrt();
        assert!((b.sx - h).abs() < 1e-14 && (b.sy - h).abs() < 1e-14 && b.sz.abs() < 1e-14);
        let (theta, alpha) = angles_from_bloch(&b).unwrap();
        assert!((theta - FRAC_PI_4).abs() < 1e-14 && alpha.abs() < 1e-14);
    }

    #[test]
    fn dressed_state_population_sets_z() {
        // more weight in (|1⟩ - |2⟩)/√2, the state the probe lowers
        let (up, down) = (0.6f64, 0.8f64);
        let h = 0.5f64.sqrt();
        let f = field_from(Complex64::new(h * (up + down), 0.0), Complex64::new(h * (up - down), 0.0));
        let b = bloch_from_spinor(&f, (-1.0, 1.0)).unwrap();
        assert!((b.sz - (up * up - down * down)).abs() < 1e-14);
        assert!(b.sz < 0.0);
    }

    #[test]
    fn empty_region_is_degenerate() {
        let f = field_from(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        assert!(matches!(bloch_from_spinor(&f, (5.0, 6.0)), Err(Error::DegenerateStatistics { .. })));
    }

    #[test]
    fn angle_edge_cases() {
        assert!(matches!(angles_from_bloch(&BlochVector::new(0.0, 0.0, 1.0)), Err(Error::Saturation(_))));
        assert!(matches!(angles_from_bloch(&BlochVector::new(0.0, 0.0, 0.5)), Err(Error::UndefinedPhase)));
        assert!(matches!(times_from_angles(0.1, 0.0, 0.0), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn times_from_angles_example() {
        let w = hz_to_rad_per_ms(50.0);
        let t = times_from_angles(0.314, 0.0, w).unwrap();
        assert!((t.tau_y - 0.314 / (2.0 * PI * 0.05)).abs() < 1e-12);
        assert!((t.tau_y - 1.0).abs() < 1e-3);
    }

    #[test]
    fn theta_z_is_polar_angle() {
        let v = BlochVector::new(0.0, 0.6, 0.8);
        assert!((v.theta_z() - 0.8f64.asin()).abs() < 1e-14);
    }

    #[test]
    fn pre_rotation_by_quarter_turn_swaps_y_and_z() {
        let v = BlochVector::new(0.1, 0.3, 0.0).pre_rotate(PI / 2.0);
        assert!(v.sy.abs() < 1e-15 && (v.sz - 0.3).abs() < 1e-15 && v.sx == 0.1);
    }

    #[test]
    fn calibration_recovers_omega() {
        let (vb, s) = (4.71, 1.3);
        let omega = hz_to_rad_per_ms(200.0);
        let runs: Vec<(f64, f64)> = [6.0, 7.0, 8.0]
            .iter()
            .map(|&v| (v, omega * crate::larmor::semiclassical_angle(v, vb, s).unwrap()))
            .collect();
        let c = calibrate_omega(&runs, vb, s).unwrap();
        assert!((c.omega - omega).abs() < 1e-12 && c.residual < 1e-12);
        let single = calibrate_omega_single(runs[0].0, runs[0].1, vb, s).unwrap();
        assert!((single.omega - omega).abs() < 1e-12);
    }

    #[test]
    fn calibration_input_checks() {
        assert!(matches!(calibrate_omega(&[(6.0, 0.1)], 4.71, 1.3), Err(Error::Underdetermined(_))));
        assert!(matches!(
            calibrate_omega(&[(6.0, 0.1), (4.0, 0.1)], 4.71, 1.3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tomography_noise_is_reproducible_and_scaled() {
        let t = BlochVector::new(0.7, 0.1, -0.1);
        let a = noisy_tomography(&t, 1e4, 7).unwrap();
        let b = noisy_tomography(&t, 1e4, 7).unwrap();
        assert_eq!(a, b);
        let n = 2000;
        let var: f64 = (0..n)
            .map(|s| (noisy_tomography(&t, 1e4, s).unwrap().sx - t.sx).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var.sqrt() - 0.01).abs() < 0.001);
    }

    /// Minimizes `|u - v|²` over the unit ball by projected gradient descent.
    fn ball_projection_oracle(v: [f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        let step = 0.05;
        for _ in 0..4000 {
            for i in 0..3 {
                u[i] -= step * 2.0 * (u[i] - v[i]);
            }
            let l = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            if l > 1.0 {
                for x in &mut u {
                    *x /= l;
                }
            }
        }
        u
    }

    proptest! {
        #[test]
        fn projection_matches_constrained_minimizer(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0
        ) {
            let p = mle_project(&BlochVector::new(x, y, z));
            let o = ball_projection_oracle([x, y, z]);
            prop_assert!((p.sx - o[0]).abs() < 1e-9);
            prop_assert!((p.sy - o[1]).abs() < 1e-9);
            prop_assert!((p.sz - o[2]).abs() < 1e-9);
            prop_assert!(p.length() <= 1.0 + 1e-12);
        }

        #[test]
        fn spinor_bloch_vectors_are_unit(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0, br in -1.0f64..1.0, bi in -1.0f64..1.0
        ) {
            prop_assume!(ar * ar + ai * ai + br * br + bi * bi > 1e-6);
            let f = field_from(Complex64::new(ar, ai), Complex64::new(br, bi));
            let b = bloch_from_spinor(&f, (-1.0, 1.0)).unwrap();
            prop_assert!((b.length() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn angles_round_trip(theta in -3.0f64..3.0, alpha in -3.0f64..3.0) {
            let sz = alpha.tanh();
            let r = (1.0 - sz * sz).sqrt();
            let v = BlochVector::new(r * theta.cos(), r * theta.sin(), sz);
            let (t, a) = angles_from_bloch(&v).unwrap();
            prop_assert!((t - theta).abs() < 1e-9);
            prop_assert!((a - alpha).abs() < 1e-9);
        }
    }
}
