//! Stationary tunneling times: dwell time, the complex Larmor time
//! `τ_y + iτ_z = iħ ∂ln t/∂V₀`, its position-resolved weak-value density,
//! the semiclassical precession integral and velocity-ensemble averages.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad;
use crate::scattering::{c_and_s, richardson, PotentialProfile, Slicing, Sweep, TransferMatrix};
use crate::units::VelocityDistribution;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Real and imaginary parts of the complex conditional time, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LarmorTimes {
    pub tau_y: f64,
    pub tau_z: f64,
}

impl LarmorTimes {
    pub fn new(tau_y: f64, tau_z: f64) -> Self {
        Self { tau_y, tau_z }
    }

    pub fn from_complex(tau: Complex64) -> Self {
        Self {
            tau_y: tau.re,
            tau_z: tau.im,
        }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.tau_y, self.tau_z)
    }
}

/// Relative height step of the central difference.
const HEIGHT_STEP: f64 = 1e-6;
/// Largest relative disagreement tolerated between the `h` and `2h` estimates.
const DERIVATIVE_TOLERANCE: f64 = 1e-4;

/// `τ_y + iτ_z = iħ ∂ln t/∂V₀`, from a central difference in the barrier
/// height checked against the doubled step.
pub fn larmor_times_global(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    v: f64,
) -> Result<LarmorTimes> {
    let window = solver.check(potential, v)?;
    let w = potential.height().powi(2);
    if !(w > 0.0) {
        return Err(Error::Domain("Larmor times need a barrier of positive height".into()));
    }
    let slicings = solver.slicings(potential, window);
    // absolute step in U = v_b²; tied to v² so a vanishing barrier still gets a usable step
    let h = HEIGHT_STEP * w.max(v * v);
    let log_t = |dw: f64| -> Result<Complex64> {
        Ok(solver.solve_slicings(&slicings, v, (w + dw) / w, false)?.log_t)
    };
    let diff = |step: f64| -> Result<Complex64> {
        let delta = log_t(step)? - log_t(-step)?;
        let wrapped = wrap_phase(delta);
        if wrapped.im.abs() > 0.1 {
            return Err(Error::NumericalQuality(format!(
                "phase of t jumps by {:.3} rad across the height step",
                wrapped.im
            )));
        }
        Ok(wrapped / (2.0 * step))
    };
    let d1 = diff(h)?;
    let d2 = diff(2.0 * h)?;
    let scale = d1.norm().max(f64::MIN_POSITIVE);
    if (d1 - d2).norm() > DERIVATIVE_TOLERANCE * scale {
        return Err(Error::NumericalQuality(format!(
            "height derivative not converged: relative disagreement {:.2e}",
            (d1 - d2).norm() / scale
        )));
    }
    let deriv = (4.0 * d1 - d2) / 3.0;
    // V₀ = m U / 2, so iħ ∂/∂V₀ = 2i (ħ/m) ∂/∂U
    Ok(LarmorTimes::from_complex(2.0 * I * solver.hbar_over_m() * deriv))
}

fn wrap_phase(z: Complex64) -> Complex64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    Complex64::new(z.re, z.im - (z.im / two_pi).round() * two_pi)
}

/// Region over which a dwell time is accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DwellRegion {
    /// Hard window `[a, b]` (µm).
    Window(f64, f64),
    /// The whole solver window, weighted by the barrier profile `G(y)`.
    BarrierWeighted,
}

/// Stationary dwell time `(1/j_in) ∫ w(y) |ψ(y)|² dy` in ms.
///
/// The eigenstate is integrated exactly slice by slice for midpoint slices at
/// `n` and `n/2`, then extrapolated.
pub fn dwell_time(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    v: f64,
    region: DwellRegion,
) -> Result<f64> {
    let window = solver.check(potential, v)?;
    if let DwellRegion::Window(a, b) = region {
        if !(b > a) || a < window.0 - 1e-12 || b > window.1 + 1e-12 {
            return Err(Error::Domain(format!(
                "dwell region [{a}, {b}] must lie inside the solver window [{}, {}]",
                window.0, window.1
            )));
        }
    }
    let hm = solver.hbar_over_m();
    let values: Vec<f64> = [solver.slices, solver.slices / 2]
        .iter()
        .map(|&n| {
            let sl = Slicing::new(potential, window, n);
            let sweep = Sweep::run(&sl, &sl.u, v, hm)?;
            let total: f64 = (0..n)
                .map(|j| match region {
                    DwellRegion::BarrierWeighted => sl.g[j] * sweep.cell_norm(j, sl.d, 0.0, sl.d),
                    DwellRegion::Window(a, b) => {
                        let left = sl.a + j as f64 * sl.d;
                        let s1 = (a - left).clamp(0.0, sl.d);
                        let s2 = (b - left).clamp(0.0, sl.d);
                        if s2 > s1 {
                            sweep.cell_norm(j, sl.d, s1, s2)
                        } else {
                            0.0
                        }
                    }
                })
                .sum();
            Ok(total / v)
        })
        .collect::<Result<_>>()?;
    Ok(richardson(&values))
}

/// Position-resolved weak value of the projector onto each slice, in ms/µm.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDensity {
    /// Slice centres (µm).
    pub y: Vec<f64>,
    pub dy: f64,
    pub tau_y: Vec<f64>,
    pub tau_z: Vec<f64>,
}

impl TimeDensity {
    /// `∫ weight(y) · density dy` as a pair of times.
    pub fn integrate<F: Fn(f64) -> f64>(&self, weight: F) -> LarmorTimes {
        let mut out = LarmorTimes::default();
        for i in 0..self.y.len() {
            let w = weight(self.y[i]) * self.dy;
            out.tau_y += w * self.tau_y[i];
            out.tau_z += w * self.tau_z[i];
        }
        out
    }
}

/// Relative size of the per-slice potential perturbation.
const CELL_STEP: f64 = 1e-4;

/// Weak-value density from `±δ` perturbations of each slice's potential.
///
/// With prefix row functionals `w_j = f M_0 ⋯ M_{j-1}` and suffix states
/// `u_j`, the incident amplitude is `w_j M_j u_j` for every `j`, so each
/// perturbed slice costs O(1) and the whole density O(n).
pub fn weak_value_density(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    v: f64,
) -> Result<TimeDensity> {
    let window = solver.check(potential, v)?;
    let hm = solver.hbar_over_m();
    let sl = Slicing::new(potential, window, solver.slices);
    let sweep = Sweep::run(&sl, &sl.u, v, hm)?;
    let n = sl.len();
    let k0 = sweep.k0;

    let mut rows = Vec::with_capacity(n);
    let mut w = [
        Complex64::new(0.5, 0.0) * Complex64::from_polar(1.0, -k0 * sl.a),
        Complex64::new(0.5, 0.0) * Complex64::from_polar(1.0, -k0 * sl.a) / (I * k0),
    ];
    for j in 0..n {
        rows.push(w);
        let (c, s) = c_and_s(sweep.q2[j], sl.d);
        let q2 = sweep.q2[j];
        let next = [w[0] * c + w[1] * q2 * s, -w[0] * s + w[1] * c];
        let m = next[0].norm() + next[1].norm() * k0;
        w = [next[0] / m, next[1] / m];
    }

    let peak = sl.u.iter().cloned().fold(0.0, f64::max);
    let delta = CELL_STEP * peak.max(v * v);
    let dq2 = delta / (hm * hm);
    let apply = |row: &[Complex64; 2], q2: f64, u: &[Complex64; 2]| {
        let (c, s) = c_and_s(q2, sl.d);
        row[0] * (c * u[0] - s * u[1]) + row[1] * (q2 * s * u[0] + c * u[1])
    };
    let tau: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let u = &sweep.states[j + 1];
            let q2 = sweep.q2[j];
            // U + δ lowers q²
            let plus = apply(&rows[j], q2 - dq2, u);
            let minus = apply(&rows[j], q2 + dq2, u);
            let dlog_t = -(plus / minus).ln() / (2.0 * delta);
            2.0 * I * hm * dlog_t / sl.d
        })
        .collect();
    Ok(TimeDensity {
        y: sl.mids.clone(),
        dy: sl.d,
        tau_y: tau.iter().map(|z| z.re).collect(),
        tau_z: tau.iter().map(|z| z.im).collect(),
    })
}

/// Semiclassical precession time `∫ G(y) / sqrt(v² - v_b² G(y)) dy` (ms),
/// `G(y) = exp(-2y²/σ²)`, truncated at ±6σ.
pub fn semiclassical_angle(v: f64, v_b: f64, sigma: f64) -> Result<f64> {
    if !(v > v_b) {
        return Err(Error::Domain(format!(
            "semiclassical time needs v > v_b (v = {v}, v_b = {v_b}); use the full quantum calculation"
        )));
    }
    if !(sigma > 0.0) || !(v_b >= 0.0) {
        return Err(Error::Domain("barrier radius must be > 0 and height >= 0".into()));
    }
    let integrand = |y: f64| {
        let g = (-2.0 * y * y / (sigma * sigma)).exp();
        g / (v * v - v_b * v_b * g).sqrt()
    };
    let l = 6.0 * sigma;
    // the integrand is even; integrate one side in two pieces around the peak
    let tol = 1e-14 * sigma / v;
    let inner = quad::adaptive_simpson(&integrand, 0.0, sigma, tol);
    let outer = quad::adaptive_simpson(&integrand, sigma, l, tol);
    Ok(2.0 * (inner + outer))
}

/// How complex times are combined across incident velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleWeighting {
    /// Real weights `P(v) T(v)`.
    #[default]
    Probability,
    /// Complex weights `P(v) t(v)`: the weak value post-selected on the
    /// undistorted incident packet shape.
    Amplitude,
}

/// Ensemble-averaged times with transmission statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleTimes {
    pub times: LarmorTimes,
    /// `∫ P(v) T(v) dv`.
    pub transmission: f64,
    /// Fraction of the transmitted weight with `v < v_b`.
    pub tunneled_fraction: f64,
    pub transmitted_mean: f64,
    pub transmitted_rms: f64,
}

/// Gauss-Legendre nodes per side of the barrier velocity.
const ENSEMBLE_NODES: usize = 48;

/// Averages the complex time over `dist`, conditioned on transmission.
pub fn ensemble_average_times(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    dist: &VelocityDistribution,
    weighting: EnsembleWeighting,
) -> Result<EnsembleTimes> {
    let (lo, _) = dist.support();
    if !(lo > 0.0) {
        return Err(Error::Domain(format!(
            "velocity distribution reaches v = {lo} <= 0"
        )));
    }
    let v_b = potential.height();
    let nodes = ensemble_nodes(dist, v_b);
    let samples: Vec<(f64, f64, Complex64, LarmorTimes)> = nodes
        .par_iter()
        .map(|&(v, w)| {
            let s = solver.solve(potential, v)?;
            let tau = larmor_times_global(solver, potential, v)?;
            Ok((v, w, s.t, tau))
        })
        .collect::<Result<_>>()?;

    let mut transmission = 0.0;
    let mut tunneled = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = Complex64::new(0.0, 0.0);
    for (v, w, t, tau) in &samples {
        let wt = w * t.norm_sqr();
        transmission += wt;
        if *v < v_b {
            tunneled += wt;
        }
        mean += wt * v;
        second += wt * v * v;
        let cw = match weighting {
            EnsembleWeighting::Probability => Complex64::new(wt, 0.0),
            EnsembleWeighting::Amplitude => w * t,
        };
        num += cw * tau.as_complex();
        den += cw;
    }
    if !(transmission > 0.0) || den.norm() == 0.0 {
        return Err(Error::DegenerateStatistics { norm: transmission });
    }
    let mean_v = mean / transmission;
    let var = (second / transmission - mean_v * mean_v).max(0.0);
    Ok(EnsembleTimes {
        times: LarmorTimes::from_complex(num / den),
        transmission,
        tunneled_fraction: tunneled / transmission,
        transmitted_mean: mean_v,
        transmitted_rms: var.sqrt(),
    })
}

/// Quadrature nodes over the distribution, split at `v_b` so the tunneled
/// fraction is integrated without a kink inside a panel.
fn ensemble_nodes(dist: &VelocityDistribution, v_b: f64) -> Vec<(f64, f64)> {
    if let VelocityDistribution::Histogram { .. } = dist {
        return dist.nodes(0);
    }
    let (lo, hi) = dist.support();
    if !(hi > lo) {
        return vec![(dist.mean(), 1.0)];
    }
    let mut pieces = vec![(lo, hi)];
    if v_b > lo && v_b < hi {
        pieces = vec![(lo, v_b), (v_b, hi)];
    }
    let mut nodes: Vec<(f64, f64)> = pieces
        .into_iter()
        .flat_map(|(a, b)| quad::gauss_legendre_on(ENSEMBLE_NODES, a, b))
        .map(|(v, w)| (v, w * dist.density(v)))
        .collect();
    let total: f64 = nodes.iter().map(|(_, w)| w).sum();
    for n in &mut nodes {
        n.1 /= total;
    }
    nodes
}
