//! Two-component 1D Gross-Pitaevskii simulation of the Larmor-clock
//! experiment: imaginary-time ground states, Strang-split spectral real-time
//! evolution, matter-wave lensing, velocity kicks and the full collision
//! pipeline.
//!
//! Wavefunctions are normalized to one; the atom number enters through the
//! interaction strengths `g_ij/ħ = 2 ω_⊥ a_ij N` (µm/ms). Potentials are
//! stored as phase rates `V/ħ` in rad/ms.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::larmor::LarmorTimes;
use crate::scattering::PotentialProfile;
use crate::spin::{self, BlochVector};
use crate::units::{SpatialGrid, UnitSystem, VelocityDistribution, BOHR_RADIUS_UM};

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Two complex amplitude arrays on a shared grid.
///
/// Component 1 is `|x⟩` (the initially occupied clock state), component 2 is `|-x⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: SpatialGrid,
    pub psi1: Vec<Complex64>,
    pub psi2: Vec<Complex64>,
    pub atom_number: f64,
    /// Elapsed time (ms).
    pub time: f64,
}

impl SpinorField {
    pub fn zeros(grid: SpatialGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            psi1: vec![C0; n],
            psi2: vec![C0; n],
            atom_number: 1.0,
            time: 0.0,
        }
    }

    /// Normalized Gaussian in component 1 with position rms `width` and mean velocity `v0`.
    pub fn gaussian(grid: SpatialGrid, center: f64, width: f64, v0: f64, units: &UnitSystem) -> Self {
        let k0 = units.wavenumber(v0);
        let mut f = Self::zeros(grid);
        for (i, y) in f.grid.positions().into_iter().enumerate() {
            let x = (y - center) / width;
            f.psi1[i] = Complex64::from_polar((-0.25 * x * x).exp(), k0 * y);
        }
        f.normalize();
        f
    }

    pub fn len(&self) -> usize {
        self.psi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi1.is_empty()
    }

    pub fn density(&self) -> Vec<f64> {
        self.psi1
            .iter()
            .zip(&self.psi2)
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.density().iter().sum::<f64>() * self.grid.dy()
    }

    /// Norm of both components over `[a, b]`.
    pub fn region_norm(&self, a: f64, b: f64) -> f64 {
        let dy = self.grid.dy();
        self.grid
            .positions()
            .iter()
            .zip(self.psi1.iter().zip(&self.psi2))
            .filter(|(y, _)| **y >= a && **y <= b)
            .map(|(_, (p, q))| p.norm_sqr() + q.norm_sqr())
            .sum::<f64>()
            * dy
    }

    pub fn normalize(&mut self) {
        let n = self.norm().sqrt();
        if n > 0.0 {
            for z in self.psi1.iter_mut().chain(self.psi2.iter_mut()) {
                *z /= n;
            }
        }
    }

    /// Mean and rms position over `[a, b]`.
    pub fn position_stats(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let ys = self.grid.positions();
        let rho = self.density();
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (y, r) in ys.iter().zip(&rho) {
            if *y >= a && *y <= b {
                w += r;
                m1 += r * y;
                m2 += r * y * y;
            }
        }
        let norm = w * self.grid.dy();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateStatistics { norm });
        }
        let mean = m1 / w;
        Ok((mean, (m2 / w - mean * mean).max(0.0).sqrt()))
    }

    pub fn centroid(&self) -> f64 {
        self.position_stats(f64::NEG_INFINITY, f64::INFINITY)
            .map(|s| s.0)
            .unwrap_or(0.0)
    }

    /// Writes `y_um,re_psi1,im_psi1,re_psi2,im_psi2` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# time_ms = {:.9e}", self.time)?;
        writeln!(out, "# atom_number = {:.9e}", self.atom_number)?;
        writeln!(out, "y_um,re_psi1,im_psi1,re_psi2,im_psi2")?;
        for (i, y) in self.grid.positions().iter().enumerate() {
            let (a, b) = (self.psi1[i], self.psi2[i]);
            writeln!(out, "{y:.9e},{:.9e},{:.9e},{:.9e},{:.9e}", a.re, a.im, b.re, b.im)?;
        }
        Ok(())
    }
}

/// Local and non-local terms of the coupled equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    pub grid: SpatialGrid,
    pub units: UnitSystem,
    /// `V/ħ` (rad/ms), shared by both components.
    pub potential: Vec<f64>,
    /// Off-diagonal coupling `Ω(y)` (rad/ms); the precession rate is `2Ω`.
    pub coupling: Vec<f64>,
    /// Energy offset `δ` on component 1 (rad/ms).
    pub detuning: f64,
    /// `g_ij/ħ` (µm/ms) for the normalized wavefunction.
    pub g: [[f64; 2]; 2],
}

impl Hamiltonian {
    pub fn free(grid: SpatialGrid, units: UnitSystem) -> Self {
        let n = grid.len();
        Self {
            grid,
            units,
            potential: vec![0.0; n],
            coupling: vec![0.0; n],
            detuning: 0.0,
            g: [[0.0; 2]; 2],
        }
    }

    /// Adds a potential given in velocity-squared units `U = 2V/m` (µm²/ms²).
    pub fn add_u<F: Fn(f64) -> f64>(mut self, u: F) -> Self {
        let hm = self.units.hbar_over_m();
        for (p, y) in self.potential.iter_mut().zip(self.grid.positions()) {
            *p += u(y) / (2.0 * hm);
        }
        self
    }

    pub fn add_harmonic(self, frequency_hz: f64, center: f64) -> Self {
        let w = 2.0 * PI * frequency_hz * 1e-3;
        self.add_u(move |y| (w * (y - center)).powi(2))
    }

    pub fn add_barrier(self, barrier: &PotentialProfile) -> Self {
        self.add_u(|y| barrier.barrier_u(y))
    }

    /// Raman coupling with precession rate `omega_eff` (rad/ms) shaped by `profile`.
    /// Profile values below 1e-18 are dropped so the uncoupled tails take the fast path.
    pub fn with_raman<F: Fn(f64) -> f64>(mut self, omega_eff: f64, profile: F) -> Self {
        for (c, y) in self.coupling.iter_mut().zip(self.grid.positions()) {
            let g = profile(y);
            *c = if g.abs() < 1e-18 { 0.0 } else { 0.5 * omega_eff * g };
        }
        self
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_interactions(mut self, g11: f64, g22: f64, g12: f64) -> Self {
        self.g = [[g11, g12], [g12, g22]];
        self
    }

    /// Largest potential-plus-coupling phase accumulated in one step `dt`.
    pub fn max_potential_phase(&self, dt: f64) -> f64 {
        self.potential
            .iter()
            .zip(&self.coupling)
            .map(|(v, c)| (v.abs() + self.detuning.abs() + c.abs()) * dt)
            .fold(0.0, f64::max)
    }

    /// Energy per particle `E/ħ` (rad/ms).
    pub fn energy(&self, field: &SpinorField) -> f64 {
        let n = self.grid.len();
        let dy = self.grid.dy();
        let hm = self.units.hbar_over_m();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let k = self.grid.wavenumbers();
        let mut kinetic = 0.0;
        for comp in [&field.psi1, &field.psi2] {
            let mut buf = comp.clone();
            fft.process(&mut buf);
            kinetic += buf
                .iter()
                .zip(&k)
                .map(|(z, k)| 0.5 * hm * k * k * z.norm_sqr())
                .sum::<f64>();
        }
        kinetic *= dy / n as f64;
        let mut local = 0.0;
        for i in 0..n {
            let (a, b) = (field.psi1[i], field.psi2[i]);
            let (r1, r2) = (a.norm_sqr(), b.norm_sqr());
            local += self.potential[i] * (r1 + r2)
                + self.detuning * r1
                + 2.0 * self.coupling[i] * (a.conj() * b).re
                + 0.5 * self.g[0][0] * r1 * r1
                + 0.5 * self.g[1][1] * r2 * r2
                + self.g[0][1] * r1 * r2;
        }
        kinetic + local * dy
    }
}

/// Strang-split spectral propagator.
pub struct Stepper {
    ham: Hamiltonian,
    dt: f64,
    kinetic: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    /// `exp(-i V dt/2)` on the grid.
    static_phase: Vec<Complex64>,
    steps: usize,
}

/// Largest potential phase per step a stepper accepts.
pub const MAX_STEP_PHASE: f64 = 0.5;

impl Stepper {
    pub fn new(ham: Hamiltonian, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("time step must be > 0, got {dt}")));
        }
        let phase = ham.max_potential_phase(dt);
        if phase > MAX_STEP_PHASE {
            return Err(Error::Config(format!(
                "potential phase per step is {phase:.3} rad (limit {MAX_STEP_PHASE}); reduce dt"
            )));
        }
        let n = ham.grid.len();
        let hm = ham.units.hbar_over_m();
        let kinetic = ham
            .grid
            .wavenumbers()
            .iter()
            .map(|k| Complex64::from_polar(1.0 / n as f64, -0.5 * hm * k * k * dt))
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let scratch = vec![C0; fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len())];
        let static_phase = ham
            .potential
            .iter()
            .map(|v| Complex64::from_polar(1.0, -0.5 * v * dt))
            .collect();
        Ok(Self {
            ham,
            dt,
            kinetic,
            fft,
            ifft,
            scratch,
            static_phase,
            steps: 0,
        })
    }

    /// Stepper whose step is `dt` or the largest step keeping the potential
    /// phase below the limit, whichever is smaller.
    pub fn with_max_dt(ham: Hamiltonian, dt: f64) -> Result<Self> {
        let rate = ham.max_potential_phase(1.0);
        let safe = if rate > 0.0 { 0.8 * MAX_STEP_PHASE / rate } else { dt };
        Self::new(ham, dt.min(safe))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.ham
    }

    fn local_half_step(&self, f: &mut SpinorField) {
        let tau = 0.5 * self.dt;
        let h = &self.ham;
        let g = h.g;
        let delta0 = h.detuning;
        let fixed = &self.static_phase;
        f.psi1
            .iter_mut()
            .zip(f.psi2.iter_mut())
            .enumerate()
            .for_each(|(i, (a, b))| {
                let (r1, r2) = (a.norm_sqr(), b.norm_sqr());
                let om = h.coupling[i];
                if om == 0.0 {
                    let n1 = (delta0 + g[0][0] * r1 + g[0][1] * r2) * tau;
                    let n2 = (g[1][1] * r2 + g[0][1] * r1) * tau;
                    *a *= fixed[i] * cis_neg(n1);
                    *b *= fixed[i] * cis_neg(n2);
                    return;
                }
                let d1 = h.potential[i] + delta0 + g[0][0] * r1 + g[0][1] * r2;
                let d2 = h.potential[i] + g[1][1] * r2 + g[0][1] * r1;
                let mean = 0.5 * (d1 + d2);
                let half = 0.5 * (d1 - d2);
                let r = (half * half + om * om).sqrt();
                let (c, s) = if r > 0.0 {
                    ((r * tau).cos(), (r * tau).sin() / r)
                } else {
                    (1.0, tau)
                };
                let phase = Complex64::from_polar(1.0, -mean * tau);
                let mi = Complex64::new(0.0, -s);
                let (x, y) = (*a, *b);
                *a = phase * (c * x + mi * (half * x + om * y));
                *b = phase * (c * y + mi * (om * x - half * y));
            });
    }

    fn kinetic_step(&mut self, f: &mut SpinorField) {
        for comp in [&mut f.psi1, &mut f.psi2] {
            self.fft.process_with_scratch(comp, &mut self.scratch);
            for (z, k) in comp.iter_mut().zip(&self.kinetic) {
                *z *= k;
            }
            self.ifft.process_with_scratch(comp, &mut self.scratch);
        }
    }

    pub fn step(&mut self, f: &mut SpinorField) {
        self.local_half_step(f);
        self.kinetic_step(f);
        self.local_half_step(f);
        f.time += self.dt;
        self.steps += 1;
    }

    /// Advances `n` steps, checking for non-finite amplitudes every 100 steps.
    pub fn run(&mut self, f: &mut SpinorField, n: usize) -> Result<()> {
        for i in 0..n {
            self.step(f);
            if (i + 1) % 100 == 0 || i + 1 == n {
                check_finite(f, self.steps)?;
            }
        }
        Ok(())
    }
}

/// `exp(-iθ)`, by Taylor series when the truncation error is below rounding.
#[inline]
fn cis_neg(theta: f64) -> Complex64 {
    if theta.abs() < 1e-2 {
        let t2 = theta * theta;
        let c = 1.0 - 0.5 * t2 * (1.0 - t2 * (1.0 / 12.0) * (1.0 - t2 * (1.0 / 30.0)));
        let s = 1.0 - t2 * (1.0 / 6.0) * (1.0 - t2 * (1.0 / 20.0) * (1.0 - t2 * (1.0 / 42.0)));
        Complex64::new(c, -theta * s)
    } else {
        Complex64::from_polar(1.0, -theta)
    }
}

fn check_finite(f: &SpinorField, step: usize) -> Result<()> {
    let mut max_amplitude: f64 = 0.0;
    let mut bad = false;
    for z in f.psi1.iter().chain(&f.psi2) {
        if !z.is_finite() {
            bad = true;
        } else {
            max_amplitude = max_amplitude.max(z.norm());
        }
    }
    if bad {
        return Err(Error::Instability {
            step,
            max_amplitude,
        });
    }
    Ok(())
}

/// Real-time evolution for `duration` ms with step `dt`.
pub fn evolve(field: &mut SpinorField, ham: &Hamiltonian, dt: f64, duration: f64) -> Result<()> {
    if !(duration >= 0.0) {
        return Err(Error::Config(format!("duration must be >= 0, got {duration}")));
    }
    let n = (duration / dt).round() as usize;
    let mut stepper = Stepper::new(ham.clone(), dt)?;
    stepper.run(field, n)
}

/// Imaginary-time settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundStateOptions {
    pub dt: f64,
    /// Relative energy change per step at convergence.
    pub tolerance: f64,
    /// Bound on `‖(H - µ)ψ‖/|µ|` at convergence.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        Self {
            dt: 2e-3,
            tolerance: 1e-10,
            residual_tolerance: 1e-4,
            max_iterations: 200_000,
        }
    }
}

/// Converged ground state with diagnostics.
#[derive(Debug, Clone)]
pub struct GroundState {
    pub field: SpinorField,
    /// `E/ħ` per particle (rad/ms).
    pub energy: f64,
    /// `µ/ħ` (rad/ms).
    pub chemical_potential: f64,
    pub iterations: usize,
    /// Energy after every step.
    pub energy_history: Vec<f64>,
}

/// Ground state of component 1 in `ham` (coupling ignored) by imaginary-time
/// propagation.
pub fn ground_state(ham: &Hamiltonian, options: &GroundStateOptions) -> Result<SpinorField> {
    Ok(ground_state_detailed(ham, options)?.field)
}

pub fn ground_state_detailed(ham: &Hamiltonian, options: &GroundStateOptions) -> Result<GroundState> {
    if !(options.dt > 0.0) {
        return Err(Error::Config("imaginary time step must be > 0".into()));
    }
    let grid = ham.grid.clone();
    let n = grid.len();
    let dy = grid.dy();
    let hm = ham.units.hbar_over_m();
    let g = ham.g[0][0];
    let k = grid.wavenumbers();
    let kin: Vec<f64> = k.iter().map(|k| (-0.5 * hm * k * k * options.dt).exp() / n as f64).collect();
    let ys = grid.positions();

    let imin = (0..n)
        .min_by(|&a, &b| ham.potential[a].total_cmp(&ham.potential[b]))
        .unwrap_or(0);
    let y0 = ys[imin];
    let width = 0.05 * grid.length();
    let mut psi: Vec<Complex64> = ys
        .iter()
        .map(|y| Complex64::new((-((y - y0) / width).powi(2)).exp(), 0.0))
        .collect();
    normalize(&mut psi, dy);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut spec = vec![C0; n];
    let half = 0.5 * options.dt;
    let edge = (n / 50).max(1);
    let mut history = Vec::new();
    let mut last = f64::INFINITY;
    let mut change = f64::INFINITY;

    for it in 0..options.max_iterations {
        for (z, v) in psi.iter_mut().zip(&ham.potential) {
            *z *= (-(v + g * z.norm_sqr()) * half).exp();
        }
        normalize(&mut psi, dy);
        fft.process(&mut psi);
        for (z, k) in psi.iter_mut().zip(&kin) {
            *z *= k;
        }
        ifft.process(&mut psi);
        normalize(&mut psi, dy);
        for (z, v) in psi.iter_mut().zip(&ham.potential) {
            *z *= (-(v + g * z.norm_sqr()) * half).exp();
        }
        normalize(&mut psi, dy);
        if psi.iter().any(|z| !z.is_finite()) {
            return Err(Error::Instability {
                step: it,
                max_amplitude: f64::NAN,
            });
        }

        spec.copy_from_slice(&psi);
        fft.process(&mut spec);
        let kinetic: f64 = spec
            .iter()
            .zip(&k)
            .map(|(z, k)| 0.5 * hm * k * k * z.norm_sqr())
            .sum::<f64>()
            * dy
            / n as f64;
        let (mut pot, mut inter) = (0.0, 0.0);
        for (z, v) in psi.iter().zip(&ham.potential) {
            let r = z.norm_sqr();
            pot += v * r;
            inter += 0.5 * g * r * r;
        }
        let energy = kinetic + (pot + inter) * dy;
        history.push(energy);
        change = ((energy - last) / energy).abs();
        last = energy;

        let peak = psi.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let edge_density = psi[..edge]
            .iter()
            .chain(&psi[n - edge..])
            .map(|z| z.norm_sqr())
            .fold(0.0, f64::max);
        if change < options.tolerance
            && edge_density < 1e-8 * peak
            && residual(&psi, &spec, ham, &k, &ifft) < options.residual_tolerance
        {
            let mut field = SpinorField::zeros(grid.clone());
            field.psi1 = psi;
            return Ok(GroundState {
                field,
                energy,
                chemical_potential: kinetic + (pot + 2.0 * inter) * dy,
                iterations: it + 1,
                energy_history: history,
            });
        }
    }
    Err(Error::Divergence {
        iterations: options.max_iterations,
        last_change: change,
    })
}

/// `‖(H - µ)ψ‖/|µ|` for normalized `psi` with spectrum `spec`.
fn residual(
    psi: &[Complex64],
    spec: &[Complex64],
    ham: &Hamiltonian,
    k: &[f64],
    ifft: &Arc<dyn Fft<f64>>,
) -> f64 {
    let n = psi.len();
    let hm = ham.units.hbar_over_m();
    let dy = ham.grid.dy();
    let g = ham.g[0][0];
    let mut h: Vec<Complex64> = spec
        .iter()
        .zip(k)
        .map(|(z, k)| z * (0.5 * hm * k * k / n as f64))
        .collect();
    ifft.process(&mut h);
    for ((hz, z), v) in h.iter_mut().zip(psi).zip(&ham.potential) {
        *hz += z * (v + g * z.norm_sqr());
    }
    let mu: f64 = h.iter().zip(psi).map(|(a, b)| (b.conj() * a).re).sum::<f64>() * dy;
    let r2: f64 = h.iter().zip(psi).map(|(a, b)| (a - b * mu).norm_sqr()).sum::<f64>() * dy;
    r2.sqrt() / mu.abs()
}

fn normalize(psi: &mut [Complex64], dy: f64) {
    let n = (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * dy).sqrt();
    if n > 0.0 {
        for z in psi.iter_mut() {
            *z /= n;
        }
    }
}

/// Multiplies both components by `exp(i m v0 y / ħ)`.
pub fn apply_velocity_kick(field: &mut SpinorField, v0: f64, units: &UnitSystem) -> Result<()> {
    let nyquist = PI * units.hbar_over_m() / field.grid.dy();
    if v0.abs() > nyquist {
        return Err(Error::Aliasing(format!(
            "kick of {v0} mm/s exceeds the grid's Nyquist velocity {nyquist:.3} mm/s"
        )));
    }
    if v0 == 0.0 {
        return Ok(());
    }
    let k0 = units.wavenumber(v0);
    for (i, y) in field.grid.positions().into_iter().enumerate() {
        let p = Complex64::from_polar(1.0, k0 * y);
        field.psi1[i] *= p;
        field.psi2[i] *= p;
    }
    Ok(())
}

/// Which components enter a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentMask {
    First,
    Second,
    #[default]
    Both,
}

/// Mean velocity and rms width (mm/s) of the momentum distribution of the
/// part of `field` inside `[a, b]`.
pub fn momentum_stats(
    field: &SpinorField,
    mask: ComponentMask,
    region: (f64, f64),
    units: &UnitSystem,
) -> Result<(f64, f64)> {
    let n = field.len();
    let ys = field.grid.positions();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let k = field.grid.wavenumbers();
    let comps: Vec<&Vec<Complex64>> = match mask {
        ComponentMask::First => vec![&field.psi1],
        ComponentMask::Second => vec![&field.psi2],
        ComponentMask::Both => vec![&field.psi1, &field.psi2],
    };
    let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
    let mut region_norm = 0.0;
    for comp in comps {
        let mut buf: Vec<Complex64> = comp
            .iter()
            .zip(&ys)
            .map(|(z, y)| if *y >= region.0 && *y <= region.1 { *z } else { C0 })
            .collect();
        region_norm += buf.iter().map(|z| z.norm_sqr()).sum::<f64>() * field.grid.dy();
        fft.process(&mut buf);
        for (z, k) in buf.iter().zip(&k) {
            let p = z.norm_sqr();
            w += p;
            m1 += p * k;
            m2 += p * k * k;
        }
    }
    if !(region_norm >= 1e-12) {
        return Err(Error::DegenerateStatistics { norm: region_norm });
    }
    let hm = units.hbar_over_m();
    let mean = m1 / w;
    Ok((mean * hm, (m2 / w - mean * mean).max(0.0).sqrt() * hm))
}

/// Distribution of the speed each part of `field` inside `region` has when
/// it reaches the plane `y = plane` in a harmonic guide of angular frequency
/// `omega` (rad/ms) centred at `guide_center`.
///
/// The Wigner function of the region is mapped through energy conservation,
/// `v_p² = v² + ω²((y - c)² - (y_p - c)²)`, and binned with width `bin`.
pub fn arrival_velocity_histogram(
    field: &SpinorField,
    region: (f64, f64),
    plane: f64,
    omega: f64,
    guide_center: f64,
    units: &UnitSystem,
    bin: f64,
) -> Result<VelocityDistribution> {
    let (mean_v, _) = momentum_stats(field, ComponentMask::Both, region, units)?;
    let hm = units.hbar_over_m();
    let k_bar = mean_v / hm;
    let grid = &field.grid;
    let n = grid.len();
    let dy = grid.dy();
    let ys = grid.positions();
    let inside: Vec<bool> = ys.iter().map(|y| *y >= region.0 && *y <= region.1).collect();
    let rho = field.density();
    let peak = rho
        .iter()
        .zip(&inside)
        .filter(|(_, i)| **i)
        .map(|(r, _)| *r)
        .fold(0.0, f64::max);
    let m = 2048.min(n);
    let dk = PI / (m as f64 * dy);
    let plane_term = (plane - guide_center).powi(2);
    let rows: Vec<usize> = (0..n).filter(|&j| inside[j] && rho[j] > 1e-12 * peak).collect();

    let partial: Vec<Vec<(f64, f64)>> = rows
        .par_chunks(64)
        .map(|chunk| {
            let fft = FftPlanner::new().plan_fft_forward(m);
            let mut buf = vec![C0; m];
            let mut out = Vec::with_capacity(chunk.len() * m / 4);
            for &j in chunk {
                for (s, slot) in buf.iter_mut().enumerate() {
                    let off = if s < m / 2 { s as isize } else { s as isize - m as isize };
                    let jp = j as isize + off;
                    let jm = j as isize - off;
                    *slot = if jp >= 0 && jm >= 0 && (jp as usize) < n && (jm as usize) < n
                        && inside[jp as usize] && inside[jm as usize]
                    {
                        let (p, q) = (jp as usize, jm as usize);
                        let prod = field.psi1[p] * field.psi1[q].conj()
                            + field.psi2[p] * field.psi2[q].conj();
                        prod * Complex64::from_polar(1.0, -2.0 * k_bar * off as f64 * dy)
                    } else {
                        C0
                    };
                }
                fft.process(&mut buf);
                let pot = omega * omega * ((ys[j] - guide_center).powi(2) - plane_term);
                for (l, z) in buf.iter().enumerate() {
                    let li = if l < m / 2 { l as f64 } else { l as f64 - m as f64 };
                    let v = hm * (k_bar + li * dk);
                    let v2 = v * v + pot;
                    let vp = v.signum() * v2.max(0.0).sqrt();
                    // W dy dk with W = (dy/π) Re F
                    out.push((vp, z.re * dy / PI * dy * dk));
                }
            }
            out
        })
        .collect();

    // only parts moving toward the plane are counted
    let samples: Vec<(f64, f64)> = partial
        .into_iter()
        .flatten()
        .filter(|(v, w)| *v > 0.0 && *w != 0.0)
        .collect();
    let v_max = samples.iter().map(|(v, _)| *v).fold(0.0, f64::max);
    let nb = (v_max / bin).floor() as usize + 1;
    let mut weights = vec![0.0; nb];
    for (v, w) in samples {
        weights[((v / bin).floor() as usize).min(nb - 1)] += w;
    }
    let peak_bin = weights.iter().cloned().fold(0.0, f64::max);
    if !(peak_bin > 0.0) {
        return Err(Error::DegenerateStatistics { norm: 0.0 });
    }
    let keep = |w: &f64| *w > 1e-7 * peak_bin;
    let first = weights.iter().position(keep).unwrap_or(0);
    let last = weights.iter().rposition(keep).unwrap_or(nb - 1);
    let centers: Vec<f64> = (first..=last).map(|i| (i as f64 + 0.5) * bin).collect();
    let weights: Vec<f64> = weights[first..=last].iter().map(|w| w.max(0.0)).collect();
    VelocityDistribution::histogram(centers, weights)
}

/// Release, expansion and harmonic lens pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensPlan {
    /// Frequency of the crossed trap holding the initial condensate (Hz).
    pub crossed_trap_hz: f64,
    /// Free expansion in the waveguide after release (ms).
    pub expansion_ms: f64,
    /// Frequency of the harmonic lens pulse (Hz).
    pub lens_hz: f64,
    /// Lens pulse duration (ms); the calibration knob.
    pub lens_ms: f64,
}

impl Default for LensPlan {
    fn default() -> Self {
        Self {
            crossed_trap_hz: 50.0,
            expansion_ms: 20.0,
            lens_hz: 10.0,
            lens_ms: 1.3,
        }
    }
}

/// Parameters of one simulated Larmor experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub units: UnitSystem,
    pub y_min: f64,
    pub y_max: f64,
    pub n_points: usize,
    /// Longitudinal waveguide frequency (Hz).
    pub waveguide_hz: f64,
    /// Transverse trap frequency (Hz), used for the 1D interaction strength.
    pub transverse_hz: f64,
    pub barrier_height: f64,
    pub barrier_sigma: f64,
    pub barrier_center: f64,
    /// Effective Larmor frequency `Ω_eff/2π` (Hz).
    pub omega_eff_hz: f64,
    /// Detuning `δ/2π` (Hz).
    pub detuning_hz: f64,
    pub atom_number: f64,
    /// `a_11, a_22, a_12` in Bohr radii.
    pub scattering_lengths_a0: [f64; 3],
    /// Packet centroid relative to the barrier at kick time (µm).
    pub initial_offset: f64,
    /// Mean speed on reaching the barrier centre (mm/s).
    pub v0: f64,
    pub dt: f64,
    /// Longest collision stage (ms after the kick).
    pub max_time: f64,
    pub lens: LensPlan,
    /// Times (ms after the kick) at which to keep copies of the field.
    pub snapshot_times: Vec<f64>,
    pub ground_state: GroundStateOptions,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            units: UnitSystem::default(),
            y_min: -600.0,
            y_max: 600.0,
            n_points: 8192,
            waveguide_hz: 2.5,
            transverse_hz: 250.0,
            barrier_height: 4.71,
            barrier_sigma: 1.3,
            barrier_center: 0.0,
            omega_eff_hz: 200.0,
            detuning_hz: 0.0,
            atom_number: 3000.0,
            scattering_lengths_a0: [100.0; 3],
            initial_offset: -150.0,
            v0: 4.26,
            dt: 5e-3,
            max_time: 150.0,
            lens: LensPlan::default(),
            snapshot_times: Vec::new(),
            ground_state: GroundStateOptions::default(),
        }
    }
}

impl SimulationPlan {
    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.y_min, self.y_max, self.n_points)
    }

    pub fn barrier(&self) -> Result<PotentialProfile> {
        PotentialProfile::gaussian_at(self.barrier_height, self.barrier_sigma, self.barrier_center)
    }

    pub fn omega_eff(&self) -> f64 {
        2.0 * PI * self.omega_eff_hz * 1e-3
    }

    pub fn waveguide_omega(&self) -> f64 {
        2.0 * PI * self.waveguide_hz * 1e-3
    }

    /// `g_ij/ħ = 2 ω_⊥ a_ij N` (µm/ms) as `(g11, g22, g12)`.
    pub fn interaction_strengths(&self) -> (f64, f64, f64) {
        let w = 2.0 * PI * self.transverse_hz * 1e-3;
        let g = |a: f64| 2.0 * w * a * BOHR_RADIUS_UM * self.atom_number;
        let [a11, a22, a12] = self.scattering_lengths_a0;
        (g(a11), g(a22), g(a12))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.v0 > 0.0) {
            return Err(Error::Config(format!("v0 must be > 0, got {}", self.v0)));
        }
        if !(self.barrier_sigma > 0.0) || !(self.barrier_height >= 0.0) {
            return Err(Error::Config("barrier needs sigma > 0 and height >= 0".into()));
        }
        if !(self.atom_number >= 0.0) || !(self.waveguide_hz > 0.0) || !(self.transverse_hz > 0.0) {
            return Err(Error::Config("atom number and trap frequencies must be positive".into()));
        }
        if self.lens.lens_ms < 0.0 || self.lens.expansion_ms < 0.0 || !(self.lens.crossed_trap_hz > 0.0) {
            return Err(Error::Config("lens stage durations must be >= 0".into()));
        }
        let c = self.barrier_center;
        let s = self.barrier_sigma;
        if c - 5.0 * s < grid.y_min() || c + 5.0 * s > grid.y_max() {
            return Err(Error::Config("grid must cover the barrier out to ±5σ".into()));
        }
        let start = c + self.initial_offset;
        if !grid.contains(start) {
            return Err(Error::Config(format!("initial position {start} lies outside the grid")));
        }
        // time to reach the barrier plus the time for a packet to clear it
        let transit = self.initial_offset.abs() / self.v0;
        if self.max_time < transit {
            return Err(Error::Config(format!(
                "max_time {} ms does not cover the {transit:.1} ms transit to the barrier",
                self.max_time
            )));
        }
        let phase = self.collision_hamiltonian()?.max_potential_phase(self.dt);
        if phase > MAX_STEP_PHASE {
            return Err(Error::Config(format!(
                "potential phase per step {phase:.3} rad exceeds {MAX_STEP_PHASE}; reduce dt"
            )));
        }
        Ok(())
    }

    fn base_hamiltonian(&self) -> Result<Hamiltonian> {
        let (g11, g22, g12) = self.interaction_strengths();
        Ok(Hamiltonian::free(self.grid()?, self.units)
            .add_harmonic(self.waveguide_hz, self.barrier_center)
            .with_interactions(g11, g22, g12))
    }

    /// Waveguide only: free flight toward the barrier.
    pub fn waveguide_hamiltonian(&self) -> Result<Hamiltonian> {
        self.base_hamiltonian()
    }

    /// Waveguide, barrier and Raman probe.
    pub fn collision_hamiltonian(&self) -> Result<Hamiltonian> {
        let barrier = self.barrier()?;
        let detuning = 2.0 * PI * self.detuning_hz * 1e-3;
        Ok(self
            .base_hamiltonian()?
            .add_barrier(&barrier)
            .with_raman(self.omega_eff(), |y| barrier.shape(y))
            .with_detuning(detuning))
    }

    /// Centre of the crossed trap that leaves the cloud at the requested
    /// offset after the expansion stage.
    fn trap_center(&self) -> f64 {
        let phase = self.waveguide_omega() * self.lens.expansion_ms;
        let c = phase.cos();
        let offset = if c.abs() > 0.1 { self.initial_offset / c } else { self.initial_offset };
        self.barrier_center + offset
    }
}

/// Condensate in the crossed trap, ready for release.
pub fn initial_ground_state(plan: &SimulationPlan) -> Result<SpinorField> {
    let ham = plan
        .base_hamiltonian()?
        .add_harmonic(plan.lens.crossed_trap_hz, plan.trap_center());
    let mut field = ground_state(&ham, &plan.ground_state)?;
    field.atom_number = plan.atom_number;
    Ok(field)
}

/// Free expansion in the waveguide followed by the lens pulse.
pub fn matter_wave_lens(field: &SpinorField, plan: &SimulationPlan) -> Result<SpinorField> {
    let mut f = field.clone();
    let guide = plan.waveguide_hamiltonian()?;
    let n = (plan.lens.expansion_ms / plan.dt).round() as usize;
    Stepper::new(guide, plan.dt)?.run(&mut f, n)?;
    apply_lens_pulse(&f, plan, plan.lens.lens_ms)
}

/// Harmonic lens pulse centred on the cloud; a zero duration returns the field unchanged.
pub fn apply_lens_pulse(field: &SpinorField, plan: &SimulationPlan, duration: f64) -> Result<SpinorField> {
    let mut f = field.clone();
    if duration <= 0.0 {
        return Ok(f);
    }
    let center = f.centroid();
    let ham = plan
        .waveguide_hamiltonian()?
        .add_harmonic(plan.lens.lens_hz, center);
    let steps = (duration / plan.dt).ceil().max(1.0);
    let mut stepper = Stepper::with_max_dt(ham.clone(), duration / steps)?;
    let n = (duration / stepper.dt()).round() as usize;
    let dt = duration / n as f64;
    if (dt - stepper.dt()).abs() > 1e-15 {
        stepper = Stepper::new(ham, dt)?;
    }
    stepper.run(&mut f, n)?;
    Ok(f)
}

/// Kick that brings the centroid to the barrier centre at speed `v0`.
pub fn kick_for_arrival(field: &SpinorField, plan: &SimulationPlan) -> Result<f64> {
    let y = field.centroid() - plan.barrier_center;
    let (v_mean, _) = momentum_stats(field, ComponentMask::Both, (f64::NEG_INFINITY, f64::INFINITY), &plan.units)?;
    let w = plan.waveguide_omega();
    let v2 = plan.v0 * plan.v0 - w * w * y * y;
    if !(v2 > 0.0) {
        return Err(Error::Domain(format!(
            "v0 = {} mm/s is below the guide's turning-point speed at {y:.1} µm",
            plan.v0
        )));
    }
    Ok(v2.sqrt() - v_mean)
}

/// Incident-packet statistics at the moment its centroid reaches the
/// barrier centre in a barrier-free copy of the run.
#[derive(Debug, Clone)]
pub struct IncidentStats {
    /// Time after the kick (ms).
    pub time: f64,
    pub mean_velocity: f64,
    /// Momentum-space rms (mm/s).
    pub rms_velocity: f64,
    /// Speed distribution on reaching the barrier centre.
    pub arrival: VelocityDistribution,
}

/// Width of velocity histogram bins (mm/s).
const HISTOGRAM_BIN: f64 = 0.01;

pub fn incident_stats(kicked: &SpinorField, plan: &SimulationPlan) -> Result<IncidentStats> {
    let mut f = kicked.clone();
    let t0 = f.time;
    let mut stepper = Stepper::new(plan.waveguide_hamiltonian()?, plan.dt)?;
    let c = plan.barrier_center;
    let max_steps = (plan.max_time / plan.dt).ceil() as usize;
    let mut prev = f.clone();
    for _ in 0..max_steps {
        if f.centroid() >= c {
            // take whichever of the bracketing steps sits closer to the centre
            if (prev.centroid() - c).abs() < (f.centroid() - c).abs() {
                f = prev;
            }
            let all = (f64::NEG_INFINITY, f64::INFINITY);
            let (mean_velocity, rms_velocity) = momentum_stats(&f, ComponentMask::Both, all, &plan.units)?;
            let arrival = arrival_velocity_histogram(
                &f,
                (f.grid.y_min(), f.grid.y_max()),
                c,
                plan.waveguide_omega(),
                c,
                &plan.units,
                HISTOGRAM_BIN,
            )?;
            return Ok(IncidentStats {
                time: f.time - t0,
                mean_velocity,
                rms_velocity,
                arrival,
            });
        }
        prev.clone_from(&f);
        stepper.run(&mut f, 1)?;
    }
    Err(Error::InconclusiveRun {
        reason: "packet never reached the barrier".into(),
        suggested_ms: 2.0 * plan.max_time,
    })
}

/// Lens duration giving incident rms width `target` (mm/s) at speed `v_star`.
pub fn calibrate_lens(plan: &SimulationPlan, target: f64, v_star: f64) -> Result<f64> {
    calibrate_lens_from(plan, &initial_ground_state(plan)?, target, v_star)
}

/// As [`calibrate_lens`], starting from an already computed trap ground state.
pub fn calibrate_lens_from(
    plan: &SimulationPlan,
    ground: &SpinorField,
    target: f64,
    v_star: f64,
) -> Result<f64> {
    let mut p = plan.clone();
    p.v0 = v_star;
    let mut expanded = ground.clone();
    Stepper::new(p.waveguide_hamiltonian()?, p.dt)?.run(&mut expanded, (p.lens.expansion_ms / p.dt).round() as usize)?;
    let width = |tau: f64| -> Result<f64> {
        let mut f = apply_lens_pulse(&expanded, &p, tau)?;
        f.time = 0.0;
        let kick = kick_for_arrival(&f, &p)?;
        apply_velocity_kick(&mut f, kick, &p.units)?;
        Ok(incident_stats(&f, &p)?.rms_velocity - target)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut f_lo = width(lo)?;
    let mut f_hi = width(hi)?;
    while f_lo.signum() == f_hi.signum() {
        if hi >= 8.0 {
            return Err(Error::Calibration(format!(
                "lens durations up to {hi} ms do not bracket the target width {target} mm/s"
            )));
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = width(hi)?;
    }
    for _ in 0..40 {
        // regula falsi with bisection fallback
        let mut mid = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let fm = width(mid)?;
        if fm.abs() < 1e-4 || hi - lo < 1e-4 {
            return Ok(mid);
        }
        if fm.signum() == f_lo.signum() {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Prepared packet at kick time (before the kick).
pub fn prepare_packet(plan: &SimulationPlan) -> Result<SpinorField> {
    let ground = initial_ground_state(plan)?;
    let mut f = matter_wave_lens(&ground, plan)?;
    f.time = 0.0;
    Ok(f)
}

/// Outcome of a simulated Larmor experiment.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub v0: f64,
    pub transmission: f64,
    pub reflection: f64,
    pub bloch: BlochVector,
    /// `(θ_y, α_z)` of the transmitted packet.
    pub angles: Option<(f64, f64)>,
    pub times: Option<LarmorTimes>,
    pub incident: IncidentStats,
    /// Mean and rms speed of the transmitted packet as it leaves the barrier.
    pub transmitted_mean: f64,
    pub transmitted_rms: f64,
    /// Speed distribution of the transmitted packet as it leaves the barrier.
    pub transmitted: VelocityDistribution,
    /// Collision-stage duration (ms after the kick).
    pub final_time: f64,
    pub snapshots: Vec<SpinorField>,
}

/// Full pipeline: ground state, lens, kick, collision, extraction.
pub fn run_larmor_experiment(plan: &SimulationPlan) -> Result<SimResult> {
    plan.validate()?;
    let prepared = prepare_packet(plan)?;
    run_from_prepared(plan, &prepared)
}

/// Kick and collision stages from a prepared (un-kicked) packet.
pub fn run_from_prepared(plan: &SimulationPlan, prepared: &SpinorField) -> Result<SimResult> {
    plan.validate()?;
    let mut f = prepared.clone();
    f.time = 0.0;
    let kick = kick_for_arrival(&f, plan)?;
    apply_velocity_kick(&mut f, kick, &plan.units)?;
    let incident = incident_stats(&f, plan)?;

    let c = plan.barrier_center;
    let s = plan.barrier_sigma;
    let cut = 4.0 * s;
    let grid = f.grid.clone();
    let mut stepper = Stepper::new(plan.collision_hamiltonian()?, plan.dt)?;
    let check_every = ((1.0 / plan.dt).round() as usize).max(1);
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = plan.snapshot_times.clone();
    pending.sort_by(|a, b| a.total_cmp(b));
    pending.reverse();
    let total_steps = (plan.max_time / plan.dt).ceil() as usize;
    let edge = 0.05 * grid.length();

    let mut step = 0;
    while step < total_steps {
        let n = check_every.min(total_steps - step);
        for _ in 0..n {
            stepper.step(&mut f);
            while let Some(&t) = pending.last() {
                if f.time + 0.5 * plan.dt >= t {
                    snapshots.push(f.clone());
                    pending.pop();
                } else {
                    break;
                }
            }
        }
        check_finite(&f, step + n)?;
        step += n;
        if f.time < incident.time {
            continue;
        }
        if separated(&f, c, cut)? {
            let edge_norm = f.region_norm(grid.y_min(), grid.y_min() + edge)
                + f.region_norm(grid.y_max() - edge, grid.y_max());
            if edge_norm > 1e-6 {
                return Err(Error::Resolution(format!(
                    "norm {edge_norm:.2e} reached the grid edges; enlarge the grid"
                )));
            }
            return extract(plan, f, incident, snapshots);
        }
    }
    Err(Error::InconclusiveRun {
        reason: format!(
            "transmitted and reflected packets not separated after {} ms",
            plan.max_time
        ),
        suggested_ms: 1.5 * plan.max_time,
    })
}

/// Transmitted and reflected packets are clear of the barrier and apart by
/// more than four times their mean width.
fn separated(f: &SpinorField, c: f64, cut: f64) -> Result<bool> {
    if f.region_norm(c - cut, c + cut) > 1e-6 {
        return Ok(false);
    }
    let g = &f.grid;
    let t_norm = f.region_norm(c + cut, g.y_max());
    let r_norm = f.region_norm(g.y_min(), c - cut);
    if t_norm < 1e-9 || r_norm < 1e-9 {
        return Ok(true);
    }
    let (yt, st) = f.position_stats(c + cut, g.y_max())?;
    let (yr, sr) = f.position_stats(g.y_min(), c - cut)?;
    Ok(yt - yr > 4.0 * 0.5 * (st + sr))
}

fn extract(
    plan: &SimulationPlan,
    f: SpinorField,
    incident: IncidentStats,
    snapshots: Vec<SpinorField>,
) -> Result<SimResult> {
    let c = plan.barrier_center;
    let cut = 4.0 * plan.barrier_sigma;
    let g = f.grid.clone();
    let transmitted_region = (c + cut, g.y_max());
    let transmission = f.region_norm(transmitted_region.0, transmitted_region.1);
    let reflection = f.region_norm(g.y_min(), c - cut);
    let bloch = spin::bloch_from_spinor(&f, transmitted_region)?;
    let angles = spin::angles_from_bloch(&bloch).ok();
    let omega = plan.omega_eff();
    let times = match angles {
        Some((theta, alpha)) if omega > 0.0 => Some(spin::times_from_angles(theta, alpha, omega)?),
        _ => None,
    };
    let transmitted = arrival_velocity_histogram(
        &f,
        transmitted_region,
        c,
        plan.waveguide_omega(),
        c,
        &plan.units,
        HISTOGRAM_BIN,
    )?;
    Ok(SimResult {
        v0: plan.v0,
        transmission,
        reflection,
        bloch,
        angles,
        times,
        incident,
        transmitted_mean: transmitted.mean(),
        transmitted_rms: transmitted.rms(),
        transmitted,
        final_time: f.time,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    #[test]
    fn kick_shifts_mean_velocity_exactly() {
        let grid = SpatialGrid::new(-200.0, 200.0, 4096).unwrap();
        let mut f = SpinorField::gaussian(grid, 0.0, 10.0, 0.0, &units());
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        let (m0, r0) = momentum_stats(&f, ComponentMask::Both, all, &units()).unwrap();
        assert!(m0.abs() < 1e-12);
        apply_velocity_kick(&mut f, 4.26, &units()).unwrap();
        let (m1, r1) = momentum_stats(&f, ComponentMask::Both, all, &units()).unwrap();
        assert!((m1 - 4.26).abs() < 1e-9, "{m1}");
        assert!((r1 - r0).abs() < 1e-9);
    }

    #[test]
    fn zero_kick_and_additivity() {
        let grid = SpatialGrid::new(-100.0, 100.0, 1024).unwrap();
        let f0 = SpinorField::gaussian(grid, 5.0, 8.0, 0.3, &units());
        let mut f = f0.clone();
        apply_velocity_kick(&mut f, 0.0, &units()).unwrap();
        assert_eq!(f, f0);
        let mut a = f0.clone();
        apply_velocity_kick(&mut a, 1.2, &units()).unwrap();
        apply_velocity_kick(&mut a, 2.3, &units()).unwrap();
        let mut b = f0.clone();
        apply_velocity_kick(&mut b, 3.5, &units()).unwrap();
        for (x, y) in a.psi1.iter().zip(&b.psi1) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn kick_beyond_nyquist_is_rejected() {
        let grid = SpatialGrid::new(-100.0, 100.0, 256).unwrap();
        let mut f = SpinorField::gaussian(grid, 0.0, 8.0, 0.0, &units());
        let nyq = PI * units().hbar_over_m() / f.grid.dy();
        assert!(matches!(apply_velocity_kick(&mut f, 1.01 * nyq, &units()), Err(Error::Aliasing(_))));
    }

    #[test]
    fn empty_region_statistics() {
        let grid = SpatialGrid::new(-100.0, 100.0, 256).unwrap();
        let f = SpinorField::gaussian(grid, -50.0, 2.0, 0.0, &units());
        let err = momentum_stats(&f, ComponentMask::Both, (50.0, 100.0), &units()).unwrap_err();
        assert!(matches!(err, Error::DegenerateStatistics { .. }));
    }

    #[test]
    fn plane_wave_packet_mean() {
        let grid = SpatialGrid::new(-200.0, 200.0, 2048).unwrap();
        let f = SpinorField::gaussian(grid, 0.0, 15.0, 3.3, &units());
        let (m, _) = momentum_stats(&f, ComponentMask::First, (-200.0, 200.0), &units()).unwrap();
        assert!((m - 3.3).abs() < 1e-6);
    }

    #[test]
    fn harmonic_ground_state_width() {
        let grid = SpatialGrid::new(-40.0, 40.0, 1024).unwrap();
        let nu = 50.0;
        let ham = Hamiltonian::free(grid, units()).add_harmonic(nu, 0.0);
        let opts = GroundStateOptions {
            dt: 2e-4,
            tolerance: 1e-13,
            residual_tolerance: 1e-9,
            max_iterations: 400_000,
        };
        let gs = ground_state_detailed(&ham, &opts).unwrap();
        let (_, rms) = gs.field.position_stats(-40.0, 40.0).unwrap();
        let w = 2.0 * PI * nu * 1e-3;
        let expected = (units().hbar_over_m() / (2.0 * w)).sqrt();
        assert!((rms - expected).abs() / expected < 1e-6, "{rms} vs {expected}");
        for pair in gs.energy_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-14));
        }
    }

    #[test]
    fn thomas_fermi_limit() {
        let grid = SpatialGrid::new(-60.0, 60.0, 2048).unwrap();
        let g = 2000.0;
        let ham = Hamiltonian::free(grid, units())
            .add_harmonic(50.0, 0.0)
            .with_interactions(g, g, g);
        let gs = ground_state_detailed(&ham, &GroundStateOptions::default()).unwrap();
        let mu = gs.chemical_potential;
        let rho = gs.field.density();
        let peak = rho.iter().cloned().fold(0.0, f64::max);
        let mut checked = 0;
        for (r, v) in rho.iter().zip(&ham.potential) {
            let tf = (mu - v) / g;
            if tf > 0.3 * peak {
                assert!((r - tf).abs() / tf < 0.02, "{r} vs {tf}");
                checked += 1;
            }
        }
        assert!(checked > 50);
        for pair in gs.energy_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn flat_potential_does_not_converge() {
        let grid = SpatialGrid::new(-20.0, 20.0, 256).unwrap();
        let ham = Hamiltonian::free(grid, units());
        let opts = GroundStateOptions {
            max_iterations: 2000,
            ..GroundStateOptions::default()
        };
        assert!(matches!(ground_state(&ham, &opts), Err(Error::Divergence { .. })));
    }

    #[test]
    fn free_dispersion() {
        let grid = SpatialGrid::new(-300.0, 300.0, 4096).unwrap();
        let s0 = 5.0;
        let mut f = SpinorField::gaussian(grid.clone(), 0.0, s0, 0.0, &units());
        let ham = Hamiltonian::free(grid, units());
        evolve(&mut f, &ham, 5e-3, 50.0).unwrap();
        let (_, s) = f.position_stats(-300.0, 300.0).unwrap();
        let hm = units().hbar_over_m();
        let expected = s0 * (1.0 + (hm * 50.0 / (2.0 * s0 * s0)).powi(2)).sqrt();
        assert!((s - expected).abs() / expected < 1e-4, "{s} vs {expected}");
    }

    #[test]
    fn harmonic_oscillation_period() {
        let grid = SpatialGrid::new(-200.0, 200.0, 1024).unwrap();
        let ham = Hamiltonian::free(grid.clone(), units()).add_harmonic(2.5, 0.0);
        let mut f = SpinorField::gaussian(grid, -60.0, 15.0, 0.0, &units());
        let mut stepper = Stepper::new(ham, 0.05).unwrap();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            stepper.step(&mut f);
            ys.push((f.time, f.centroid()));
        }
        // back at the left turning point after one period
        let (t_turn, _) = ys
            .iter()
            .filter(|(t, _)| *t > 200.0)
            .fold((0.0, f64::INFINITY), |acc, &(t, y)| if y < acc.1 { (t, y) } else { acc });
        assert!((t_turn - 400.0).abs() / 400.0 < 0.005, "period {t_turn}");
    }

    #[test]
    fn uniform_coupling_precesses_at_omega_eff() {
        let grid = SpatialGrid::new(-100.0, 100.0, 512).unwrap();
        let omega = 2.0 * PI * 0.2;
        let ham = Hamiltonian::free(grid.clone(), units()).with_raman(omega, |_| 1.0);
        let mut f = SpinorField::gaussian(grid, 0.0, 10.0, 0.0, &units());
        let t = 0.625;
        evolve(&mut f, &ham, 5e-3, t).unwrap();
        let b = spin::bloch_from_spinor(&f, (-100.0, 100.0)).unwrap();
        let (theta, alpha) = spin::angles_from_bloch(&b).unwrap();
        assert!((theta - omega * t).abs() < 1e-6, "{theta} vs {}", omega * t);
        assert!(alpha.abs() < 1e-9);
    }

    #[test]
    fn norm_is_conserved() {
        let plan = SimulationPlan::default();
        let grid = plan.grid().unwrap();
        let mut f = SpinorField::gaussian(grid, -20.0, 8.0, 4.5, &units());
        let mut stepper = Stepper::new(plan.collision_hamiltonian().unwrap(), plan.dt).unwrap();
        let n0 = f.norm();
        stepper.run(&mut f, 10_000).unwrap();
        assert!((f.norm() - n0).abs() < 1e-9, "drift {:e}", f.norm() - n0);
    }

    #[test]
    fn energy_is_conserved_without_interactions() {
        let grid = SpatialGrid::new(-200.0, 200.0, 2048).unwrap();
        let barrier = PotentialProfile::gaussian(4.71, 1.3).unwrap();
        let ham = Hamiltonian::free(grid.clone(), units())
            .add_harmonic(2.5, 0.0)
            .add_barrier(&barrier);
        let mut f = SpinorField::gaussian(grid, -60.0, 12.0, 4.5, &units());
        let e0 = ham.energy(&f);
        evolve(&mut f, &ham, 1e-3, 30.0).unwrap();
        let e1 = ham.energy(&f);
        assert!(((e1 - e0) / e0).abs() < 1e-7, "{e0} -> {e1}");
    }

    #[test]
    fn time_step_must_respect_phase_limit() {
        let grid = SpatialGrid::new(-400.0, 400.0, 1024).unwrap();
        let ham = Hamiltonian::free(grid, units()).add_harmonic(50.0, 0.0);
        assert!(matches!(Stepper::new(ham, 5e-3), Err(Error::Config(_))));
    }

    #[test]
    fn snapshot_csv_layout() {
        let grid = SpatialGrid::new(-1.0, 1.0, 4).unwrap();
        let f = SpinorField::gaussian(grid, 0.0, 0.5, 0.0, &units());
        let mut out = Vec::new();
        f.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "y_um,re_psi1,im_psi1,re_psi2,im_psi2");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn arrival_histogram_of_a_free_packet_matches_momentum_space() {
        let grid = SpatialGrid::new(-200.0, 200.0, 2048).unwrap();
        let f = SpinorField::gaussian(grid, 0.0, 20.0, 4.0, &units());
        let all = (-200.0, 200.0);
        let h = arrival_velocity_histogram(&f, all, 0.0, 0.0, 0.0, &units(), 0.005).unwrap();
        let (m, r) = momentum_stats(&f, ComponentMask::Both, all, &units()).unwrap();
        assert!((h.mean() - m).abs() < 1e-3, "{} vs {m}", h.mean());
        assert!((h.rms() - r).abs() / r < 0.02, "{} vs {r}", h.rms());
    }

    /// Packet started at -90 µm with rms 20 µm, no waveguide and no interactions,
    /// run for 50 ms across the 4.71 mm/s barrier with Raman coupling `omega_hz`.
    fn free_collision(omega_hz: f64, dt: f64, v0: f64) -> SpinorField {
        let grid = SpatialGrid::new(-250.0, 350.0, 4096).unwrap();
        let barrier = PotentialProfile::gaussian(4.71, 1.3).unwrap();
        let ham = Hamiltonian::free(grid.clone(), units())
            .add_barrier(&barrier)
            .with_raman(crate::spin::hz_to_rad_per_ms(omega_hz), |y| barrier.shape(y));
        let mut f = SpinorField::gaussian(grid, -90.0, 20.0, v0, &units());
        evolve(&mut f, &ham, dt, 50.0).unwrap();
        f
    }

    const TRANSMITTED: (f64, f64) = (5.2, 350.0);

    #[test]
    fn vanishing_probe_transmission_matches_transfer_matrix() {
        let solver = crate::scattering::TransferMatrix::default();
        let barrier = PotentialProfile::gaussian(4.71, 1.3).unwrap();
        for v0 in [4.5, 4.9] {
            let f = free_collision(1e-6, 5e-3, v0);
            let dist = VelocityDistribution::gaussian(v0, units().hbar_over_m() / 40.0).unwrap();
            let expected = crate::larmor::ensemble_average_times(
                &solver,
                &barrier,
                &dist,
                crate::larmor::EnsembleWeighting::Probability,
            )
            .unwrap()
            .transmission;
            let t = f.region_norm(TRANSMITTED.0, TRANSMITTED.1);
            assert!((t / expected - 1.0).abs() < 0.01, "v0 {v0}: {t} vs {expected}");
            let (mean, _) = momentum_stats(&f, ComponentMask::Both, TRANSMITTED, &units()).unwrap();
            assert!(mean > v0, "transmitted mean {mean} should exceed {v0}");
        }
    }

    #[test]
    fn halving_dt_leaves_bloch_vector_unchanged() {
        let a = crate::spin::bloch_from_spinor(&free_collision(350.0, 5e-3, 4.6), TRANSMITTED).unwrap();
        let b = crate::spin::bloch_from_spinor(&free_collision(350.0, 2.5e-3, 4.6), TRANSMITTED).unwrap();
        let d = ((a.sx - b.sx).powi(2) + (a.sy - b.sy).powi(2) + (a.sz - b.sz).powi(2)).sqrt();
        assert!(d < 1e-4, "{d}");
    }

    #[test]
    fn strong_probe_shifts_transmission_but_not_tau_y() {
        let run = |hz: f64| {
            let f = free_collision(hz, 5e-3, 5.3);
            let b = crate::spin::bloch_from_spinor(&f, TRANSMITTED).unwrap();
            let (theta, alpha) = crate::spin::angles_from_bloch(&b).unwrap();
            let tau = crate::spin::times_from_angles(theta, alpha, crate::spin::hz_to_rad_per_ms(hz)).unwrap();
            (f.region_norm(TRANSMITTED.0, TRANSMITTED.1), tau.tau_y)
        };
        let (t_weak, tau_weak) = run(150.0);
        let (t_strong, tau_strong) = run(808.0);
        assert!((t_weak - t_strong).abs() / t_weak > 0.02, "{t_weak} vs {t_strong}");
        assert!((tau_strong - tau_weak).abs() / tau_weak < 0.1, "{tau_weak} vs {tau_strong}");
    }

    #[test]
    fn zero_duration_lens_is_identity() {
        let plan = SimulationPlan::default();
        let f = SpinorField::gaussian(plan.grid().unwrap(), -150.0, 30.0, 0.2, &units());
        let out = apply_lens_pulse(&f, &plan, 0.0).unwrap();
        assert_eq!(out, f);
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        let before = momentum_stats(&f, ComponentMask::Both, all, &units()).unwrap();
        let after = momentum_stats(&out, ComponentMask::Both, all, &units()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn unreachable_lens_target_is_a_calibration_error() {
        let plan = SimulationPlan {
            n_points: 4096,
            ..SimulationPlan::default()
        };
        let ground = initial_ground_state(&plan).unwrap();
        let err = calibrate_lens_from(&plan, &ground, 3.0, 4.26).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)), "{err:?}");
    }
}
