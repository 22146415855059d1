//! Stationary 1D scattering by the transfer-matrix method.
//!
//! Potentials are handled in "velocity-squared" units, `U(y) = 2 V(y) / m`,
//! so a barrier of height `v_b` has peak `U = v_b²` and the local wavenumber
//! in a slice is `q² = (v² - U) / (ħ/m)²`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::units::{SpatialGrid, UnitSystem};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest `κ·d` a single evanescent slice may carry.
const MAX_KAPPA_D: f64 = 700.0;

/// Barrier shapes; heights are equivalent velocities (mm/s).
#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    /// `v_b² exp(-2 (y - center)² / σ²)`, σ being the 1/e² radius.
    Gaussian { height: f64, sigma: f64, center: f64 },
    Square { height: f64, width: f64, center: f64 },
    /// Samples of `U = 2V/m` (µm²/ms²) at the points of `grid`.
    Tabulated { grid: SpatialGrid, samples: Vec<f64> },
}

/// Harmonic guide `½ m ω² (y - center)²` along the propagation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveguide {
    pub frequency_hz: f64,
    pub center: f64,
}

impl Waveguide {
    /// Angular frequency in rad/ms.
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz * 1e-3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile {
    pub barrier: Barrier,
    pub waveguide: Option<Waveguide>,
}

impl PotentialProfile {
    pub fn gaussian(height: f64, sigma: f64) -> Result<Self> {
        Self::gaussian_at(height, sigma, 0.0)
    }

    pub fn gaussian_at(height: f64, sigma: f64, center: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("barrier radius must be > 0, got {sigma}")));
        }
        if !(height >= 0.0) {
            return Err(Error::Domain(format!("barrier height must be >= 0, got {height}")));
        }
        Ok(Self {
            barrier: Barrier::Gaussian {
                height,
                sigma,
                center,
            },
            waveguide: None,
        })
    }

    pub fn square(height: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Domain(format!("barrier width must be > 0, got {width}")));
        }
        if !(height >= 0.0) {
            return Err(Error::Domain(format!("barrier height must be >= 0, got {height}")));
        }
        Ok(Self {
            barrier: Barrier::Square {
                height,
                width,
                center: 0.0,
            },
            waveguide: None,
        })
    }

    pub fn tabulated(grid: SpatialGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Config(format!(
                "tabulated potential has {} samples for a {}-point grid",
                samples.len(),
                grid.len()
            )));
        }
        if samples.iter().any(|u| !u.is_finite()) {
            return Err(Error::Domain("tabulated potential must be finite".into()));
        }
        Ok(Self {
            barrier: Barrier::Tabulated { grid, samples },
            waveguide: None,
        })
    }

    pub fn with_waveguide(mut self, waveguide: Waveguide) -> Self {
        self.waveguide = Some(waveguide);
        self
    }

    /// Barrier height as an equivalent velocity.
    pub fn height(&self) -> f64 {
        match &self.barrier {
            Barrier::Gaussian { height, .. } | Barrier::Square { height, .. } => *height,
            Barrier::Tabulated { samples, .. } => samples
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .sqrt(),
        }
    }

    /// Barrier centre (µm).
    pub fn center(&self) -> f64 {
        match &self.barrier {
            Barrier::Gaussian { center, .. } | Barrier::Square { center, .. } => *center,
            Barrier::Tabulated { grid, .. } => 0.5 * (grid.y_min() + grid.y_max()),
        }
    }

    /// Gaussian 1/e² radius, if the barrier is Gaussian.
    pub fn sigma(&self) -> Option<f64> {
        match &self.barrier {
            Barrier::Gaussian { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    /// Barrier part of `U(y)` in µm²/ms².
    pub fn barrier_u(&self, y: f64) -> f64 {
        match &self.barrier {
            Barrier::Gaussian {
                height,
                sigma,
                center,
            } => {
                let x = (y - center) / sigma;
                height * height * (-2.0 * x * x).exp()
            }
            Barrier::Square {
                height,
                width,
                center,
            } => {
                if (y - center).abs() < 0.5 * width {
                    height * height
                } else {
                    0.0
                }
            }
            Barrier::Tabulated { grid, samples } => interpolate(grid, samples, y),
        }
    }

    /// Barrier profile normalized to unit peak (the probe weight `G(y)`).
    pub fn shape(&self, y: f64) -> f64 {
        let peak = self.height().powi(2);
        match &self.barrier {
            Barrier::Gaussian { sigma, center, .. } => {
                let x = (y - center) / sigma;
                (-2.0 * x * x).exp()
            }
            Barrier::Square { width, center, .. } => {
                if (y - center).abs() < 0.5 * width {
                    1.0
                } else {
                    0.0
                }
            }
            Barrier::Tabulated { .. } => {
                if peak > 0.0 {
                    self.barrier_u(y) / peak
                } else {
                    0.0
                }
            }
        }
    }

    /// Full `U(y)` including the waveguide, in µm²/ms².
    pub fn u(&self, y: f64) -> f64 {
        let guide = self
            .waveguide
            .map(|w| (w.omega() * (y - w.center)).powi(2))
            .unwrap_or(0.0);
        self.barrier_u(y) + guide
    }

    /// Default truncation window: ±5σ for Gaussians, the barrier itself for
    /// square barriers and the table extent otherwise.
    pub fn default_window(&self) -> (f64, f64) {
        match &self.barrier {
            Barrier::Gaussian { sigma, center, .. } => (center - 5.0 * sigma, center + 5.0 * sigma),
            Barrier::Square { width, center, .. } => (center - 0.5 * width, center + 0.5 * width),
            Barrier::Tabulated { grid, .. } => (grid.y_min(), grid.y_max()),
        }
    }
}

fn interpolate(grid: &SpatialGrid, samples: &[f64], y: f64) -> f64 {
    if y < grid.y_min() || y > grid.y_max() {
        return 0.0;
    }
    let x = (y - grid.y_min()) / grid.dy();
    let i = (x.floor() as usize).min(samples.len() - 1);
    let f = x - i as f64;
    let next = samples.get(i + 1).copied().unwrap_or(0.0);
    samples[i] * (1.0 - f) + next * f
}

/// Scattering amplitudes for a unit wave incident from the left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringSolution {
    pub velocity: f64,
    pub t: Complex64,
    pub r: Complex64,
    /// Complex logarithm of `t`; stays accurate when `t` underflows.
    pub log_t: Complex64,
}

impl ScatteringSolution {
    pub fn transmission(&self) -> f64 {
        self.t.norm_sqr().min(1.0)
    }

    pub fn reflection(&self) -> f64 {
        self.r.norm_sqr()
    }

    /// Principal-branch phase of `t`.
    pub fn phase(&self) -> f64 {
        self.log_t.im
    }
}

/// Piecewise-constant discretization of a potential over a window.
#[derive(Debug, Clone)]
pub(crate) struct Slicing {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    /// Cell midpoints.
    pub mids: Vec<f64>,
    /// Barrier `U` at the midpoints.
    pub u: Vec<f64>,
    /// Barrier `U` at the two Gauss points of each cell.
    pub ug: Vec<[f64; 2]>,
    /// Probe weight `G` at the midpoints.
    pub g: Vec<f64>,
}

impl Slicing {
    pub fn new(p: &PotentialProfile, window: (f64, f64), n: usize) -> Self {
        let (a, b) = window;
        let d = (b - a) / n as f64;
        let mids: Vec<f64> = (0..n).map(|j| a + (j as f64 + 0.5) * d).collect();
        let u = mids.iter().map(|&y| p.barrier_u(y)).collect();
        let g = mids.iter().map(|&y| p.shape(y)).collect();
        let off = d / (2.0 * 3f64.sqrt());
        let ug = mids
            .iter()
            .map(|&y| [p.barrier_u(y - off), p.barrier_u(y + off)])
            .collect();
        Self {
            a,
            b,
            d,
            mids,
            u,
            ug,
            g,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn reversed(&self) -> Self {
        let mut s = self.clone();
        s.u.reverse();
        s.g.reverse();
        s.ug.reverse();
        for pair in &mut s.ug {
            pair.swap(0, 1);
        }
        s
    }
}

/// `cos`-like and `sin/q`-like propagators for real `q²`.
#[inline]
pub(crate) fn c_and_s(q2: f64, x: f64) -> (f64, f64) {
    if q2 > 0.0 {
        let q = q2.sqrt();
        ((q * x).cos(), (q * x).sin() / q)
    } else if q2 < 0.0 {
        let k = (-q2).sqrt();
        ((k * x).cosh(), (k * x).sinh() / k)
    } else {
        (1.0, x)
    }
}

/// Backward sweep: the scattering state normalized to `t = 1` on the right,
/// sampled at every cell edge with log-scale bookkeeping.
#[derive(Debug, Clone)]
pub(crate) struct Sweep {
    pub k0: f64,
    /// `(ψ, ψ')` at the left edge of each cell, plus the right boundary.
    pub states: Vec<[Complex64; 2]>,
    pub log_scale: Vec<f64>,
    pub q2: Vec<f64>,
    pub log_t: Complex64,
    pub r: Complex64,
}

impl Sweep {
    /// Runs the sweep with the given cell potentials (µm²/ms²).
    pub fn run(sl: &Slicing, u: &[f64], v: f64, hm: f64) -> Result<Self> {
        let n = u.len();
        let k0 = v / hm;
        let mut states = vec![[C0; 2]; n + 1];
        let mut log_scale = vec![0.0; n + 1];
        let mut q2s = vec![0.0; n];
        let e = Complex64::from_polar(1.0, k0 * sl.b);
        states[n] = [e, I * k0 * e];
        for j in (0..n).rev() {
            let q2 = (v * v - u[j]) / (hm * hm);
            if q2 < 0.0 && (-q2).sqrt() * sl.d > MAX_KAPPA_D {
                return Err(Error::Resolution(format!(
                    "evanescent slice with kappa*d = {:.1} exceeds {MAX_KAPPA_D}; use more slices or a narrower window",
                    (-q2).sqrt() * sl.d
                )));
            }
            q2s[j] = q2;
            let (c, s) = c_and_s(q2, sl.d);
            let [psi, dpsi] = states[j + 1];
            let nl = c * psi - s * dpsi;
            let dl = q2 * s * psi + c * dpsi;
            let m = nl.norm() + dl.norm() / k0;
            states[j] = [nl / m, dl / m];
            log_scale[j] = log_scale[j + 1] + m.ln();
        }
        let [psi, dpsi] = states[0];
        let (log_t, r) = edge_amplitudes(psi, dpsi, k0, sl.a, log_scale[0])?;
        Ok(Self {
            k0,
            states,
            log_scale,
            q2: q2s,
            log_t,
            r,
        })
    }

    /// Physical `(ψ, ψ')` at edge `j` (incident amplitude one).
    pub fn physical_state(&self, j: usize) -> [Complex64; 2] {
        let f = (self.log_t + self.log_scale[j]).exp();
        [self.states[j][0] * f, self.states[j][1] * f]
    }

    /// `∫|ψ|²` over `[s1, s2]` measured from the left edge of cell `j`.
    pub fn cell_norm(&self, j: usize, d: f64, s1: f64, s2: f64) -> f64 {
        let q2 = self.q2[j];
        let left = self.physical_state(j);
        let kd = if q2 < 0.0 { (-q2).sqrt() * d } else { 0.0 };
        if kd > 1.0 {
            let right = self.physical_state(j + 1);
            let k = (-q2).sqrt();
            // ψ(s) = α e^{-κs} + β e^{-κ(d-s)}
            let alpha = 0.5 * (left[0] - left[1] / k);
            let beta = 0.5 * (right[0] + right[1] / k);
            let ee = (-kd).exp();
            let ia = ((-2.0 * k * s1).exp() - (-2.0 * k * s2).exp()) / (2.0 * k);
            let ib = ((-2.0 * k * (d - s2)).exp() - (-2.0 * k * (d - s1)).exp()) / (2.0 * k);
            let cross = 2.0 * (alpha * beta.conj()).re * ee * (s2 - s1);
            return alpha.norm_sqr() * ia + beta.norm_sqr() * ib + cross;
        }
        let (psi0, dpsi0) = if s1 > 0.0 {
            let (c, s) = c_and_s(q2, s1);
            (c * left[0] + s * left[1], -q2 * s * left[0] + c * left[1])
        } else {
            (left[0], left[1])
        };
        let len = s2 - s1;
        let (_, s_len) = c_and_s(q2, len);
        let (_, s_two) = c_and_s(q2, 2.0 * len);
        let icc = 0.5 * len + 0.25 * s_two;
        let iss = integral_s_squared(q2, len, s_two);
        let ics = 0.5 * s_len * s_len;
        psi0.norm_sqr() * icc + dpsi0.norm_sqr() * iss + 2.0 * (psi0 * dpsi0.conj()).re * ics
    }
}

/// `∫₀^d S(s)² ds`, with a series when `q²d²` is small.
fn integral_s_squared(q2: f64, d: f64, s_two: f64) -> f64 {
    if (q2 * d * d).abs() > 0.1 {
        return (d - 0.5 * s_two) / (2.0 * q2);
    }
    let x = 2.0 * d;
    let mut term = x.powi(3) / 24.0;
    let mut sum = term;
    let mut n = 1.0;
    loop {
        n += 1.0;
        term *= -q2 * x * x / ((2.0 * n) * (2.0 * n + 1.0));
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || n > 40.0 {
            break;
        }
    }
    sum
}

/// Per-slice propagator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Fourth-order Magnus exponential with two Gauss points per slice.
    Magnus4,
    /// Constant potential per slice, sampled at the midpoint.
    Midpoint,
    /// Midpoint slices at `n` and `n/2`, extrapolated in `ln t` and `ln r`.
    MidpointRichardson,
}

/// Transfer-matrix solver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub slices: usize,
    /// Truncation window; `None` uses the profile's default.
    pub window: Option<(f64, f64)>,
    pub scheme: Scheme,
    pub units: UnitSystem,
}

impl Default for TransferMatrix {
    fn default() -> Self {
        Self {
            slices: 4096,
            window: None,
            scheme: Scheme::Magnus4,
            units: UnitSystem::default(),
        }
    }
}

impl TransferMatrix {
    pub fn new(slices: usize) -> Result<Self> {
        let tm = Self {
            slices,
            ..Self::default()
        };
        tm.validate()?;
        Ok(tm)
    }

    pub fn with_window(mut self, a: f64, b: f64) -> Self {
        self.window = Some((a, b));
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn hbar_over_m(&self) -> f64 {
        self.units.hbar_over_m()
    }

    fn validate(&self) -> Result<()> {
        if self.slices < 8 {
            return Err(Error::Config(format!("need at least 8 slices, got {}", self.slices)));
        }
        if !self.slices.is_multiple_of(2) {
            return Err(Error::Config(format!("slice count must be even, got {}", self.slices)));
        }
        Ok(())
    }

    pub(crate) fn check(&self, p: &PotentialProfile, v: f64) -> Result<(f64, f64)> {
        self.validate()?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("incident velocity must be > 0, got {v}")));
        }
        if p.waveguide.is_some() {
            return Err(Error::Config(
                "the transfer-matrix solver needs flat asymptotics; drop the waveguide".into(),
            ));
        }
        let (a, b) = self.window.unwrap_or_else(|| p.default_window());
        if !(b > a) {
            return Err(Error::Config(format!("empty window [{a}, {b}]")));
        }
        Ok((a, b))
    }

    /// Slicings a solve needs: the full one, plus the half one when extrapolating.
    pub(crate) fn slicings(&self, p: &PotentialProfile, window: (f64, f64)) -> Vec<Slicing> {
        let mut out = vec![Slicing::new(p, window, self.slices)];
        if self.scheme == Scheme::MidpointRichardson {
            out.push(Slicing::new(p, window, self.slices / 2));
        }
        out
    }

    /// Solves with the barrier scaled by `scale` (used for height derivatives).
    pub(crate) fn solve_slicings(
        &self,
        slicings: &[Slicing],
        v: f64,
        scale: f64,
        reversed: bool,
    ) -> Result<ScatteringSolution> {
        let hm = self.hbar_over_m();
        let mut log_ts = Vec::with_capacity(slicings.len());
        let mut rs = Vec::with_capacity(slicings.len());
        for sl in slicings {
            let sl = if reversed { sl.reversed() } else { sl.clone() };
            let (log_t, r) = match self.scheme {
                Scheme::Magnus4 => magnus_sweep(&sl, scale, v, hm)?,
                _ => {
                    let u: Vec<f64> = sl.u.iter().map(|x| x * scale).collect();
                    let sw = Sweep::run(&sl, &u, v, hm)?;
                    (sw.log_t, sw.r)
                }
            };
            log_ts.push(log_t);
            rs.push(r);
        }
        let (log_t, r) = if log_ts.len() == 2 {
            align_branches(&mut log_ts);
            let log_t = richardson(&log_ts);
            // extrapolating ln r keeps |r| on the unit circle where |t| is tiny
            let r = if rs.iter().all(|r| r.norm() > 1e-150) {
                let mut log_rs: Vec<Complex64> = rs.iter().map(|r| r.ln()).collect();
                align_branches(&mut log_rs);
                richardson(&log_rs).exp()
            } else {
                richardson(&rs)
            };
            (log_t, r)
        } else {
            (log_ts[0], rs[0])
        };
        Ok(ScatteringSolution {
            velocity: v,
            t: log_t.exp(),
            r,
            log_t,
        })
    }

    pub fn solve(&self, p: &PotentialProfile, v: f64) -> Result<ScatteringSolution> {
        let window = self.check(p, v)?;
        self.solve_slicings(&self.slicings(p, window), v, 1.0, false)
    }

    /// Same potential, wave incident from the right.
    pub fn solve_from_right(&self, p: &PotentialProfile, v: f64) -> Result<ScatteringSolution> {
        let window = self.check(p, v)?;
        self.solve_slicings(&self.slicings(p, window), v, 1.0, true)
    }
}

/// `(4 x_n - x_{n/2}) / 3`.
pub(crate) fn richardson<T>(values: &[T]) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Sub<Output = T>,
{
    values[0] * (4.0 / 3.0) - values[1] * (1.0 / 3.0)
}

/// Backward sweep with one Magnus exponential per slice. Each slice matrix
/// is real with unit determinant, so flux is conserved to rounding.
fn magnus_sweep(sl: &Slicing, scale: f64, v: f64, hm: f64) -> Result<(Complex64, Complex64)> {
    let k0 = v / hm;
    let d = sl.d;
    let comm = 3f64.sqrt() * d * d / 12.0;
    let e = Complex64::from_polar(1.0, k0 * sl.b);
    let (mut psi, mut dpsi) = (e, I * k0 * e);
    let mut log_scale = 0.0;
    for pair in sl.ug.iter().rev() {
        let p1 = (v * v - scale * pair[0]) / (hm * hm);
        let p2 = (v * v - scale * pair[1]) / (hm * hm);
        // Ω = [[a, d], [c, -a]], Ω² = λ² I
        let a = comm * (p2 - p1);
        let c = -0.5 * d * (p1 + p2);
        let lambda2 = a * a + d * c;
        if lambda2 > 0.0 && lambda2.sqrt() > MAX_KAPPA_D {
            return Err(Error::Resolution(format!(
                "evanescent slice with kappa*d = {:.1} exceeds {MAX_KAPPA_D}; use more slices or a narrower window",
                lambda2.sqrt()
            )));
        }
        let (ch, sh) = c_and_s(-lambda2, 1.0);
        // exp(-Ω) = ch I - sh Ω
        let nl = (ch - sh * a) * psi - sh * d * dpsi;
        let dl = -sh * c * psi + (ch + sh * a) * dpsi;
        let m = nl.norm() + dl.norm() / k0;
        psi = nl / m;
        dpsi = dl / m;
        log_scale += m.ln();
    }
    edge_amplitudes(psi, dpsi, k0, sl.a, log_scale)
}

/// `(ln t, r)` from the scaled state at the left edge of the window.
fn edge_amplitudes(
    psi: Complex64,
    dpsi: Complex64,
    k0: f64,
    a: f64,
    log_scale: f64,
) -> Result<(Complex64, Complex64)> {
    let a_amp = 0.5 * (psi + dpsi / (I * k0)) * Complex64::from_polar(1.0, -k0 * a);
    let b_amp = 0.5 * (psi - dpsi / (I * k0)) * Complex64::from_polar(1.0, k0 * a);
    if a_amp == C0 || !a_amp.is_finite() {
        return Err(Error::Resolution("incident amplitude vanished".into()));
    }
    Ok((-a_amp.ln() - log_scale, b_amp / a_amp))
}

/// Moves later logs onto the first one's branch.
fn align_branches(logs: &mut [Complex64]) {
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 1..logs.len() {
        let dphi = logs[i].im - logs[0].im;
        logs[i].im = logs[0].im + dphi - (dphi / two_pi).round() * two_pi;
    }
}

/// Solves at one velocity with `slices` uniform segments.
pub fn transfer_matrix_solve(
    potential: &PotentialProfile,
    v: f64,
    slices: usize,
) -> Result<ScatteringSolution> {
    TransferMatrix::new(slices)?.solve(potential, v)
}

/// One row of a transmission curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub velocity: f64,
    pub transmission: f64,
    /// Unwrapped phase of `t` (rad).
    pub phase: f64,
    pub solution: ScatteringSolution,
}

/// Solves over a monotone list of velocities and unwraps the phase,
/// anchoring the branch at the fastest velocity where `t → 1`.
pub fn transmission_curve(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    velocities: &[f64],
) -> Result<Vec<CurvePoint>> {
    if let Some(bad) = velocities.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("incident velocity must be > 0, got {bad}")));
    }
    let sols: Vec<ScatteringSolution> = velocities
        .par_iter()
        .map(|&v| solver.solve(potential, v))
        .collect::<Result<_>>()?;
    let mut phases: Vec<f64> = sols.iter().map(|s| s.phase()).collect();
    if let Some(seed) = velocities
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    {
        unwrap_from(&mut phases, seed);
    }
    Ok(sols
        .into_iter()
        .zip(phases)
        .map(|(solution, phase)| CurvePoint {
            velocity: solution.velocity,
            transmission: solution.transmission(),
            phase,
            solution,
        })
        .collect())
}

fn unwrap_from(phases: &mut [f64], seed: usize) {
    let two_pi = 2.0 * std::f64::consts::PI;
    let fix = |prev: f64, cur: f64| cur - ((cur - prev) / two_pi).round() * two_pi;
    for i in seed + 1..phases.len() {
        phases[i] = fix(phases[i - 1], phases[i]);
    }
    for i in (0..seed).rev() {
        phases[i] = fix(phases[i + 1], phases[i]);
    }
}

/// Closed-form square-barrier transmission, all arguments as velocities
/// (`v_b`, `v`) and the width `l` in µm.
pub fn square_barrier_oracle(units: &UnitSystem, v_b: f64, l: f64, v: f64) -> Result<f64> {
    if !(v_b > 0.0) || !(l > 0.0) || !(v > 0.0) {
        return Err(Error::Domain(format!(
            "square barrier needs positive height, width and velocity (v_b={v_b}, L={l}, v={v})"
        )));
    }
    let hm = units.hbar_over_m();
    let (vb2, v2) = (v_b * v_b, v * v);
    if vb2 == v2 {
        let k0l = v_b * l / hm;
        return Ok(1.0 / (1.0 + 0.25 * k0l * k0l));
    }
    let pre = vb2 * vb2 / (4.0 * v2 * (vb2 - v2).abs());
    let x = (vb2 - v2).abs().sqrt() * l / hm;
    let f = if vb2 > v2 { x.sinh() } else { x.sin() };
    Ok(1.0 / (1.0 + pre * f * f))
}

/// Mean and rms of a `dT/dv` profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunnelingWidth {
    pub mean: f64,
    pub rms: f64,
}

/// Second-moment width of `dT/dv` sampled on `n` uniform velocities in
/// `[v_min, v_max]` with centred differences.
pub fn tunneling_width(
    solver: &TransferMatrix,
    potential: &PotentialProfile,
    v_min: f64,
    v_max: f64,
    n: usize,
) -> Result<TunnelingWidth> {
    if !(v_max > v_min) || n < 3 {
        return Err(Error::Config("tunneling width needs a non-empty velocity range".into()));
    }
    let dv = (v_max - v_min) / (n - 1) as f64;
    let vs: Vec<f64> = (0..n).map(|i| v_min + i as f64 * dv).collect();
    let curve = transmission_curve(solver, potential, &vs)?;
    let t: Vec<f64> = curve.iter().map(|p| p.transmission).collect();
    moments(&vs, &t, dv, 1.0)
}

/// Knife-edge geometry: second-moment width of `-dT/dv_b` for a Gaussian
/// barrier of radius `sigma` scanned over `n` heights at fixed incident `v`.
pub fn tunneling_width_vs_height(
    solver: &TransferMatrix,
    sigma: f64,
    v: f64,
    vb_min: f64,
    vb_max: f64,
    n: usize,
) -> Result<TunnelingWidth> {
    if !(vb_max > vb_min) || !(vb_min >= 0.0) || n < 3 {
        return Err(Error::Config("height scan needs a non-empty range of heights >= 0".into()));
    }
    let dh = (vb_max - vb_min) / (n - 1) as f64;
    let heights: Vec<f64> = (0..n).map(|i| vb_min + i as f64 * dh).collect();
    let t: Vec<f64> = heights
        .par_iter()
        .map(|&h| Ok(solver.solve(&PotentialProfile::gaussian(h, sigma)?, v)?.transmission()))
        .collect::<Result<_>>()?;
    moments(&heights, &t, dh, -1.0)
}

fn moments(x: &[f64], t: &[f64], dx: f64, sign: f64) -> Result<TunnelingWidth> {
    let n = x.len();
    let mut w = vec![0.0; n];
    w[0] = (t[1] - t[0]) / dx;
    w[n - 1] = (t[n - 1] - t[n - 2]) / dx;
    for i in 1..n - 1 {
        w[i] = (t[i + 1] - t[i - 1]) / (2.0 * dx);
    }
    let total: f64 = w.iter().map(|w| sign * w).sum();
    if !(total > 0.0) {
        return Err(Error::NumericalQuality("flat transmission profile".into()));
    }
    let mean = w.iter().zip(x).map(|(w, x)| sign * w * x).sum::<f64>() / total;
    let var = w.iter().zip(x).map(|(w, x)| sign * w * (x - mean).powi(2)).sum::<f64>() / total;
    Ok(TunnelingWidth {
        mean,
        rms: var.sqrt(),
    })
}
