//! Knife-edge velocity-width fits, barrier-height calibration and width
//! deconvolution for transmission scans.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{Dyn, Matrix, OMatrix, OVector, Owned, Vector, U2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scattering::{PotentialProfile, TransferMatrix};
use crate::units::VelocityDistribution;

/// Quantity varied along a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanVariable {
    /// Barrier height in equivalent velocity (mm/s).
    #[default]
    BarrierHeight,
    /// Barrier beam intensity (arbitrary units).
    Intensity,
}

impl fmt::Display for ScanVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BarrierHeight => "barrier_height",
            Self::Intensity => "intensity",
        })
    }
}

impl FromStr for ScanVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "barrier_height" => Ok(Self::BarrierHeight),
            "intensity" => Ok(Self::Intensity),
            other => Err(Error::Config(format!("unknown scan variable '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub scan_var: f64,
    pub transmission: f64,
    pub shots: u32,
}

/// Transmitted fraction against barrier height or intensity at one incident velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionScan {
    pub variable: ScanVariable,
    /// Incident mean velocity (mm/s).
    pub v0: f64,
    /// Rows sorted by `scan_var`.
    pub rows: Vec<ScanRow>,
    /// Extra `key = value` metadata carried through export.
    pub metadata: BTreeMap<String, String>,
}

const CSV_HEADER: &str = "scan_var,transmission,shots";

impl TransmissionScan {
    pub fn new(variable: ScanVariable, v0: f64, mut rows: Vec<ScanRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.transmission) || !r.scan_var.is_finite() {
                return Err(Error::Domain(format!(
                    "row {}: transmission {} outside [0, 1] or invalid scan value",
                    i + 1,
                    r.transmission
                )));
            }
        }
        rows.sort_by(|a, b| a.scan_var.total_cmp(&b.scan_var));
        Ok(Self {
            variable,
            v0,
            rows,
            metadata: BTreeMap::new(),
        })
    }

    pub fn scan_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.scan_var).collect()
    }

    pub fn transmissions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.transmission).collect()
    }

    /// Knife-edge scan from the model with optional relative Gaussian noise.
    pub fn synthetic_model(
        v0: f64,
        v_r: f64,
        amplitude: f64,
        heights: &[f64],
        noise: Option<(f64, u64)>,
    ) -> Result<Self> {
        let mut rng = noise.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
        let normal = match noise {
            Some((s, _)) => Some(Normal::new(0.0, s).map_err(|e| Error::Domain(e.to_string()))?),
            None => None,
        };
        let rows = heights
            .iter()
            .map(|&h| {
                let mut t = knife_edge_model(h, v0, v_r, amplitude);
                if let (Some(rng), Some(n)) = (rng.as_mut(), normal.as_ref()) {
                    t += n.sample(rng);
                }
                ScanRow {
                    scan_var: h,
                    transmission: t.clamp(0.0, 1.0),
                    shots: 1,
                }
            })
            .collect();
        Self::new(ScanVariable::BarrierHeight, v0, rows)
    }

    /// Knife-edge scan with quantum transmission through Gaussian barriers
    /// of rms `sigma`, averaged over `dist`.
    pub fn synthetic_quantum(
        solver: &TransferMatrix,
        sigma: f64,
        dist: &VelocityDistribution,
        heights: &[f64],
    ) -> Result<Self> {
        let nodes = dist.nodes(96);
        let rows = heights
            .par_iter()
            .map(|&h| {
                let t = if h == 0.0 {
                    1.0
                } else {
                    let p = PotentialProfile::gaussian(h, sigma)?;
                    let mut acc = 0.0;
                    for (v, w) in &nodes {
                        acc += w * solver.solve(&p, *v)?.transmission();
                    }
                    acc
                };
                Ok(ScanRow {
                    scan_var: h,
                    transmission: t.clamp(0.0, 1.0),
                    shots: 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ScanVariable::BarrierHeight, dist.mean(), rows)
    }

    /// Reads the `# key = value` metadata block and `scan_var,transmission,shots` table.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut header_seen = false;
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let row = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["scan_var", "transmission", "shots"] {
                    return Err(Error::Parse {
                        row,
                        message: format!("expected header '{CSV_HEADER}', found '{line}'"),
                    });
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    row,
                    message: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    message: format!("invalid {what} '{s}'"),
                })
            };
            let scan_var = num(cols[0], "scan_var")?;
            let transmission = num(cols[1], "transmission")?;
            if !(0.0..=1.0).contains(&transmission) {
                return Err(Error::Parse {
                    row,
                    message: format!("transmission {transmission} outside [0, 1]"),
                });
            }
            let shots = cols[2].parse::<u32>().map_err(|_| Error::Parse {
                row,
                message: format!("invalid shots '{}'", cols[2]),
            })?;
            rows.push(ScanRow {
                scan_var,
                transmission,
                shots,
            });
        }
        if !header_seen {
            return Err(Error::Parse {
                row: 0,
                message: format!("missing header '{CSV_HEADER}'"),
            });
        }
        let variable = match meta.remove("scan_variable") {
            Some(s) => s.parse()?,
            None => ScanVariable::BarrierHeight,
        };
        let v0 = match meta.remove("v0") {
            Some(s) => s.parse::<f64>().map_err(|_| Error::Parse {
                row: 0,
                message: format!("invalid v0 '{s}'"),
            })?,
            None => {
                return Err(Error::Parse {
                    row: 0,
                    message: "metadata block lacks 'v0'".into(),
                })
            }
        };
        let mut scan = Self::new(variable, v0, rows)?;
        scan.metadata = meta;
        Ok(scan)
    }

    /// Writes the scan in the format accepted by [`TransmissionScan::read`].
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# scan_variable = {}", self.variable)?;
        writeln!(out, "# v0 = {:.17e}", self.v0)?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{:.17e},{:.17e},{}", r.scan_var, r.transmission, r.shots)?;
        }
        Ok(())
    }
}

/// `u - 2u³/3 + u⁵/5`, the antiderivative of `(1 - u²)²`.
fn tf_primitive(u: f64) -> f64 {
    let u = u.clamp(-1.0, 1.0);
    let u2 = u * u;
    u * (1.0 - u2 * (2.0 / 3.0 - u2 / 5.0))
}

/// Transmitted fraction of a Thomas-Fermi velocity profile (centre `v0`,
/// radius `v_r`) past a knife edge at `v_b`:
/// `amplitude · (1 - (15/16v_R) ∫₀^{v_b} (1 - (v' - v0)²/v_R²)² dv')`.
pub fn knife_edge_model(v_b: f64, v0: f64, v_r: f64, amplitude: f64) -> f64 {
    let i = tf_primitive((v_b - v0) / v_r) - tf_primitive(-v0 / v_r);
    amplitude * (1.0 - 15.0 / 16.0 * i).max(0.0)
}

/// Knife-edge fit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnifeEdgeFit {
    /// Thomas-Fermi radius of the velocity profile (mm/s).
    pub v_r: f64,
    /// Transmission plateau below the distribution.
    pub amplitude: f64,
    /// Prefactor of the bare integral, `amplitude · 15/(16 v_R)` (s/mm).
    pub normalization: f64,
    /// Rms width of the fitted profile, `v_R/√7`.
    pub rms_width: f64,
    pub residual_rms: f64,
    pub evaluations: usize,
}

struct KnifeProblem<'a> {
    x: &'a [f64],
    t: &'a [f64],
    w: &'a [f64],
    v0: f64,
    // (amplitude, ln v_R)
    p: OVector<f64, U2>,
}

impl LeastSquaresProblem<f64, Dyn, U2> for KnifeProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U2>;
    type ParameterStorage = Owned<f64, U2>;

    fn set_params(&mut self, x: &Vector<f64, U2, Self::ParameterStorage>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> Vector<f64, U2, Self::ParameterStorage> {
        self.p
    }

    fn residuals(&self) -> Option<Vector<f64, Dyn, Self::ResidualStorage>> {
        let (a, vr) = (self.p[0], self.p[1].exp());
        Some(OVector::<f64, Dyn>::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.t)
                .zip(self.w)
                .map(|((x, t), w)| w * (knife_edge_model(*x, self.v0, vr, a) - t)),
        ))
    }

    fn jacobian(&self) -> Option<Matrix<f64, Dyn, U2, Self::JacobianStorage>> {
        let (a, vr) = (self.p[0], self.p[1].exp());
        let mut j = OMatrix::<f64, Dyn, U2>::zeros(self.x.len());
        let edge = |u: f64| if u.abs() < 1.0 { -u * (1.0 - u * u).powi(2) } else { 0.0 };
        for (i, (x, w)) in self.x.iter().zip(self.w).enumerate() {
            let ub = (x - self.v0) / vr;
            let u0 = -self.v0 / vr;
            let shape = 1.0 - 15.0 / 16.0 * (tf_primitive(ub) - tf_primitive(u0));
            j[(i, 0)] = w * shape;
            j[(i, 1)] = w * a * (-15.0 / 16.0) * (edge(ub) - edge(u0));
        }
        Some(j)
    }
}

/// Least-squares fit of the knife-edge model over `(amplitude, v_R)` with
/// `v0` fixed; rows are weighted by `√shots`.
pub fn knife_edge_fit(scan: &TransmissionScan) -> Result<KnifeEdgeFit> {
    let x = scan.scan_values();
    let t = scan.transmissions();
    if x.len() < 3 {
        return Err(Error::Unidentifiable(format!("{} points cannot fix two parameters", x.len())));
    }
    let top = t.iter().cloned().fold(0.0, f64::max);
    let crosses = |level: f64| t.iter().any(|v| *v >= level * top) && t.iter().any(|v| *v <= level * top);
    if !(top > 0.0) || !t.iter().any(|v| *v < 0.2 * top) || !t.iter().any(|v| *v > 0.8 * top) || !crosses(0.5) {
        return Err(Error::Unidentifiable(
            "scan does not span the transition between 0.2 and 0.8 of its plateau".into(),
        ));
    }
    let w: Vec<f64> = scan.rows.iter().map(|r| (r.shots.max(1) as f64).sqrt()).collect();

    let a84 = crossing(&x, &t, 0.84 * top);
    let a16 = crossing(&x, &t, 0.16 * top);
    let spread = match (a84, a16) {
        (Some(a), Some(b)) if b > a => 0.5 * (b - a),
        _ => 0.1 * (x[x.len() - 1] - x[0]).abs().max(1e-3),
    };
    let vr0 = (7f64.sqrt() * spread).max(1e-6);
    let problem = KnifeProblem {
        x: &x,
        t: &t,
        w: &w,
        v0: scan.v0,
        p: OVector::<f64, U2>::new(top, vr0.ln()),
    };
    let (solved, report) = LevenbergMarquardt::new()
        .with_patience(200)
        .with_ftol(1e-15)
        .with_xtol(1e-15)
        .minimize(problem);
    let amplitude = solved.p[0];
    let v_r = solved.p[1].exp();
    if !report.termination.was_successful() || !v_r.is_finite() || !amplitude.is_finite() {
        return Err(Error::FitFailed {
            iterations: report.number_of_evaluations,
            v_r,
            amplitude,
        });
    }
    let residual_rms = (x
        .iter()
        .zip(&t)
        .map(|(x, t)| (knife_edge_model(*x, scan.v0, v_r, amplitude) - t).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(KnifeEdgeFit {
        v_r,
        amplitude,
        normalization: amplitude * 15.0 / (16.0 * v_r),
        rms_width: v_r / 7f64.sqrt(),
        residual_rms,
        evaluations: report.number_of_evaluations,
    })
}

/// First linear-interpolated crossing of `level` by the sampled curve.
fn crossing(x: &[f64], t: &[f64], level: f64) -> Option<f64> {
    x.windows(2).zip(t.windows(2)).find_map(|(xs, ts)| {
        let (a, b) = (ts[0] - level, ts[1] - level);
        if a == 0.0 {
            Some(xs[0])
        } else if a * b < 0.0 || b == 0.0 {
            Some(xs[0] + (xs[1] - xs[0]) * a / (a - b))
        } else {
            None
        }
    })
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("interpolation needs >= 2 strictly increasing abscissae".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|v| *v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// Abscissa where the interpolant first equals `level`.
    pub fn solve(&self, level: f64) -> Option<f64> {
        for i in 0..self.x.len() - 1 {
            let (a, b) = (self.y[i] - level, self.y[i + 1] - level);
            if a == 0.0 {
                return Some(self.x[i]);
            }
            if a * b < 0.0 || b == 0.0 {
                let (mut lo, mut hi) = (self.x[i], self.x[i + 1]);
                let f_lo = a;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = self.eval(mid) - level;
                    if fm == 0.0 {
                        return Some(mid);
                    }
                    if fm.signum() == f_lo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
        }
        None
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Scan value at which half the atoms are transmitted.
pub fn half_transmission_point(scan: &TransmissionScan) -> Result<f64> {
    let x = scan.scan_values();
    let t = scan.transmissions();
    Pchip::new(&x, &t)?
        .solve(0.5)
        .ok_or_else(|| Error::Calibration(format!("scan at v0 = {} never crosses T = 0.5", scan.v0)))
}

/// Linear map from beam intensity to `v_b²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierCalibration {
    /// `d(v_b²)/dI` (mm²/s² per intensity unit).
    pub slope: f64,
    pub intercept: f64,
    /// One-standard-error uncertainties; NaN when the fit has no spare degrees of freedom.
    pub slope_err: f64,
    pub intercept_err: f64,
    /// `(intensity, v_b)` pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
}

impl BarrierCalibration {
    /// Barrier height (mm/s) at `intensity`.
    pub fn height(&self, intensity: f64) -> Result<f64> {
        let v2 = self.slope * intensity + self.intercept;
        if v2 < 0.0 {
            return Err(Error::Domain(format!("calibration gives v_b² = {v2} < 0 at intensity {intensity}")));
        }
        Ok(v2.sqrt())
    }
}

/// Fits `v_b² = slope · I + intercept` from intensity scans, each taken at
/// its own incident velocity: where a scan crosses `T = 0.5` the barrier
/// height equals that velocity.
pub fn calibrate_barrier_height(scans: &[TransmissionScan]) -> Result<BarrierCalibration> {
    if scans.len() < 2 {
        return Err(Error::Underdetermined(format!("{} scan(s); need at least 2", scans.len())));
    }
    let mut points = Vec::with_capacity(scans.len());
    for s in scans {
        if s.variable != ScanVariable::Intensity {
            return Err(Error::Config("barrier calibration needs intensity scans".into()));
        }
        points.push((half_transmission_point(s)?, s.v0));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (i, v)| (a + i, b + v * v));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = points.iter().map(|(i, _)| (i - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Underdetermined("all crossings at the same intensity".into()));
    }
    let sxy: f64 = points.iter().map(|(i, v)| (i - mx) * (v * v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = points.len() as f64 - 2.0;
    let (slope_err, intercept_err) = if dof > 0.0 {
        let ss: f64 = points
            .iter()
            .map(|(i, v)| (v * v - slope * i - intercept).powi(2))
            .sum();
        let s2 = ss / dof;
        let sumx2: f64 = points.iter().map(|(i, _)| i * i).sum();
        ((s2 / sxx).sqrt(), (s2 * sumx2 / (n * sxx)).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(BarrierCalibration {
        slope,
        intercept,
        slope_err,
        intercept_err,
        points,
    })
}

/// Cloud rms width from a measured knife-edge width, removing the
/// tunneling contribution in quadrature.
pub fn deconvolve_width(measured_rms: f64, tunneling_rms: f64) -> Result<f64> {
    if !(measured_rms > tunneling_rms) || !(tunneling_rms >= 0.0) {
        return Err(Error::NonPhysical(format!(
            "measured width {measured_rms} mm/s does not exceed the tunneling width {tunneling_rms} mm/s"
        )));
    }
    Ok(((measured_rms - tunneling_rms) * (measured_rms + tunneling_rms)).sqrt())
}

/// Inverse of [`deconvolve_width`].
pub fn reconvolve_width(cloud_rms: f64, tunneling_rms: f64) -> f64 {
    cloud_rms.hypot(tunneling_rms)
}

/// As [`deconvolve_width`], with the tunneling width of a Gaussian barrier of
/// rms `sigma` taken from a height scan at incident speed `v`.
pub fn deconvolve_width_for_barrier(
    measured_rms: f64,
    solver: &TransferMatrix,
    sigma: f64,
    v: f64,
) -> Result<f64> {
    let w = crate::scattering::tunneling_width_vs_height(solver, sigma, v, 0.5 * v, 1.5 * v, 801)?;
    deconvolve_width(measured_rms, w.rms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn heights(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn model_limits() {
        assert!((knife_edge_model(0.0, 4.26, 0.6, 1.0) - 1.0).abs() < 1e-15);
        assert!(knife_edge_model(6.0, 4.26, 0.6, 1.0).abs() < 1e-15);
        assert!((knife_edge_model(4.26, 4.26, 0.6, 1.0) - 0.5).abs() < 1e-15);
        assert!((knife_edge_model(4.26, 4.26, 0.6, 0.8) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn model_matches_numerical_integral() {
        let (v0, vr) = (4.26, 0.6);
        for vb in [3.8, 4.0, 4.5, 4.8] {
            let f = |v: f64| {
                let u = (v - v0) / vr;
                if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 }
            };
            let i = crate::quad::integrate_gl(f, 0.0, vb, 8, 4000);
            let oracle = 1.0 - 15.0 / (16.0 * vr) * i;
            assert!((knife_edge_model(vb, v0, vr, 1.0) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn self_fit_recovers_parameters() {
        let scan = TransmissionScan::synthetic_model(4.26, 0.60, 1.0, &heights(3.0, 5.5, 41), None).unwrap();
        let fit = knife_edge_fit(&scan).unwrap();
        assert!((fit.v_r - 0.60).abs() < 1e-6, "{}", fit.v_r);
        assert!((fit.amplitude - 1.0).abs() < 1e-6);
        assert!(fit.residual_rms < 1e-10);
    }

    #[test]
    fn noisy_fits_stay_close() {
        let hs = heights(3.0, 5.5, 121);
        for seed in 0..100 {
            let scan = TransmissionScan::synthetic_model(4.26, 0.60, 1.0, &hs, Some((0.01, seed))).unwrap();
            let fit = knife_edge_fit(&scan).unwrap();
            assert!((fit.v_r - 0.60).abs() < 0.02, "seed {seed}: {}", fit.v_r);
        }
    }

    #[test]
    fn narrow_scans_are_unidentifiable() {
        let scan = TransmissionScan::synthetic_model(4.26, 0.60, 1.0, &heights(3.0, 3.6, 11), None).unwrap();
        assert!(matches!(knife_edge_fit(&scan), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn fitted_curve_is_monotone() {
        let scan = TransmissionScan::synthetic_model(4.26, 0.5, 1.0, &heights(3.0, 5.5, 31), Some((0.01, 3))).unwrap();
        let fit = knife_edge_fit(&scan).unwrap();
        let curve: Vec<f64> = heights(2.0, 6.0, 400)
            .into_iter()
            .map(|h| knife_edge_model(h, 4.26, fit.v_r, fit.amplitude))
            .collect();
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quantum_scan_width_is_quadrature_sum() {
        let solver = TransferMatrix::default();
        let dist = VelocityDistribution::thomas_fermi_with_rms(4.26, 0.35).unwrap();
        let scan = TransmissionScan::synthetic_quantum(&solver, 1.3, &dist, &heights(2.8, 5.8, 61)).unwrap();
        let fit = knife_edge_fit(&scan).unwrap();
        let tunneling = crate::scattering::tunneling_width_vs_height(&solver, 1.3, 4.26, 2.0, 7.0, 801)
            .unwrap()
            .rms;
        let expected = reconvolve_width(0.35, tunneling);
        assert!((fit.rms_width - expected).abs() / expected < 0.10, "{} vs {expected}", fit.rms_width);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mut scan =
            TransmissionScan::synthetic_model(4.26, 0.6, 1.0, &heights(3.0, 5.5, 11), Some((0.01, 1))).unwrap();
        scan.metadata.insert("note".into(), "bench".into());
        let mut buf = Vec::new();
        scan.write(&mut buf).unwrap();
        let back = TransmissionScan::read(buf.as_slice()).unwrap();
        assert_eq!(back, scan);

        let missing = "# v0 = 4.26\n3.0,0.9,1\n";
        assert!(matches!(TransmissionScan::read(missing.as_bytes()), Err(Error::Parse { row: 2, .. })));
        let bad = "# v0 = 4.26\nscan_var,transmission,shots\n3.0,0.9,1\n3.1,x,1\n";
        assert!(matches!(TransmissionScan::read(bad.as_bytes()), Err(Error::Parse { row: 4, .. })));
    }

    #[test]
    fn intensity_calibration_is_exact_for_linear_data() {
        // v_b² = 20 I; scans at v0 = √20 and √40 cross at I = 1 and 2
        let mk = |v0: f64| {
            let rows = heights(0.0, 3.0, 31)
                .into_iter()
                .map(|i: f64| ScanRow {
                    scan_var: i,
                    transmission: knife_edge_model((20.0 * i).sqrt(), v0, 0.6, 1.0),
                    shots: 10,
                })
                .collect();
            TransmissionScan::new(ScanVariable::Intensity, v0, rows).unwrap()
        };
        let cal = calibrate_barrier_height(&[mk(20f64.sqrt()), mk(40f64.sqrt())]).unwrap();
        assert!((cal.slope - 20.0).abs() < 1e-6 && cal.intercept.abs() < 1e-5, "{cal:?}");
        assert!((cal.height(1.0).unwrap() - 20f64.sqrt()).abs() < 1e-6);
        assert!(cal.slope_err.is_nan());
    }

    #[test]
    fn half_point_of_quantum_scan_is_the_barrier_height() {
        let solver = TransferMatrix::default();
        for vb in [4.71, 4.13] {
            let rows = heights(vb - 0.6, vb + 0.6, 25)
                .into_iter()
                .map(|v| ScanRow {
                    scan_var: v,
                    transmission: solver
                        .solve(&PotentialProfile::gaussian(vb, 1.3).unwrap(), v)
                        .unwrap()
                        .transmission(),
                    shots: 1,
                })
                .collect();
            // transmission rises with incident speed; flip to the falling knife-edge form
            let mut scan = TransmissionScan::new(ScanVariable::BarrierHeight, vb, rows).unwrap();
            for r in &mut scan.rows {
                r.transmission = 1.0 - r.transmission;
            }
            let half = half_transmission_point(&scan).unwrap();
            assert!((half - vb).abs() < 0.03, "{half} vs {vb}");
        }
    }

    #[test]
    fn two_barrier_energy_ratio() {
        // intensity I_1 gives 4.71 mm/s, I_2 = I_1 (4.13/4.71)² gives 4.13 mm/s
        let slope = 4.71f64.powi(2);
        let mk = |v0: f64| {
            let rows = heights(0.5, 1.5, 41)
                .into_iter()
                .map(|i: f64| ScanRow {
                    scan_var: i,
                    transmission: knife_edge_model((slope * i).sqrt(), v0, 0.5, 1.0),
                    shots: 1,
                })
                .collect();
            TransmissionScan::new(ScanVariable::Intensity, v0, rows).unwrap()
        };
        let cal = calibrate_barrier_height(&[mk(4.71), mk(4.13), mk(4.4)]).unwrap();
        let i2 = (4.13f64 / 4.71).powi(2);
        let (h1, h2) = (cal.height(1.0).unwrap(), cal.height(i2).unwrap());
        assert!((h1 - 4.71).abs() < 0.03 && (h2 - 4.13).abs() < 0.03);
        let diff = 1.0 - (h2 / h1).powi(2);
        assert!((diff - 0.231).abs() < 0.005, "{diff}");
    }

    #[test]
    fn calibration_needs_a_crossing() {
        let rows = heights(0.0, 1.0, 11)
            .into_iter()
            .map(|i| ScanRow { scan_var: i, transmission: 0.9 - 0.1 * i, shots: 1 })
            .collect();
        let s = TransmissionScan::new(ScanVariable::Intensity, 4.0, rows).unwrap();
        assert!(matches!(calibrate_barrier_height(&[s.clone(), s]), Err(Error::Calibration(_))));
    }

    #[test]
    fn deconvolution_examples() {
        let c = deconvolve_width(0.41, 0.21).unwrap();
        assert!((c - (0.41f64 * 0.41 - 0.21 * 0.21).sqrt()).abs() < 1e-15);
        assert!((c - 0.352).abs() < 1e-3);
        assert!(deconvolve_width(0.21 + 1e-12, 0.21).unwrap() < 1e-5);
        assert!(matches!(deconvolve_width(0.2, 0.21), Err(Error::NonPhysical(_))));
    }

    #[test]
    fn pchip_is_monotone_and_interpolating() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 0.95, 0.5, 0.05, 0.0];
        let p = Pchip::new(&x, &y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-15);
        }
        let s: Vec<f64> = (0..=400).map(|i| p.eval(i as f64 / 100.0)).collect();
        assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!((p.solve(0.5).unwrap() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn amplitude_scales_out(a in 0.3f64..1.0, vr in 0.3f64..0.9) {
            let scan = TransmissionScan::synthetic_model(4.26, vr, a, &heights(2.5, 6.0, 41), None).unwrap();
            let fit = knife_edge_fit(&scan).unwrap();
            prop_assert!((fit.amplitude - a).abs() < 1e-6);
            prop_assert!((fit.v_r - vr).abs() < 1e-6);
        }

        #[test]
        fn deconvolution_round_trips(cloud in 0.01f64..1.0, tun in 0.0f64..0.5) {
            let m = reconvolve_width(cloud, tun);
            let back = deconvolve_width(m, tun).unwrap();
            prop_assert!((back - cloud).abs() < 1e-12);
        }
    }
}
