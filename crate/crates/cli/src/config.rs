//! Run configuration: a TOML file with one section per subcommand.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tunnelclock::gpe::{LensPlan, SimulationPlan};
use tunnelclock::{EnsembleWeighting, PotentialProfile, VelocityDistribution};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; falls back to `$TUNNELCLOCK_OUT`, then the working directory.
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; defaults to the number of cores.
    pub parallelism: Option<usize>,
    pub stationary_scan: Option<StationaryScan>,
    pub ensemble: Option<Ensemble>,
    pub gpe: Option<Gpe>,
    pub knife_edge: Option<KnifeEdge>,
}

/// Either an explicit list or an inclusive `[start, stop, step]` range.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub values: Option<Vec<f64>>,
    pub range: Option<[f64; 3]>,
}

impl Grid {
    pub fn resolve(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let values = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some([start, stop, step])) => {
                if !(*step > 0.0) || !(stop >= start) {
                    return Err(CliError::Config(format!("{key}.range needs step > 0 and stop >= start")));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| start + i as f64 * step).collect()
            }
            _ => return Err(CliError::Config(format!("{key} needs exactly one of `values` or `range`"))),
        };
        if values.is_empty() {
            return Err(CliError::Config(format!("{key} is empty")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CliError::Config(format!("{key} contains non-finite value {bad}")));
        }
        Ok(values)
    }
}

fn default_sigma() -> f64 {
    1.3
}

fn default_slices() -> usize {
    4096
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryScan {
    /// Barrier heights as velocities (mm/s); one output file per height.
    pub barrier_heights: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub velocities: Grid,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

impl StationaryScan {
    pub fn barriers(&self) -> Result<Vec<PotentialProfile>, CliError> {
        if self.barrier_heights.is_empty() {
            return Err(CliError::Config("stationary_scan.barrier_heights is empty".into()));
        }
        Ok(self
            .barrier_heights
            .iter()
            .map(|&h| PotentialProfile::gaussian(h, self.sigma))
            .collect::<tunnelclock::Result<_>>()?)
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    ThomasFermi,
    Gaussian,
    Delta,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Probability,
    Amplitude,
}

impl From<Weighting> for EnsembleWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Probability => EnsembleWeighting::Probability,
            Weighting::Amplitude => EnsembleWeighting::Amplitude,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub barrier_height: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub v0: Grid,
    /// Rms velocity width (mm/s); ignored for `delta`.
    #[serde(default)]
    pub rms: f64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

impl Ensemble {
    pub fn distribution(&self, v0: f64) -> Result<VelocityDistribution, CliError> {
        Ok(match self.profile {
            Profile::ThomasFermi => VelocityDistribution::thomas_fermi_with_rms(v0, self.rms)?,
            Profile::Gaussian => VelocityDistribution::gaussian(v0, self.rms)?,
            Profile::Delta => VelocityDistribution::thomas_fermi(v0, 0.0)?,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensCalibration {
    pub target_rms: f64,
    pub v_star: f64,
}

/// Overrides on top of the default simulation plan.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gpe {
    pub v0: Option<f64>,
    /// Incident velocities for `gpe-scan`.
    pub velocities: Option<Grid>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub n_points: Option<usize>,
    pub waveguide_hz: Option<f64>,
    pub transverse_hz: Option<f64>,
    pub barrier_height: Option<f64>,
    pub barrier_sigma: Option<f64>,
    pub barrier_center: Option<f64>,
    pub omega_eff_hz: Option<f64>,
    pub detuning_hz: Option<f64>,
    pub atom_number: Option<f64>,
    pub scattering_lengths_a0: Option<[f64; 3]>,
    pub initial_offset: Option<f64>,
    pub dt: Option<f64>,
    pub max_time: Option<f64>,
    pub crossed_trap_hz: Option<f64>,
    pub expansion_ms: Option<f64>,
    pub lens_hz: Option<f64>,
    pub lens_ms: Option<f64>,
    /// Tunes `lens_ms` before running.
    pub calibrate_lens: Option<LensCalibration>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl Gpe {
    pub fn plan(&self) -> Result<SimulationPlan, CliError> {
        let d = SimulationPlan::default();
        let lens = LensPlan {
            crossed_trap_hz: self.crossed_trap_hz.unwrap_or(d.lens.crossed_trap_hz),
            expansion_ms: self.expansion_ms.unwrap_or(d.lens.expansion_ms),
            lens_hz: self.lens_hz.unwrap_or(d.lens.lens_hz),
            lens_ms: self.lens_ms.unwrap_or(d.lens.lens_ms),
        };
        let plan = SimulationPlan {
            y_min: self.y_min.unwrap_or(d.y_min),
            y_max: self.y_max.unwrap_or(d.y_max),
            n_points: self.n_points.unwrap_or(d.n_points),
            waveguide_hz: self.waveguide_hz.unwrap_or(d.waveguide_hz),
            transverse_hz: self.transverse_hz.unwrap_or(d.transverse_hz),
            barrier_height: self.barrier_height.unwrap_or(d.barrier_height),
            barrier_sigma: self.barrier_sigma.unwrap_or(d.barrier_sigma),
            barrier_center: self.barrier_center.unwrap_or(d.barrier_center),
            omega_eff_hz: self.omega_eff_hz.unwrap_or(d.omega_eff_hz),
            detuning_hz: self.detuning_hz.unwrap_or(d.detuning_hz),
            atom_number: self.atom_number.unwrap_or(d.atom_number),
            scattering_lengths_a0: self.scattering_lengths_a0.unwrap_or(d.scattering_lengths_a0),
            initial_offset: self.initial_offset.unwrap_or(d.initial_offset),
            v0: self.v0.unwrap_or(d.v0),
            dt: self.dt.unwrap_or(d.dt),
            max_time: self.max_time.unwrap_or(d.max_time),
            lens,
            snapshot_times: self.snapshot_times.clone(),
            ..d
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnifeEdge {
    /// Existing scan CSV; when absent a synthetic scan is generated.
    pub input: Option<PathBuf>,
    pub synthetic: Option<SyntheticScan>,
    /// Intensity scans at several velocities for the barrier-height calibration.
    #[serde(default)]
    pub intensity_scans: Vec<PathBuf>,
    /// Barrier radius used for the tunneling-width deconvolution (µm).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticModel {
    /// The fitted integrated Thomas-Fermi profile.
    #[default]
    KnifeEdge,
    /// Transfer-matrix transmission averaged over a Thomas-Fermi cloud.
    Quantum,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScan {
    pub v0: f64,
    /// Cloud rms velocity width (mm/s).
    pub rms: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    pub heights: Grid,
    /// Gaussian noise on each transmission point.
    pub noise: Option<f64>,
    #[serde(default)]
    pub model: SyntheticModel,
}

fn one() -> f64 {
    1.0
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os("TUNNELCLOCK_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
    }
}
