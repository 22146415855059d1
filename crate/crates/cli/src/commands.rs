use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tunnelclock::calib::{deconvolve_width_for_barrier, ScanVariable, TransmissionScan};
use tunnelclock::gpe::{self, SimResult, SimulationPlan};
use tunnelclock::{
    calibrate_barrier_height, ensemble_average_times, knife_edge_fit, larmor_times_global,
    transmission_curve, TransferMatrix, VelocityDistribution,
};

use crate::config::{RunConfig, SyntheticModel};
use crate::output::{number, Table};
use crate::CliError;

fn solver(slices: usize) -> Result<TransferMatrix, CliError> {
    Ok(TransferMatrix::new(slices)?)
}

pub fn stationary_scan(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sec = cfg.section(&cfg.stationary_scan, "stationary_scan")?;
    let velocities = sec.velocities.resolve("stationary_scan.velocities")?;
    let barriers = sec.barriers()?;
    let tm = solver(sec.slices)?;
    let mut written = Vec::new();
    for (barrier, &height) in barriers.iter().zip(&sec.barrier_heights) {
        let curve = transmission_curve(&tm, barrier, &velocities)?;
        let times = velocities
            .par_iter()
            .map(|&v| larmor_times_global(&tm, barrier, v))
            .collect::<tunnelclock::Result<Vec<_>>>()?;
        let mut table = Table::new(&["v_mm_s", "T", "tau_y_ms", "tau_z_ms", "phi_rad"]);
        table
            .meta("command", "stationary-scan")
            .meta("barrier_height_mm_s", number(height))
            .meta("sigma_um", number(sec.sigma))
            .meta("slices", sec.slices);
        for (p, t) in curve.iter().zip(&times) {
            table.rows.push(vec![p.velocity, p.transmission, t.tau_y, t.tau_z, p.phase]);
        }
        let name = if barriers.len() == 1 {
            "times_vs_v.csv".to_string()
        } else {
            format!("times_vs_v_vb{height}.csv")
        };
        written.push(table.write(out, &name)?);
    }
    Ok(written)
}

pub fn ensemble(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sec = cfg.section(&cfg.ensemble, "ensemble")?;
    let v0s = sec.v0.resolve("ensemble.v0")?;
    let barrier = tunnelclock::PotentialProfile::gaussian(sec.barrier_height, sec.sigma)?;
    let dists = v0s
        .iter()
        .map(|&v| sec.distribution(v))
        .collect::<Result<Vec<VelocityDistribution>, _>>()?;
    let tm = solver(sec.slices)?;
    let mut table = Table::new(&["v0", "T", "tunneled_frac", "tau_y_ms", "tau_z_ms"]);
    table
        .meta("command", "ensemble")
        .meta("barrier_height_mm_s", number(sec.barrier_height))
        .meta("sigma_um", number(sec.sigma))
        .meta("rms_mm_s", number(sec.rms))
        .meta("profile", format!("{:?}", sec.profile))
        .meta("weighting", format!("{:?}", sec.weighting));
    for (v0, d) in v0s.iter().zip(&dists) {
        let e = ensemble_average_times(&tm, &barrier, d, sec.weighting.into())?;
        table
            .rows
            .push(vec![*v0, e.transmission, e.tunneled_fraction, e.times.tau_y, e.times.tau_z]);
    }
    Ok(vec![table.write(out, "ensemble.csv")?])
}

/// Plan with the lens calibrated if requested, plus the prepared packet.
fn prepare(cfg: &RunConfig) -> Result<(SimulationPlan, tunnelclock::SpinorField), CliError> {
    let sec = cfg.section(&cfg.gpe, "gpe")?;
    let mut plan = sec.plan()?;
    let ground = gpe::initial_ground_state(&plan)?;
    if let Some(cal) = &sec.calibrate_lens {
        plan.lens.lens_ms = gpe::calibrate_lens_from(&plan, &ground, cal.target_rms, cal.v_star)?;
    }
    let mut prepared = gpe::matter_wave_lens(&ground, &plan)?;
    prepared.time = 0.0;
    Ok((plan, prepared))
}

const GPE_COLUMNS: &[&str] = &[
    "v0",
    "T",
    "Sx",
    "Sy",
    "Sz",
    "tau_y_ms",
    "tau_z_ms",
    "incident_rms",
    "transmitted_mean_v",
];

fn gpe_table(plan: &SimulationPlan, command: &str, results: &[SimResult]) -> Table {
    let mut table = Table::new(GPE_COLUMNS);
    table
        .meta("command", command)
        .meta("barrier_height_mm_s", number(plan.barrier_height))
        .meta("barrier_sigma_um", number(plan.barrier_sigma))
        .meta("omega_eff_hz", number(plan.omega_eff_hz))
        .meta("detuning_hz", number(plan.detuning_hz))
        .meta("atom_number", number(plan.atom_number))
        .meta("waveguide_hz", number(plan.waveguide_hz))
        .meta("lens_ms", number(plan.lens.lens_ms))
        .meta("dt_ms", number(plan.dt))
        .meta("grid", format!("[{}, {}] x {}", plan.y_min, plan.y_max, plan.n_points));
    for r in results {
        let (ty, tz) = r.times.map_or((f64::NAN, f64::NAN), |t| (t.tau_y, t.tau_z));
        table.rows.push(vec![
            r.v0,
            r.transmission,
            r.bloch.sx,
            r.bloch.sy,
            r.bloch.sz,
            ty,
            tz,
            r.incident.rms_velocity,
            r.transmitted_mean,
        ]);
    }
    table
}

fn write_snapshots(out: &Path, index: usize, result: &SimResult) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for snap in &result.snapshots {
        let path = out.join(format!("snapshot_run{index}_t{:.3}.csv", snap.time));
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        snap.write_csv(BufWriter::new(file))?;
        written.push(path);
    }
    Ok(written)
}

pub fn gpe_run(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (plan, prepared) = prepare(cfg)?;
    let result = gpe::run_from_prepared(&plan, &prepared)?;
    let mut written = vec![gpe_table(&plan, "gpe-run", std::slice::from_ref(&result)).write(out, "gpe_run.csv")?];
    written.extend(write_snapshots(out, 0, &result)?);
    Ok(written)
}

pub fn gpe_scan(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sec = cfg.section(&cfg.gpe, "gpe")?;
    let velocities = sec
        .velocities
        .as_ref()
        .ok_or_else(|| CliError::Config("gpe-scan needs gpe.velocities".into()))?
        .resolve("gpe.velocities")?;
    let (plan, prepared) = prepare(cfg)?;
    let plans = velocities
        .iter()
        .map(|&v0| {
            let p = SimulationPlan { v0, ..plan.clone() };
            p.validate().map(|_| p)
        })
        .collect::<tunnelclock::Result<Vec<_>>>()?;
    let results = plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            gpe::run_from_prepared(p, &prepared).map_err(|e| CliError::Run {
                index: i,
                v0: p.v0,
                source: e,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut written = vec![gpe_table(&plan, "gpe-scan", &results).write(out, "gpe_scan.csv")?];
    for (i, r) in results.iter().enumerate() {
        written.extend(write_snapshots(out, i, r)?);
    }
    Ok(written)
}

pub fn snapshot(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sec = cfg.section(&cfg.gpe, "gpe")?;
    if sec.snapshot_times.is_empty() {
        return Err(CliError::Config("snapshot needs gpe.snapshot_times".into()));
    }
    let (plan, prepared) = prepare(cfg)?;
    let result = gpe::run_from_prepared(&plan, &prepared)?;
    write_snapshots(out, 0, &result)
}

fn read_scan(path: &Path) -> Result<TransmissionScan, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    TransmissionScan::read(BufReader::new(file)).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn knife_edge(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sec = cfg.section(&cfg.knife_edge, "knife_edge")?;
    let mut written = Vec::new();
    let scan = match (&sec.input, &sec.synthetic) {
        (Some(path), None) => read_scan(path)?,
        (None, Some(syn)) => {
            let heights = syn.heights.resolve("knife_edge.synthetic.heights")?;
            let v_r = syn.rms * 7f64.sqrt();
            let mut scan = match syn.model {
                SyntheticModel::KnifeEdge => TransmissionScan::synthetic_model(
                    syn.v0,
                    v_r,
                    syn.amplitude,
                    &heights,
                    syn.noise.map(|s| (s, cfg.seed)),
                )?,
                SyntheticModel::Quantum => TransmissionScan::synthetic_quantum(
                    &TransferMatrix::default(),
                    sec.sigma,
                    &VelocityDistribution::thomas_fermi_with_rms(syn.v0, syn.rms)?,
                    &heights,
                )?,
            };
            scan.metadata.insert("seed".into(), cfg.seed.to_string());
            let path = out.join("scan.csv");
            let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            scan.write(BufWriter::new(file))?;
            written.push(path);
            scan
        }
        _ => {
            return Err(CliError::Config(
                "knife_edge needs exactly one of `input` or `[knife_edge.synthetic]`".into(),
            ))
        }
    };
    if scan.variable != ScanVariable::BarrierHeight {
        return Err(CliError::Config("knife-edge fits need a barrier_height scan".into()));
    }
    let fit = knife_edge_fit(&scan)?;
    let cloud = deconvolve_width_for_barrier(fit.rms_width, &TransferMatrix::default(), sec.sigma, scan.v0).ok();

    let mut report = Table::new(&["v0", "v_r", "amplitude", "normalization", "rms_width", "cloud_rms", "residual_rms"]);
    report
        .meta("command", "knife-edge")
        .meta("points", scan.rows.len())
        .meta("evaluations", fit.evaluations)
        .meta("sigma_um", number(sec.sigma));
    report.rows.push(vec![
        scan.v0,
        fit.v_r,
        fit.amplitude,
        fit.normalization,
        fit.rms_width,
        cloud.unwrap_or(f64::NAN),
        fit.residual_rms,
    ]);
    written.push(report.write(out, "knife_edge_fit.csv")?);

    if !sec.intensity_scans.is_empty() {
        let scans = sec
            .intensity_scans
            .iter()
            .map(|p| read_scan(p))
            .collect::<Result<Vec<_>, _>>()?;
        let cal = calibrate_barrier_height(&scans)?;
        let mut table = Table::new(&["intensity", "v_b_mm_s", "v_b_fit_mm_s"]);
        table
            .meta("command", "knife-edge")
            .meta("slope", number(cal.slope))
            .meta("intercept", number(cal.intercept))
            .meta("slope_err", number(cal.slope_err))
            .meta("intercept_err", number(cal.intercept_err));
        for &(i, v_b) in &cal.points {
            table.rows.push(vec![i, v_b, cal.height(i).unwrap_or(f64::NAN)]);
        }
        written.push(table.write(out, "barrier_calibration.csv")?);
    }
    Ok(written)
}
