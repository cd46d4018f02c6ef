//! Scenario execution, summary metrics, batch validation and file export.

use crate::control::{quat_error, FlcController};
use crate::env::{circular_orbit_mu, total_disturbance};
use crate::error::{AttError, Result};
use crate::flex::FlexState;
use crate::integrate::{integrate, Schedule, SolverStats};
use crate::quat::{dcm_to_euler, quat_to_dcm};
use crate::rigid::{analytic_solution, kinetic_energy_rigid, rigid_state_derivative};
use crate::scenario::{Plant, Scenario};
use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Time series sampled on the reporting grid; modal and probe columns are stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub n_modes: usize,
    pub probe_names: Vec<String>,
    pub t: Vec<f64>,
    pub q: Vec<[f64; 4]>,
    pub euler: Vec<[f64; 3]>,
    pub omega: Vec<[f64; 3]>,
    pub chi: Vec<f64>,
    pub chi_dot: Vec<f64>,
    pub deflection: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    /// Modal kinetic plus elastic energy.
    pub vibrational: Vec<f64>,
    pub momentum: Vec<f64>,
    pub tau_commanded: Vec<[f64; 3]>,
    pub tau_applied: Vec<[f64; 3]>,
    pub tau_disturbance: Vec<[f64; 3]>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn chi_row(&self, i: usize) -> &[f64] {
        &self.chi[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn chi_dot_row(&self, i: usize) -> &[f64] {
        &self.chi_dot[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn probe_row(&self, i: usize) -> &[f64] {
        let n = self.probe_names.len();
        &self.deflection[i * n..(i + 1) * n]
    }

    pub fn total_energy(&self, i: usize) -> f64 {
        self.kinetic[i] + self.potential[i]
    }

    /// Index of the sample nearest to `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let i = self.t.partition_point(|&s| s < t);
        [i.saturating_sub(1), i]
            .into_iter()
            .filter(|&k| k < self.t.len())
            .min_by(|&a, &b| (self.t[a] - t).abs().total_cmp(&(self.t[b] - t).abs()))
    }

    /// Column names with units, in export order.
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["t_s", "q0", "q1", "q2", "q3", "euler1_rad", "euler2_rad", "euler3_rad"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(["wx_rad_s", "wy_rad_s", "wz_rad_s"].map(String::from));
        h.extend((0..self.n_modes).map(|k| format!("chi{k}_m")));
        h.extend((0..self.n_modes).map(|k| format!("chidot{k}_m_s")));
        h.extend(self.probe_names.iter().map(|p| format!("w_{p}_m")));
        h.extend(["kinetic_J", "potential_J", "total_J", "momentum_Nms"].map(String::from));
        for pre in ["tau_cmd", "tau_app", "tau_dist"] {
            h.extend(["x", "y", "z"].map(|a| format!("{pre}_{a}_Nm")));
        }
        h
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut r = vec![self.t[i]];
        r.extend(self.q[i]);
        r.extend(self.euler[i]);
        r.extend(self.omega[i]);
        r.extend_from_slice(self.chi_row(i));
        r.extend_from_slice(self.chi_dot_row(i));
        r.extend_from_slice(self.probe_row(i));
        r.extend([self.kinetic[i], self.potential[i], self.total_energy(i), self.momentum[i]]);
        r.extend(self.tau_commanded[i]);
        r.extend(self.tau_applied[i]);
        r.extend(self.tau_disturbance[i]);
        r
    }
}

/// Scalar metrics derived from a [`Series`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Time at which the recovery hold window starts.
    pub recovery_time: Option<f64>,
    /// `recovery_time` minus the controller start.
    pub recovery_duration: Option<f64>,
    /// Largest absolute probe deflection (m).
    pub max_deflection: Option<f64>,
    /// Work done by scheduled and environmental torques (J).
    pub energy_injected: f64,
    /// Work done by the applied control torque (J).
    pub energy_control: f64,
    pub peak_energy: f64,
    pub drift_from: f64,
    /// Largest relative change of the total energy after `drift_from`.
    pub energy_drift: f64,
    /// Largest relative change of the angular momentum norm after `drift_from`.
    pub momentum_drift: f64,
    pub quat_norm_error: f64,
    /// Settling time `8 / r` from the fit `E_vib ~ exp(-r t)`.
    pub settling_time: Option<f64>,
    pub final_time: f64,
}

/// Output of one [`run`].
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub series: Series,
    pub summary: Summary,
    pub stats: SolverStats,
    pub wall_time: f64,
}

struct Context {
    plant: Plant,
    ctrl: Option<FlcController>,
    control_start: f64,
}

impl Context {
    fn disturbance(&self, sc: &Scenario, t: f64, s: &FlexState) -> Result<Vector3<f64>> {
        let mut tau = sc.scheduled_torque(t);
        if let Some(env) = &sc.environment {
            let orbit = circular_orbit_mu(env.model.mu, env.altitude, env.inclination_deg.to_radians(), t)?;
            let body = orbit.rotated(&quat_to_dcm(&s.q));
            tau += total_disturbance(&env.model, &body, &self.plant.inertia(&s.chi))?;
        }
        Ok(tau)
    }

    fn control(&self, t: f64, s: &FlexState) -> Result<(Vector3<f64>, Vector3<f64>)> {
        match &self.ctrl {
            Some(c) if t >= self.control_start => {
                let out = c.torque(s)?;
                Ok((out.commanded, out.applied))
            }
            _ => Ok((Vector3::zeros(), Vector3::zeros())),
        }
    }

    fn derivative(&self, sc: &Scenario, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let s = FlexState::from_slice(y)?;
        let tau = self.disturbance(sc, t, &s)? + self.control(t, &s)?.1;
        match &self.plant {
            Plant::Rigid(b) => rigid_state_derivative(b, y, &tau, out),
            Plant::Flexible(f) => f.state_derivative(y, &tau, out),
        }
    }
}

/// Simulates a scenario on its reporting grid and derives the summary metrics.
pub fn run(sc: &Scenario) -> Result<RunRecord> {
    sc.validate()?;
    let clock = Instant::now();
    let plant = sc.build_plant()?;
    let ctx = Context {
        ctrl: sc.build_controller(&plant)?,
        control_start: sc.controller.start,
        plant,
    };
    let x0 = sc.initial_state(&ctx.plant)?.to_vec();
    let sched = Schedule::new(0.0, sc.duration, Some(sc.report_dt)).with_breakpoints(sc.breakpoints());
    let traj = integrate(
        |t, y, out| ctx.derivative(sc, t, y, out).map_err(|e| e.at(t)),
        &x0,
        &sched,
        &sc.solver,
    )?;
    let series = sample(sc, &ctx, &traj.t, &traj.x)?;
    let summary = summarize(sc, &series);
    Ok(RunRecord {
        scenario: sc.clone(),
        series,
        summary,
        stats: traj.stats,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

fn sample(sc: &Scenario, ctx: &Context, ts: &[f64], xs: &[Vec<f64>]) -> Result<Series> {
    let seq = sc.sequence()?;
    let n = ctx.plant.n_modes();
    let mut out = Series {
        n_modes: n,
        probe_names: sc.probes.iter().map(|p| p.name.clone()).collect(),
        ..Series::default()
    };
    for (&t, y) in ts.iter().zip(xs) {
        let s = FlexState::from_slice(y)?;
        let e = dcm_to_euler(&quat_to_dcm(&s.q), seq);
        let (kin, pot, l, vib) = match &ctx.plant {
            Plant::Rigid(b) => (
                kinetic_energy_rigid(b, &s.omega),
                0.0,
                (b.inertia() * s.omega + b.h_w()).norm(),
                0.0,
            ),
            Plant::Flexible(f) => {
                let (k, p) = f.total_energy(&s).map_err(|e| e.at(t))?;
                let l = f.angular_momentum(&s).map_err(|e| e.at(t))?.norm();
                let mut vib = p;
                for (i, app) in f.appendages.iter().enumerate() {
                    let rg = f.block(i);
                    vib += 0.5 * app.spec.rho * app.modal_mass() * s.chi_dot.rows(rg.start, rg.len()).norm_squared();
                }
                (k, p, l, vib)
            }
        };
        for pr in &sc.probes {
            let w = match &ctx.plant {
                Plant::Flexible(f) => {
                    let rg = f.block(pr.appendage);
                    f.appendages[pr.appendage].deflection(&y[7 + rg.start..7 + rg.end], pr.x, pr.y)?
                }
                Plant::Rigid(_) => 0.0,
            };
            out.deflection.push(w);
        }
        let (cmd, app) = ctx.control(t, &s).map_err(|e| e.at(t))?;
        let dist = ctx.disturbance(sc, t, &s).map_err(|e| e.at(t))?;
        out.t.push(t);
        out.q.push([s.q.q0, s.q.q[0], s.q.q[1], s.q.q[2]]);
        out.euler.push(e.angles);
        out.omega.push(s.omega.into());
        out.chi.extend_from_slice(&y[7..7 + n]);
        out.chi_dot.extend_from_slice(&y[7 + n..]);
        out.kinetic.push(kin);
        out.potential.push(pot);
        out.vibrational.push(vib);
        out.momentum.push(l);
        out.tau_commanded.push(cmd.into());
        out.tau_applied.push(app.into());
        out.tau_disturbance.push(dist.into());
    }
    Ok(out)
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mid_omega(s: &Series, i: usize) -> [f64; 3] {
    let (a, b) = (s.omega[i - 1], s.omega[i]);
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

fn relative_change(v: f64, r: f64) -> f64 {
    if r.abs() > f64::MIN_POSITIVE {
        ((v - r) / r).abs()
    } else {
        v.abs()
    }
}

/// Summary metrics of a series; every value is derived from the series alone.
pub fn summarize(sc: &Scenario, s: &Series) -> Summary {
    let mut m = Summary {
        drift_from: sc.metrics.drift_from.unwrap_or_else(|| sc.last_pulse_end()),
        final_time: s.t.last().copied().unwrap_or(0.0),
        ..Summary::default()
    };
    if s.is_empty() {
        return m;
    }
    for i in 1..s.len() {
        let h = s.t[i] - s.t[i - 1];
        let w = mid_omega(s, i);
        let tm = 0.5 * (s.t[i] + s.t[i - 1]);
        let dist = sc.scheduled_torque(tm);
        let env = if sc.environment.is_some() {
            let (a, b) = (s.tau_disturbance[i - 1], s.tau_disturbance[i]);
            let sa = sc.scheduled_torque(s.t[i - 1]);
            let sb = sc.scheduled_torque(s.t[i]);
            [0, 1, 2].map(|k| 0.5 * ((a[k] - sa[k]) + (b[k] - sb[k])))
        } else {
            [0.0; 3]
        };
        m.energy_injected += h * (dot3(&w, &dist.into()) + dot3(&w, &env));
        let (ca, cb) = (s.tau_applied[i - 1], s.tau_applied[i]);
        m.energy_control += 0.5 * h * (dot3(&s.omega[i - 1], &ca) + dot3(&s.omega[i], &cb));
    }
    m.peak_energy = (0..s.len()).map(|i| s.total_energy(i)).fold(f64::NEG_INFINITY, f64::max);
    m.quat_norm_error =
        s.q.iter()
            .map(|q| ((q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt() - 1.0).abs())
            .fold(0.0, f64::max);
    if let Some(i0) = (0..s.len()).find(|&i| s.t[i] >= m.drift_from) {
        let (e0, l0) = (s.total_energy(i0), s.momentum[i0]);
        for i in i0..s.len() {
            m.energy_drift = m.energy_drift.max(relative_change(s.total_energy(i), e0));
            m.momentum_drift = m.momentum_drift.max(relative_change(s.momentum[i], l0));
        }
    }
    if !s.probe_names.is_empty() {
        m.max_deflection = Some(s.deflection.iter().fold(0.0f64, |a, w| a.max(w.abs())));
    }
    if sc.controller.kind != crate::scenario::ControllerKind::None {
        m.recovery_time = recovery_time(sc, s);
        m.recovery_duration = m.recovery_time.map(|t| t - sc.controller.start);
    }
    if let Some([a, b]) = sc.metrics.settle_window {
        m.settling_time = settling_fit(s, a, b);
    }
    m
}

/// Start of the first window of `recovery_hold` seconds after control start in which
/// `|w|`, `|q_e|` and `|chi_dot|` all stay below the threshold.
fn recovery_time(sc: &Scenario, s: &Series) -> Option<f64> {
    let thr = sc.metrics.recovery_threshold;
    let q_ref = Vector3::from(sc.controller.q_ref);
    let ok = |i: usize| {
        let q = crate::quat::Quaternion::new(s.q[i][0], s.q[i][1], s.q[i][2], s.q[i][3]);
        let cd = s.chi_dot_row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        Vector3::from(s.omega[i]).norm() < thr && quat_error(&q, &q_ref).norm() < thr && cd < thr
    };
    let mut start: Option<f64> = None;
    for i in 0..s.len() {
        if s.t[i] < sc.controller.start {
            continue;
        }
        if ok(i) {
            let t0 = *start.get_or_insert(s.t[i]);
            if s.t[i] - t0 >= sc.metrics.recovery_hold - 1e-9 {
                return Some(t0);
            }
        } else {
            start = None;
        }
    }
    None
}

/// Least-squares fit of `ln E_vib` over `[a, b]`; returns `8 / r` for a decay rate `r > 0`.
fn settling_fit(s: &Series, a: f64, b: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (0..s.len())
        .filter(|&i| s.t[i] >= a && s.t[i] <= b && s.vibrational[i] > 0.0)
        .map(|i| (s.t[i], s.vibrational[i].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0 / n, y + p.1 / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(u, v), p| (u + (p.0 - mt) * (p.1 - my), v + (p.0 - mt).powi(2)));
    let r = -sxy / sxx;
    (r > 0.0).then(|| 8.0 / r)
}

/// One row of the validation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub case: u8,
    pub t: f64,
    pub quantity: String,
    pub expected: f64,
    pub simulated: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationRow {
    fn new(case: u8, t: f64, quantity: impl Into<String>, expected: f64, simulated: f64, tolerance: f64) -> Self {
        let abs_error = (expected - simulated).abs();
        let rel_error = if expected != 0.0 { abs_error / expected.abs() } else { abs_error };
        Self {
            case,
            t,
            quantity: quantity.into(),
            expected,
            simulated,
            abs_error,
            rel_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }

    /// Row whose check is the relative drift `simulated` against zero.
    fn drift(case: u8, t: f64, quantity: &str, drift: f64, tolerance: f64) -> Self {
        Self {
            case,
            t,
            quantity: quantity.into(),
            expected: 0.0,
            simulated: drift,
            abs_error: drift,
            rel_error: drift,
            tolerance,
            pass: drift <= tolerance,
        }
    }
}

/// Outcome of one validation case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: u8,
    pub pass: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub cases: Vec<CaseOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv_writer(Vec::new());
        w.write_record([
            "case",
            "t_s",
            "quantity",
            "expected",
            "simulated",
            "abs_error",
            "rel_error",
            "tolerance",
            "pass",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.case.to_string(),
                fmt(r.t),
                r.quantity.clone(),
                fmt(r.expected),
                fmt(r.simulated),
                fmt(r.abs_error),
                fmt(r.rel_error),
                fmt(r.tolerance),
                r.pass.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| AttError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ascii csv"))
    }

    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let worst = self
                .rows
                .iter()
                .filter(|r| r.case == c.case)
                .map(|r| r.abs_error)
                .fold(0.0f64, f64::max);
            let status = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!(
                "case {:>2}  {status}  worst error {worst:.3e}  ({:.2} s)",
                c.case, c.wall_time
            ));
            if let Some(e) = &c.error {
                out.push_str(&format!("  error: {e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Analytic comparison tolerance of a rigid case at time `t`.
pub fn analytic_tolerance(case: u8, t: f64) -> f64 {
    match case {
        7 | 8 => 1e-5,
        _ if t > 1000.0 => 1e-5,
        _ => 1e-6,
    }
}

pub const DRIFT_TOLERANCE: f64 = 1e-6;
const ZERO_TOLERANCE: f64 = 1e-12;

fn validation_rows(case: u8, rec: &RunRecord) -> Result<Vec<ValidationRow>> {
    let sc = &rec.scenario;
    let s = &rec.series;
    let mut rows = Vec::new();
    if let Some(p) = &sc.analytic {
        for t in [10.0, 100.0, 1000.0, 10000.0] {
            if t > sc.duration {
                continue;
            }
            let i = s.index_at(t).ok_or_else(|| AttError::Scenario("empty series".into()))?;
            let w = analytic_solution(p, s.t[i])?;
            for (k, name) in ["wx", "wy", "wz"].iter().enumerate() {
                rows.push(ValidationRow::new(
                    case,
                    s.t[i],
                    *name,
                    w[k],
                    s.omega[i][k],
                    analytic_tolerance(case, t),
                ));
            }
        }
        return Ok(rows);
    }
    let end = s.final_time();
    match case {
        10 | 11 => {
            let w = s.omega.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
            let c = s.chi.iter().chain(&s.chi_dot).fold(0.0f64, |a, x| a.max(x.abs()));
            rows.push(ValidationRow::new(case, end, "max |w|", 0.0, w, ZERO_TOLERANCE));
            rows.push(ValidationRow::new(case, end, "max |chi|", 0.0, c, ZERO_TOLERANCE));
        }
        12..=14 => {
            let w0 = sc.initial.omega;
            let dw = s
                .omega
                .iter()
                .flat_map(|w| (0..3).map(move |k| (w[k] - w0[k]).abs()))
                .fold(0.0f64, f64::max);
            rows.push(ValidationRow::new(case, end, "max |w - w0|", 0.0, dw, 1e-9));
            rows.push(ValidationRow::new(
                case,
                0.0,
                "energy",
                s.total_energy(0),
                s.total_energy(s.len() - 1),
                1e-9 * s.total_energy(0),
            ));
            rows.push(ValidationRow::drift(case, end, "energy drift", rec.summary.energy_drift, 1e-9));
        }
        _ => {
            rows.push(ValidationRow::drift(
                case,
                end,
                "energy drift",
                rec.summary.energy_drift,
                DRIFT_TOLERANCE,
            ));
            rows.push(ValidationRow::drift(
                case,
                end,
                "momentum drift",
                rec.summary.momentum_drift,
                DRIFT_TOLERANCE,
            ));
        }
    }
    Ok(rows)
}

impl Series {
    fn final_time(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }
}

type CaseRun = (RunRecord, Vec<ValidationRow>);

/// Runs validation presets concurrently; `cases = None` runs all sixteen.
pub fn validate_all(cases: Option<&[u8]>) -> Result<ValidationReport> {
    let list: Vec<u8> = cases.map(|c| c.to_vec()).unwrap_or_else(|| (1..=16).collect());
    let scenarios = list
        .iter()
        .map(|&c| Scenario::validation(c).map(|s| (c, s)))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<(u8, Result<CaseRun>)> = scenarios
        .par_iter()
        .map(|(c, sc)| {
            let r = run(sc).and_then(|rec| {
                let rows = validation_rows(*c, &rec)?;
                Ok((rec, rows))
            });
            (*c, r)
        })
        .collect();
    let mut report = ValidationReport::default();
    for (case, r) in results {
        match r {
            Ok((rec, rows)) => {
                report.cases.push(CaseOutcome {
                    case,
                    pass: rows.iter().all(|r| r.pass),
                    wall_time: rec.wall_time,
                    error: None,
                });
                report.rows.extend(rows);
            }
            Err(e) => report.cases.push(CaseOutcome {
                case,
                pass: false,
                wall_time: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(report)
}

/// Runs independent scenarios concurrently; results keep the input order.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<RunRecord>> {
    scenarios.par_iter().map(run).collect()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Writes the series as CSV (17 significant digits, LF line endings).
pub fn write_csv<W: std::io::Write>(rec: &RunRecord, w: W) -> Result<()> {
    let s = &rec.series;
    let mut w = csv_writer(w);
    w.write_record(s.header())?;
    let stride = rec
        .scenario
        .export_dt
        .map(|e| (e / rec.scenario.report_dt).round().max(1.0) as usize)
        .unwrap_or(1);
    for i in (0..s.len()).step_by(stride) {
        w.write_record(s.row(i).into_iter().map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`export`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExportPaths {
    pub csv: PathBuf,
    pub scenario: PathBuf,
    pub summary: PathBuf,
}

/// Writes `<name>.csv`, the resolved `<name>.scenario.toml` and `<name>.summary.toml` into `dir`.
pub fn export(rec: &RunRecord, dir: impl AsRef<Path>) -> Result<ExportPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let stem = &rec.scenario.name;
    let paths = ExportPaths {
        csv: dir.join(format!("{stem}.csv")),
        scenario: dir.join(format!("{stem}.scenario.toml")),
        summary: dir.join(format!("{stem}.summary.toml")),
    };
    write_csv(rec, std::io::BufWriter::new(std::fs::File::create(&paths.csv)?))?;
    std::fs::write(&paths.scenario, rec.scenario.to_toml_string()?)?;
    std::fs::write(&paths.summary, toml::to_string(&rec.summary)?)?;
    Ok(paths)
}

/// Final state of a run as a [`FlexState`].
pub fn final_state(rec: &RunRecord) -> Option<FlexState> {
    let s = &rec.series;
    let i = s.len().checked_sub(1)?;
    let q = s.q[i];
    Some(FlexState {
        q: crate::quat::Quaternion::new(q[0], q[1], q[2], q[3]),
        omega: Vector3::from(s.omega[i]),
        chi: DVector::from_column_slice(s.chi_row(i)),
        chi_dot: DVector::from_column_slice(s.chi_dot_row(i)),
    })
}
