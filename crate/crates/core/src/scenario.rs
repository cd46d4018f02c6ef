//! Declarative scenario files and the built-in preset catalog.
//!
//! A scenario is a TOML document with nested sections; see the preset files
//! under `presets/` for complete examples.

use crate::control::{ControllerGains, FlcController, TorquePulse};
use crate::env::EnvironmentConfig;
use crate::error::{AttError, Result};
use crate::flex::{Appendage, AppendageSpec, FlexState, FlexibleSpacecraft};
use crate::integrate::SolverConfig;
use crate::quat::{EulerSequence, Quaternion};
use crate::rigid::{AnalyticCaseParams, RigidBody};
use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn mat3(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// One plate appendage; matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendageFile {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub rho: f64,
    pub e: f64,
    pub poisson: f64,
    #[serde(default)]
    pub damping: f64,
    pub d: [f64; 3],
    #[serde(default = "identity3")]
    pub rotation: [[f64; 3]; 3],
    pub p: usize,
    pub q: usize,
}

impl AppendageFile {
    pub fn spec(&self) -> AppendageSpec {
        AppendageSpec {
            a: self.a,
            b: self.b,
            h: self.h,
            rho: self.rho,
            e: self.e,
            poisson: self.poisson,
            damping: self.damping,
            d: Vector3::from(self.d),
            rotation: mat3(&self.rotation),
            p: self.p,
            q: self.q,
        }
    }
}

/// Mass geometry of the simulated spacecraft.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpacecraftSpec {
    Rigid {
        inertia: [[f64; 3]; 3],
        #[serde(default)]
        h_w: [f64; 3],
    },
    Flexible {
        bus_inertia: [[f64; 3]; 3],
        bus_mass: f64,
        #[serde(default)]
        h_w: [f64; 3],
        #[serde(default)]
        appendages: Vec<AppendageFile>,
    },
}

/// Simulation plant built from a [`SpacecraftSpec`].
#[derive(Clone, Debug)]
pub enum Plant {
    Rigid(RigidBody),
    Flexible(FlexibleSpacecraft),
}

impl Plant {
    pub fn n_modes(&self) -> usize {
        match self {
            Plant::Rigid(_) => 0,
            Plant::Flexible(sc) => sc.n_modes(),
        }
    }

    pub fn state_len(&self) -> usize {
        7 + 2 * self.n_modes()
    }

    /// Inertia about the body frame at the given deflection.
    pub fn inertia(&self, chi: &DVector<f64>) -> Matrix3<f64> {
        match self {
            Plant::Rigid(b) => *b.inertia(),
            Plant::Flexible(sc) => sc.total_inertia(chi),
        }
    }
}

impl SpacecraftSpec {
    pub fn build(&self) -> Result<Plant> {
        Ok(match self {
            SpacecraftSpec::Rigid { inertia, h_w } => Plant::Rigid(RigidBody::new(mat3(inertia), Vector3::from(*h_w))?),
            SpacecraftSpec::Flexible {
                bus_inertia,
                bus_mass,
                h_w,
                appendages,
            } => {
                let apps = appendages.iter().map(|a| Appendage::new(a.spec())).collect::<Result<Vec<_>>>()?;
                Plant::Flexible(FlexibleSpacecraft::new(mat3(bus_inertia), *bus_mass, apps, Vector3::from(*h_w))?)
            }
        })
    }

    pub fn appendages(&self) -> &[AppendageFile] {
        match self {
            SpacecraftSpec::Rigid { .. } => &[],
            SpacecraftSpec::Flexible { appendages, .. } => appendages,
        }
    }
}

/// Initial attitude, rate and modal state; empty modal vectors mean rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub q: [f64; 4],
    pub omega: [f64; 3],
    pub chi: Vec<f64>,
    pub chi_dot: Vec<f64>,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
            omega: [0.0; 3],
            chi: Vec::new(),
            chi_dot: Vec::new(),
        }
    }
}

/// Orbit and environment model for the natural disturbance torques.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// Circular orbit altitude in meters.
    pub altitude: f64,
    #[serde(default)]
    pub inclination_deg: f64,
    #[serde(default)]
    pub model: EnvironmentConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    #[default]
    None,
    RigidFlc,
    FlexibleFlc,
}

/// Recovery controller settings; scalar gains multiply the identity (attitude) and
/// all-ones (vibration) gain matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub kp: f64,
    pub kd: f64,
    pub kp_chi: f64,
    pub kd_chi: f64,
    pub tau_max: f64,
    pub start: f64,
    pub uncertainty: f64,
    /// Controller `(p, q)` per appendage; `None` uses the plant modes.
    pub modes: Option<[usize; 2]>,
    pub q_ref: [f64; 3],
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::None,
            kp: 0.08,
            kd: 0.57,
            kp_chi: 0.0,
            kd_chi: 0.0,
            tau_max: 50.0,
            start: 0.0,
            uncertainty: 0.0,
            modes: None,
            q_ref: [0.0; 3],
        }
    }
}

/// Deflection probe on one appendage, in appendage coordinates (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub name: String,
    #[serde(default)]
    pub appendage: usize,
    pub x: f64,
    pub y: f64,
}

/// Summary-metric settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub recovery_threshold: f64,
    pub recovery_hold: f64,
    /// Start of the conservation-drift window; `None` uses the end of the last pulse.
    pub drift_from: Option<f64>,
    /// Window for the exponential fit of the vibrational energy.
    pub settle_window: Option<[f64; 2]>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            recovery_threshold: 1e-3,
            recovery_hold: 10.0,
            drift_from: None,
            settle_window: None,
        }
    }
}

fn default_report_dt() -> f64 {
    0.01
}

fn default_sequence() -> [u8; 3] {
    [3, 2, 1]
}

/// One validation case or recovery maneuver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Simulated time span in seconds, starting at zero.
    pub duration: f64,
    #[serde(default = "default_report_dt")]
    pub report_dt: f64,
    /// Row spacing of exported files; `None` exports every reported row.
    #[serde(default)]
    pub export_dt: Option<f64>,
    #[serde(default = "default_sequence")]
    pub euler_sequence: [u8; 3],
    pub spacecraft: SpacecraftSpec,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub disturbances: Vec<TorquePulse>,
    /// Closed-form rigid case whose torque law drives the run and whose solution is the reference.
    #[serde(default)]
    pub analytic: Option<AnalyticCaseParams>,
    #[serde(default)]
    pub environment: Option<EnvironmentSpec>,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub probes: Vec<Probe>,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../presets/", $name, ".toml")))),*]
    };
}

static PRESETS: &[(&str, &str)] = presets!(
    "validation-01",
    "validation-02",
    "validation-03",
    "validation-04",
    "validation-05",
    "validation-06",
    "validation-07",
    "validation-08",
    "validation-09",
    "validation-10",
    "validation-11",
    "validation-12",
    "validation-13",
    "validation-14",
    "validation-15",
    "validation-16",
    "arm-01",
    "arm-02",
    "arm-03",
    "arm-04",
    "arm-05",
    "arm-06",
    "arm-07",
    "arm-08",
    "arm-09",
    "arm-10",
    "arm-11",
    "arm-12",
    "arm-13",
);

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, src) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| AttError::Scenario(format!("unknown preset '{name}'")))?;
        Self::from_toml_str(src)
    }

    /// Validation case `1..=16`.
    pub fn validation(case: u8) -> Result<Self> {
        Self::preset(&format!("validation-{case:02}"))
    }

    /// Recovery maneuver `1..=13`.
    pub fn arm(case: u8) -> Result<Self> {
        Self::preset(&format!("arm-{case:02}"))
    }

    pub fn sequence(&self) -> Result<EulerSequence> {
        EulerSequence::try_from(self.euler_sequence)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AttError::Scenario(format!("{}: {m}", self.name)));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(self.report_dt > 0.0) {
            return bad("report_dt must be positive".into());
        }
        if let Some(e) = self.export_dt {
            if !(e >= self.report_dt) {
                return bad("export_dt must be at least report_dt".into());
            }
        }
        self.sequence()?;
        self.solver.validate()?;
        for p in &self.disturbances {
            if !(p.duration >= 0.0 && p.start >= 0.0) {
                return bad("disturbance pulses need non-negative start and duration".into());
            }
        }
        if let Some(a) = &self.analytic {
            a.validate()?;
            if !matches!(self.spacecraft, SpacecraftSpec::Rigid { .. }) {
                return bad("analytic reference requires a rigid spacecraft".into());
            }
        }
        if let Some(env) = &self.environment {
            env.model.validate()?;
            if !(env.altitude > 0.0) {
                return bad("orbit altitude must be positive".into());
            }
        }
        let apps = self.spacecraft.appendages();
        for pr in &self.probes {
            let Some(a) = apps.get(pr.appendage) else {
                return bad(format!("probe '{}' names missing appendage {}", pr.name, pr.appendage));
            };
            if !(0.0..=a.a).contains(&pr.x) || !(0.0..=a.b).contains(&pr.y) {
                return bad(format!("probe '{}' lies outside the appendage", pr.name));
            }
        }
        let n: usize = apps.iter().map(|a| a.p * a.q).sum();
        for (label, v) in [("chi", &self.initial.chi), ("chi_dot", &self.initial.chi_dot)] {
            if !v.is_empty() && v.len() != n {
                return bad(format!("initial {label} has {} entries, plant has {n} modes", v.len()));
            }
        }
        let c = &self.controller;
        match (c.kind, &self.spacecraft) {
            (ControllerKind::FlexibleFlc, SpacecraftSpec::Rigid { .. }) => {
                return bad("flexible controller requires a flexible spacecraft".into())
            }
            (ControllerKind::None, _) => {}
            _ => {
                if !(c.tau_max > 0.0 && c.start >= 0.0 && c.uncertainty > -1.0) {
                    return bad("controller needs tau_max > 0, start >= 0, uncertainty > -1".into());
                }
            }
        }
        Ok(())
    }

    pub fn build_plant(&self) -> Result<Plant> {
        self.spacecraft.build()
    }

    pub fn initial_state(&self, plant: &Plant) -> Result<FlexState> {
        let n = plant.n_modes();
        let [q0, q1, q2, q3] = self.initial.q;
        let (q, _) = Quaternion::new(q0, q1, q2, q3).checked_unit();
        let v = |x: &Vec<f64>| {
            if x.is_empty() {
                DVector::zeros(n)
            } else {
                DVector::from_column_slice(x)
            }
        };
        Ok(FlexState {
            q,
            omega: Vector3::from(self.initial.omega),
            chi: v(&self.initial.chi),
            chi_dot: v(&self.initial.chi_dot),
        })
    }

    pub fn build_controller(&self, plant: &Plant) -> Result<Option<FlcController>> {
        let c = &self.controller;
        let ctrl = match (c.kind, plant) {
            (ControllerKind::None, _) => return Ok(None),
            (ControllerKind::RigidFlc, _) => {
                let i = plant.inertia(&DVector::zeros(plant.n_modes()));
                let body = RigidBody::new(i, Vector3::zeros())?;
                FlcController::rigid(body, ControllerGains::rigid(c.kp, c.kd, c.tau_max))?
            }
            (ControllerKind::FlexibleFlc, Plant::Flexible(sc)) => match c.modes {
                Some([p, q]) => {
                    let n = sc.appendages.len() * p * q;
                    let g = ControllerGains::flexible(c.kp, c.kd, c.kp_chi, c.kd_chi, n, c.tau_max);
                    FlcController::low_order(sc, p, q, g)?
                }
                None => {
                    let g = ControllerGains::flexible(c.kp, c.kd, c.kp_chi, c.kd_chi, sc.n_modes(), c.tau_max);
                    FlcController::flexible(sc.clone(), g)?
                }
            },
            (ControllerKind::FlexibleFlc, Plant::Rigid(_)) => {
                return Err(AttError::Scenario("flexible controller requires a flexible spacecraft".into()))
            }
        };
        Ok(Some(ctrl.with_uncertainty(c.uncertainty).with_reference(Vector3::from(c.q_ref))))
    }

    /// Times at which the applied torque may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.disturbances.iter().flat_map(|p| [p.start, p.end()]).collect();
        if self.controller.kind != ControllerKind::None {
            b.push(self.controller.start);
        }
        if let Some(a) = &self.analytic {
            if matches!(a.case_id, 6 | 9) {
                b.extend([a.t1, a.t2]);
            }
        }
        b
    }

    /// Sum of scheduled pulses and the analytic torque law at time `t`.
    pub fn scheduled_torque(&self, t: f64) -> Vector3<f64> {
        let mut tau: Vector3<f64> = self.disturbances.iter().map(|p| p.at(t)).sum();
        if let Some(a) = &self.analytic {
            tau += a.torque(t);
        }
        tau
    }

    pub fn last_pulse_end(&self) -> f64 {
        let mut end = self.disturbances.iter().map(|p| p.end()).fold(0.0, f64::max);
        if let Some(a) = &self.analytic {
            if matches!(a.case_id, 6 | 9) {
                end = end.max(a.t2);
            }
        }
        end
    }
}
