//! Feedback-linearization attitude recovery for rigid and flexible spacecraft.
//!
//! The output is the quaternion vector part. With `v` the new input, the controller
//! commands `tau = G_q^-1 (-f_q + v)` so that `q_ddot = v` holds for the exact model, and
//! `v = q_ddot_ref + K_Pq q_e + K_Dq q_dot_e + K_Pchi chi + K_Dchi chi_dot`.
//!
//! The modal terms feed the deflections back with a plus sign so that positive
//! all-ones gains damp the appendage modes for deflections measured along the
//! appendage `+z` axis.

use crate::error::{AttError, Result};
use crate::flex::{FlexState, FlexibleSpacecraft};
use crate::quat::{quat_rate, Quaternion};
use crate::rigid::{quat_blocks_from_rate_form, rigid_drift, QuatBlocks, RigidBody};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Controller gains. Modal gains have one column per controller mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerGains {
    pub kp_q: Matrix3<f64>,
    pub kd_q: Matrix3<f64>,
    pub kp_chi: DMatrix<f64>,
    pub kd_chi: DMatrix<f64>,
    pub tau_max: f64,
}

impl ControllerGains {
    /// Diagonal attitude gains `kp I`, `kd I` and no modal feedback.
    pub fn rigid(kp: f64, kd: f64, tau_max: f64) -> Self {
        Self {
            kp_q: Matrix3::identity() * kp,
            kd_q: Matrix3::identity() * kd,
            kp_chi: DMatrix::zeros(3, 0),
            kd_chi: DMatrix::zeros(3, 0),
            tau_max,
        }
    }

    /// Attitude gains plus all-ones modal gains scaled by `kp_chi`, `kd_chi`.
    pub fn flexible(kp: f64, kd: f64, kp_chi: f64, kd_chi: f64, n_modes: usize, tau_max: f64) -> Self {
        Self {
            kp_chi: DMatrix::from_element(3, n_modes, kp_chi),
            kd_chi: DMatrix::from_element(3, n_modes, kd_chi),
            ..Self::rigid(kp, kd, tau_max)
        }
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        for (name, k) in [("K_Pq", &self.kp_q), ("K_Dq", &self.kd_q)] {
            let off = *k - Matrix3::from_diagonal(&k.diagonal());
            if off.amax() != 0.0 || k.diagonal().iter().any(|d| !(*d > 0.0)) {
                return Err(AttError::InvalidInput(format!("{name} must be diagonal positive definite")));
            }
        }
        for (name, k) in [("K_Pchi", &self.kp_chi), ("K_Dchi", &self.kd_chi)] {
            if k.nrows() != 3 || k.ncols() != n_modes {
                return Err(AttError::InvalidInput(format!(
                    "{name} is {}x{}, expected 3x{n_modes}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        if !(self.tau_max > 0.0) {
            return Err(AttError::InvalidInput("tau_max must be positive".into()));
        }
        Ok(())
    }
}

/// Rectangular torque pulse applied in the body frame on `[start, start + duration)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorquePulse {
    pub torque: [f64; 3],
    pub start: f64,
    pub duration: f64,
}

impl TorquePulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        if t >= self.start && t < self.end() {
            Vector3::from(self.torque)
        } else {
            Vector3::zeros()
        }
    }
}

/// Disturbance schedule, control start and reference attitude of a recovery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryScenario {
    #[serde(default)]
    pub disturbances: Vec<TorquePulse>,
    pub control_start: f64,
    #[serde(default)]
    pub q_ref: [f64; 3],
}

impl RecoveryScenario {
    pub fn disturbance(&self, t: f64) -> Vector3<f64> {
        self.disturbances.iter().map(|p| p.at(t)).sum()
    }

    /// Times at which the applied torque may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.disturbances.iter().flat_map(|p| [p.start, p.end()]).collect();
        b.push(self.control_start);
        b
    }
}

/// `q_e = q_ref - q` on the vector parts.
pub fn quat_error(q: &Quaternion, q_ref: &Vector3<f64>) -> Vector3<f64> {
    q_ref - q.q
}

/// Componentwise clamp to `[-tau_max, tau_max]`.
pub fn saturate(tau: &Vector3<f64>, tau_max: f64) -> Vector3<f64> {
    tau.map(|t| t.clamp(-tau_max, tau_max))
}

/// Dynamics model held by the controller.
#[derive(Clone, Debug)]
pub enum ControlModel {
    Rigid(RigidBody),
    Flexible(FlexibleSpacecraft),
}

/// Commanded (pre-saturation) and applied torque.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    pub commanded: Vector3<f64>,
    pub applied: Vector3<f64>,
}

/// Feedback-linearizing controller with optional model uncertainty and reduced modal model.
#[derive(Clone, Debug)]
pub struct FlcController {
    pub model: ControlModel,
    pub gains: ControllerGains,
    pub q_ref: Vector3<f64>,
    /// `f_q` and `G_q` of the internal model are scaled by `1 + uncertainty`.
    pub uncertainty: f64,
    /// Plant modal indices read by the controller, per controller mode.
    mode_map: Vec<usize>,
}

impl FlcController {
    pub fn rigid(body: RigidBody, gains: ControllerGains) -> Result<Self> {
        gains.validate(0)?;
        body.inverse_inertia()?;
        Ok(Self {
            model: ControlModel::Rigid(body),
            gains,
            q_ref: Vector3::zeros(),
            uncertainty: 0.0,
            mode_map: Vec::new(),
        })
    }

    /// Controller whose internal model equals the plant.
    pub fn flexible(sc: FlexibleSpacecraft, gains: ControllerGains) -> Result<Self> {
        let map = (0..sc.n_modes()).collect();
        Self::flexible_mapped(sc, gains, map)
    }

    /// Controller built on a reduced `(p', q')` copy of `plant`; the plant state is projected
    /// onto the retained `(r, s)` modes.
    pub fn low_order(plant: &FlexibleSpacecraft, p: usize, q: usize, gains: ControllerGains) -> Result<Self> {
        let mut apps = Vec::with_capacity(plant.appendages.len());
        let mut map = Vec::new();
        for (i, app) in plant.appendages.iter().enumerate() {
            let (pp, qq) = (app.spec.p, app.spec.q);
            if p > pp || q > qq || p == 0 || q == 0 {
                return Err(AttError::InvalidInput(format!(
                    "controller modes {p}x{q} exceed plant modes {pp}x{qq}"
                )));
            }
            let off = plant.block(i).start;
            for r in 0..p {
                for s in 0..q {
                    map.push(off + r * qq + s);
                }
            }
            let mut spec = app.spec.clone();
            spec.p = p;
            spec.q = q;
            apps.push(crate::flex::Appendage::new(spec)?);
        }
        let sc = FlexibleSpacecraft::new(plant.bus_inertia, plant.bus_mass, apps, plant.h_w)?;
        Self::flexible_mapped(sc, gains, map)
    }

    fn flexible_mapped(sc: FlexibleSpacecraft, gains: ControllerGains, mode_map: Vec<usize>) -> Result<Self> {
        gains.validate(sc.n_modes())?;
        Ok(Self {
            model: ControlModel::Flexible(sc),
            gains,
            q_ref: Vector3::zeros(),
            uncertainty: 0.0,
            mode_map,
        })
    }

    pub fn with_uncertainty(mut self, factor: f64) -> Self {
        self.uncertainty = factor;
        self
    }

    pub fn with_reference(mut self, q_ref: Vector3<f64>) -> Self {
        self.q_ref = q_ref;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.mode_map.len()
    }

    fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(&k) = self.mode_map.iter().find(|&&k| k >= v.len()) {
            return Err(AttError::InvalidInput(format!(
                "plant state has {} modes, controller reads index {k}",
                v.len()
            )));
        }
        Ok(DVector::from_iterator(self.mode_map.len(), self.mode_map.iter().map(|&k| v[k])))
    }

    /// Quaternion-form blocks of the internal model, before uncertainty scaling.
    pub fn model_blocks(&self, s: &FlexState) -> Result<QuatBlocks> {
        match &self.model {
            ControlModel::Rigid(body) => {
                let a_w = rigid_drift(body, &s.omega)?;
                let g_w = *body.inverse_inertia()?;
                Ok(quat_blocks_from_rate_form(&s.q, &s.omega, &a_w, &g_w))
            }
            ControlModel::Flexible(sc) => {
                let cs = FlexState {
                    q: s.q,
                    omega: s.omega,
                    chi: self.project(&s.chi)?,
                    chi_dot: self.project(&s.chi_dot)?,
                };
                Ok(sc.flex_quat_form(&cs)?.quat)
            }
        }
    }

    /// New input `v` for the linearized output dynamics.
    pub fn new_input(&self, s: &FlexState) -> Result<Vector3<f64>> {
        let qd = quat_rate(&s.q, &s.omega);
        let e = quat_error(&s.q, &self.q_ref);
        let ed = -qd.q;
        let mut v = self.gains.kp_q * e + self.gains.kd_q * ed;
        if self.n_modes() > 0 {
            let m = &self.gains.kp_chi * self.project(&s.chi)? + &self.gains.kd_chi * self.project(&s.chi_dot)?;
            v += Vector3::new(m[0], m[1], m[2]);
        }
        Ok(v)
    }

    /// Control torque for state `s`.
    pub fn torque(&self, s: &FlexState) -> Result<ControlOutput> {
        if s.q.q0.abs() < 1e-6 {
            return Err(AttError::Singular {
                what: format!("decoupling matrix G_q (q0 = {:.3e})", s.q.q0),
            });
        }
        let blk = self.model_blocks(s)?;
        let k = 1.0 + self.uncertainty;
        let f = blk.f_q * k;
        let g = blk.g_q * k;
        let v = self.new_input(s)?;
        let commanded = g.lu().solve(&(v - f)).ok_or_else(|| AttError::Singular {
            what: "decoupling matrix G_q".into(),
        })?;
        Ok(ControlOutput {
            commanded,
            applied: saturate(&commanded, self.gains.tau_max),
        })
    }
}

/// Response of `e'' + kd e' + kp e = 0` from `(e0, ed0)`, evaluated at `t`.
pub fn pd_error_response(kp: f64, kd: f64, e0: f64, ed0: f64, t: f64) -> f64 {
    let disc = kd * kd - 4.0 * kp;
    let sigma = -kd / 2.0;
    if disc.abs() < 1e-14 * kd * kd.max(1.0) {
        (e0 + (ed0 - sigma * e0) * t) * (sigma * t).exp()
    } else if disc > 0.0 {
        let r = disc.sqrt() / 2.0;
        let (s1, s2) = (sigma + r, sigma - r);
        let c1 = (ed0 - s2 * e0) / (s1 - s2);
        let c2 = e0 - c1;
        c1 * (s1 * t).exp() + c2 * (s2 * t).exp()
    } else {
        let wd = (-disc).sqrt() / 2.0;
        (sigma * t).exp() * (e0 * (wd * t).cos() + (ed0 - sigma * e0) / wd * (wd * t).sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flex::{Appendage, AppendageSpec};
    use crate::integrate::{integrate, Schedule, SolverConfig};
    use crate::quat::quat_to_dcm;
    use crate::rigid::rigid_state_derivative;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn arm_body() -> RigidBody {
        RigidBody::new(
            Matrix3::new(143.3, 60.0, 30.0, 60.0, 193.3, -35.0, 30.0, -35.0, 273.3),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn arm_flex(p: usize) -> FlexibleSpacecraft {
        let app = Appendage::new(AppendageSpec {
            a: 1.0,
            b: 10.0,
            h: 0.02,
            rho: 10.0,
            e: 5e8,
            poisson: 0.3,
            damping: 0.05,
            d: Vector3::new(-0.5, 0.5, 0.0),
            rotation: Matrix3::identity(),
            p,
            q: p,
        })
        .unwrap();
        FlexibleSpacecraft::new(Matrix3::identity() * (2000.0 / 6.0), 2000.0, vec![app], Vector3::zeros()).unwrap()
    }

    #[test]
    fn quat_error_examples() {
        assert_eq!(quat_error(&Quaternion::identity(), &Vector3::zeros()), Vector3::zeros());
        assert_eq!(
            quat_error(&Quaternion::new(0.6, 0.8, 0.0, 0.0), &Vector3::zeros()),
            Vector3::new(-0.8, 0.0, 0.0)
        );
        assert_eq!(
            quat_error(&Quaternion::new(-1.0, 0.0, 0.0, 0.0), &Vector3::zeros()),
            Vector3::zeros()
        );
        assert_eq!(quat_to_dcm(&Quaternion::new(-1.0, 0.0, 0.0, 0.0)), Matrix3::identity());
    }

    #[test]
    fn saturation_examples() {
        let t = Vector3::new(10.0, 100.0, -100.0);
        assert_eq!(saturate(&t, 50.0), Vector3::new(10.0, 50.0, -50.0));
        assert_eq!(saturate(&t, f64::INFINITY), t);
    }

    #[test]
    fn zero_torque_at_equilibrium() {
        let c = FlcController::rigid(arm_body(), ControllerGains::rigid(0.08, 0.57, 50.0)).unwrap();
        assert_eq!(c.torque(&FlexState::rest(0)).unwrap().applied, Vector3::zeros());
        let sc = arm_flex(2);
        let c = FlcController::flexible(sc, ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 4, 50.0)).unwrap();
        assert_eq!(c.torque(&FlexState::rest(4)).unwrap().applied.amax(), 0.0);
    }

    #[test]
    fn uncertainty_zero_is_identity() {
        let c = FlcController::rigid(arm_body(), ControllerGains::rigid(0.08, 0.57, 50.0)).unwrap();
        let s = FlexState {
            q: Quaternion::new(0.9, 0.3, -0.2, 0.1).normalized(),
            omega: Vector3::new(0.1, -0.2, 0.05),
            chi: DVector::zeros(0),
            chi_dot: DVector::zeros(0),
        };
        let t0 = c.torque(&s).unwrap();
        let t1 = c.clone().with_uncertainty(0.0).torque(&s).unwrap();
        assert_eq!(t0, t1);
        let t2 = c.with_uncertainty(0.5).torque(&s).unwrap();
        assert!((t2.commanded - t0.commanded).norm() > 1e-3);
    }

    #[test]
    fn low_order_full_size_matches_flexible() {
        let sc = arm_flex(2);
        let g = ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 4, 50.0);
        let full = FlcController::flexible(sc.clone(), g.clone()).unwrap();
        let low = FlcController::low_order(&sc, 2, 2, g).unwrap();
        let s = FlexState {
            q: Quaternion::new(0.95, 0.1, 0.2, -0.1).normalized(),
            omega: Vector3::new(0.01, 0.02, -0.03),
            chi: DVector::from_vec(vec![0.01, -0.02, 0.005, 0.001]),
            chi_dot: DVector::from_vec(vec![0.001, 0.002, -0.001, 0.0]),
        };
        assert_eq!(full.torque(&s).unwrap(), low.torque(&s).unwrap());
        let one = FlcController::low_order(&sc, 1, 1, ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 1, 50.0)).unwrap();
        assert_eq!(one.n_modes(), 1);
        assert!(one.torque(&s).unwrap().commanded.iter().all(|v| v.is_finite()));
        assert!(FlcController::low_order(&sc, 3, 1, ControllerGains::flexible(0.08, 0.57, 0.0, 0.0, 3, 50.0)).is_err());
    }

    #[test]
    fn singular_decoupling_flagged() {
        let c = FlcController::rigid(arm_body(), ControllerGains::rigid(0.08, 0.57, 50.0)).unwrap();
        let s = FlexState {
            q: Quaternion::new(0.0, 1.0, 0.0, 0.0),
            ..FlexState::rest(0)
        };
        assert!(c.torque(&s).is_err());
    }

    #[test]
    fn exact_rigid_loop_follows_linear_error_dynamics() {
        let body = arm_body();
        let c = FlcController::rigid(body.clone(), ControllerGains::rigid(0.08, 0.57, f64::INFINITY)).unwrap();
        let q0 = Quaternion::new(0.9, 0.2, -0.3, 0.1).normalized();
        let w0 = Vector3::new(0.02, -0.01, 0.03);
        let y0 = FlexState {
            q: q0,
            omega: w0,
            chi: DVector::zeros(0),
            chi_dot: DVector::zeros(0),
        }
        .to_vec();
        let cfg = SolverConfig {
            rel_tol: 1e-11,
            ..SolverConfig::abm()
        };
        let tr = integrate(
            |_t, y: &[f64], out: &mut [f64]| {
                let s = FlexState::from_slice(y)?;
                let tau = c.torque(&s)?.applied;
                rigid_state_derivative(&body, y, &tau, out)
            },
            &y0,
            &Schedule::new(0.0, 60.0, Some(5.0)),
            &cfg,
        )
        .unwrap();
        let qd0 = quat_rate(&q0, &w0);
        for (t, x) in tr.t.iter().zip(&tr.x) {
            for k in 0..3 {
                let expect = pd_error_response(0.08, 0.57, -q0.q[k], -qd0.q[k], *t);
                assert!((-x[1 + k] - expect).abs() < 1e-6, "t {t} axis {k}");
            }
        }
    }

    #[test]
    fn pd_response_regimes() {
        for (kp, kd) in [(0.08, 0.57), (1.0, 2.0), (4.0, 0.5)] {
            let (e0, ed0) = (0.3, -0.1);
            assert_relative_eq!(pd_error_response(kp, kd, e0, ed0, 0.0), e0, epsilon = 1e-15);
            let h = 1e-6;
            let d = (pd_error_response(kp, kd, e0, ed0, h) - pd_error_response(kp, kd, e0, ed0, -h)) / (2.0 * h);
            assert_relative_eq!(d, ed0, epsilon = 1e-8);
            let t = 1.7;
            let f = |t| pd_error_response(kp, kd, e0, ed0, t);
            let dd = (f(t + 1e-4) - 2.0 * f(t) + f(t - 1e-4)) / 1e-8;
            let d1 = (f(t + 1e-4) - f(t - 1e-4)) / 2e-4;
            assert!((dd + kd * d1 + kp * f(t)).abs() < 1e-5);
        }
    }

    #[test]
    fn pulse_schedule() {
        let sc = RecoveryScenario {
            disturbances: vec![TorquePulse {
                torque: [100.0, -10.0, -10.0],
                start: 5.0,
                duration: 5.0,
            }],
            control_start: 20.0,
            q_ref: [0.0; 3],
        };
        assert_eq!(sc.disturbance(4.999), Vector3::zeros());
        assert_eq!(sc.disturbance(5.0), Vector3::new(100.0, -10.0, -10.0));
        assert_eq!(sc.disturbance(10.0), Vector3::zeros());
        assert_eq!(sc.breakpoints(), vec![5.0, 10.0, 20.0]);
    }

    proptest! {
        #[test]
        fn quat_error_sign_invariant_at_zero_reference(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
            let q = Quaternion::new(0.5, a, b, c).normalized();
            let e1 = quat_error(&q, &Vector3::zeros());
            let e2 = quat_error(&q.neg(), &Vector3::zeros());
            prop_assert_eq!(e1.norm(), e2.norm());
        }

        #[test]
        fn applied_within_bounds(x in -1e3..1e3f64, y in -1e3..1e3f64, z in -1e3..1e3f64, m in 0.1..100.0f64) {
            let s = saturate(&Vector3::new(x, y, z), m);
            prop_assert!(s.amax() <= m);
        }
    }
}
