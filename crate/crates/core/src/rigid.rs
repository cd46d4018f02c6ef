//! Rigid-body attitude dynamics, the second-order quaternion form and closed-form
//! solutions of Euler's equations for axisymmetric and time-varying special cases.

use crate::error::{AttError, Result};
use crate::quat::{q_vec_matrix, quat_rate, Quaternion};
use nalgebra::{Complex, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid spacecraft: inertia tensor about the mass center (kg m^2) and wheel momentum (N m s).
#[derive(Clone, Debug, PartialEq)]
pub struct RigidBody {
    inertia: Matrix3<f64>,
    h_w: Vector3<f64>,
    inv: Option<Matrix3<f64>>,
}

impl RigidBody {
    /// Builds a body; the all-zero inertia is accepted and handled by a guard path.
    pub fn new(inertia: Matrix3<f64>, h_w: Vector3<f64>) -> Result<Self> {
        if !inertia.iter().all(|v| v.is_finite()) {
            return Err(AttError::InvalidInput("inertia has non-finite entries".into()));
        }
        if (inertia - inertia.transpose()).amax() > 1e-9 * inertia.amax().max(1.0) {
            return Err(AttError::InvalidInput("inertia tensor is not symmetric".into()));
        }
        let inv = if inertia.amax() == 0.0 {
            None
        } else {
            let chol = inertia.cholesky().ok_or_else(|| AttError::Singular {
                what: "inertia tensor I_t (not positive definite)".into(),
            })?;
            Some(chol.inverse())
        };
        Ok(Self { inertia, h_w, inv })
    }

    pub fn diagonal(ix: f64, iy: f64, iz: f64) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(ix, iy, iz)), Vector3::zeros())
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn h_w(&self) -> &Vector3<f64> {
        &self.h_w
    }

    pub fn inverse_inertia(&self) -> Result<&Matrix3<f64>> {
        self.inv.as_ref().ok_or_else(|| AttError::Singular {
            what: "inertia tensor I_t (all zero)".into(),
        })
    }

    pub fn is_null(&self) -> bool {
        self.inv.is_none()
    }
}

/// Torque-free part of the body-rate dynamics: `-I^-1 (w x (I w + h_w))`.
pub fn rigid_drift(body: &RigidBody, w: &Vector3<f64>) -> Result<Vector3<f64>> {
    if body.is_null() && *w == Vector3::zeros() {
        return Ok(Vector3::zeros());
    }
    let inv = body.inverse_inertia()?;
    Ok(-inv * w.cross(&(body.inertia * w + body.h_w)))
}

/// `w_dot = -I^-1 (w x (I w + h_w)) + I^-1 tau`.
pub fn rigid_omega_dot(body: &RigidBody, w: &Vector3<f64>, tau: &Vector3<f64>) -> Result<Vector3<f64>> {
    if body.is_null() && *w == Vector3::zeros() && *tau == Vector3::zeros() {
        return Ok(Vector3::zeros());
    }
    let inv = body.inverse_inertia()?;
    Ok(rigid_drift(body, w)? + inv * tau)
}

/// Right-hand side for the state `[q0, q1, q2, q3, wx, wy, wz]`.
pub fn rigid_state_derivative(body: &RigidBody, y: &[f64], tau: &Vector3<f64>, out: &mut [f64]) -> Result<()> {
    let q = Quaternion::new(y[0], y[1], y[2], y[3]);
    let w = Vector3::new(y[4], y[5], y[6]);
    let qd = quat_rate(&q, &w);
    let wd = rigid_omega_dot(body, &w, tau)?;
    out[0] = qd.q0;
    out[1..4].copy_from_slice(qd.q.as_slice());
    out[4..7].copy_from_slice(wd.as_slice());
    Ok(())
}

/// Affine-in-torque split of the quaternion second derivative:
/// `q0_dd = f_q0 + g_q0 . tau` and `q_dd = f_q + G_q tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatBlocks {
    pub f_q0: f64,
    pub f_q: Vector3<f64>,
    pub g_q0: Vector3<f64>,
    pub g_q: Matrix3<f64>,
}

/// Builds the quaternion blocks from the body-rate drift `a_w` and input matrix `g_w`
/// of any dynamics written as `w_dot = a_w + g_w tau`.
pub fn quat_blocks_from_rate_form(q: &Quaternion, w: &Vector3<f64>, a_w: &Vector3<f64>, g_w: &Matrix3<f64>) -> QuatBlocks {
    let w2 = w.norm_squared();
    let qq = q_vec_matrix(q);
    QuatBlocks {
        f_q0: -0.25 * w2 * q.q0 - 0.5 * q.q.dot(a_w),
        f_q: -0.25 * w2 * q.q + 0.5 * qq * a_w,
        g_q0: -0.5 * g_w.transpose() * q.q,
        g_q: 0.5 * qq * g_w,
    }
}

/// Second-order quaternion dynamics for a rigid body; the body rate is reconstructed from `(q, q_dot)`.
pub fn rigid_quat_second_order(body: &RigidBody, q: &Quaternion, q_dot: &Quaternion) -> Result<QuatBlocks> {
    let w = crate::quat::omega_unchecked(q, q_dot);
    let inv = *body.inverse_inertia()?;
    let a_w = rigid_drift(body, &w)?;
    let blocks = quat_blocks_from_rate_form(q, &w, &a_w, &inv);
    let det = blocks.g_q.determinant();
    let scale = (0.125 * inv.determinant()).abs();
    if det.abs() <= 1e-12 * scale {
        return Err(AttError::Singular {
            what: format!("quaternion input matrix G_q (q0 = {:.3e})", q.q0),
        });
    }
    Ok(blocks)
}

/// `0.5 w^T I w`.
pub fn kinetic_energy_rigid(body: &RigidBody, w: &Vector3<f64>) -> f64 {
    0.5 * w.dot(&(body.inertia * w))
}

/// Parameters of the closed-form special cases of Euler's equations.
///
/// * 1: all zero; 2: spherical inertia, torque free
/// * 3: `Iy = Iz`, torque free
/// * 4: `Ix = Iz`, constant `tau_x = cx`, `tau_z = cz`
/// * 5: `Ix = Iz`, `tau_x = cos(gamma t)`, `tau_z = sin(gamma t)`
/// * 6: `Iy = Iz`, `tau_y = m` on `[t1, t2]`
/// * 7: `Ix = Iz`, `tau_y = c1`
/// * 8: `Ix = Iz`, `tau_y = m cos(gamma t)`
/// * 9: `Ix = Iz`, `tau_y = m` on `[t1, t2]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCaseParams {
    pub case_id: u8,
    pub inertia: [f64; 3],
    pub omega0: [f64; 3],
    #[serde(default)]
    pub cx: f64,
    #[serde(default)]
    pub cz: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub m: f64,
    #[serde(default)]
    pub t1: f64,
    #[serde(default)]
    pub t2: f64,
}

const STRUCT_TOL: f64 = 1e-12;

impl AnalyticCaseParams {
    /// The reference parameter set of each case.
    pub fn reference(case_id: u8) -> Result<Self> {
        let w0 = [0.3, -0.4, 0.5];
        let gamma = 2.0 * std::f64::consts::PI / 5400.0;
        let base = Self {
            case_id,
            inertia: [10.0, 5.0, 10.0],
            omega0: w0,
            cx: 0.0,
            cz: 0.0,
            c1: 0.0,
            gamma: 0.0,
            m: 0.0,
            t1: 0.0,
            t2: 0.0,
        };
        let p = match case_id {
            1 => Self {
                inertia: [0.0; 3],
                omega0: [0.0; 3],
                ..base
            },
            2 => Self {
                inertia: [10.0; 3],
                ..base
            },
            3 => Self {
                inertia: [5.0, 10.0, 10.0],
                ..base
            },
            4 => Self { cx: 0.1, cz: -0.1, ..base },
            5 => Self { gamma, ..base },
            6 => Self {
                inertia: [5.0, 10.0, 10.0],
                m: 10.0,
                t1: 1.0,
                t2: 2.0,
                ..base
            },
            7 => Self { c1: 1.0, ..base },
            8 => Self { m: 1.0, gamma, ..base },
            9 => Self {
                m: 10.0,
                t1: 1.0,
                t2: 2.0,
                ..base
            },
            _ => return Err(AttError::InvalidInput(format!("unknown analytic case {case_id}"))),
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the inertia structure required by the case.
    pub fn validate(&self) -> Result<()> {
        let [ix, iy, iz] = self.inertia;
        let eq = |a: f64, b: f64| (a - b).abs() <= STRUCT_TOL * a.abs().max(b.abs()).max(1.0);
        let ok = match self.case_id {
            1 => self.inertia == [0.0; 3] && self.omega0 == [0.0; 3],
            2 => eq(ix, iy) && eq(iy, iz) && ix > 0.0,
            3 | 6 => eq(iy, iz) && ix > 0.0 && iy > 0.0,
            4 | 5 | 7 | 8 | 9 => eq(ix, iz) && ix > 0.0 && iy > 0.0,
            _ => false,
        };
        if !ok {
            return Err(AttError::InvalidInput(format!(
                "parameters do not match the structure of analytic case {}",
                self.case_id
            )));
        }
        if matches!(self.case_id, 6 | 9) && !(self.t2 > self.t1 && self.t1 >= 0.0) {
            return Err(AttError::InvalidInput("pulse window requires t2 > t1 >= 0".into()));
        }
        if matches!(self.case_id, 5 | 8) && self.gamma == 0.0 {
            return Err(AttError::InvalidInput("harmonic torque requires gamma != 0".into()));
        }
        Ok(())
    }

    /// Applied torque at time `t` (pulse windows are closed on the left).
    pub fn torque(&self, t: f64) -> Vector3<f64> {
        let in_pulse = t >= self.t1 && t < self.t2;
        match self.case_id {
            4 => Vector3::new(self.cx, 0.0, self.cz),
            5 => Vector3::new((self.gamma * t).cos(), 0.0, (self.gamma * t).sin()),
            6 | 9 if in_pulse => Vector3::new(0.0, self.m, 0.0),
            7 => Vector3::new(0.0, self.c1, 0.0),
            8 => Vector3::new(0.0, self.m * (self.gamma * t).cos(), 0.0),
            _ => Vector3::zeros(),
        }
    }

    pub fn body(&self) -> Result<RigidBody> {
        let [ix, iy, iz] = self.inertia;
        RigidBody::diagonal(ix, iy, iz)
    }
}

type C = Complex<f64>;

/// Solution of `u' = i a u + f` with constant `a`, `f`, from `u(0) = u0`.
fn lti(u0: C, a: f64, f: C, t: f64) -> C {
    let i = C::i();
    if a == 0.0 {
        return u0 + f * t;
    }
    let us = f * i / a;
    us + (u0 - us) * (i * a * t).exp()
}

/// Closed-form body rate of an analytic case at time `t >= 0`.
pub fn analytic_solution(p: &AnalyticCaseParams, t: f64) -> Result<Vector3<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(AttError::InvalidInput(format!("time must be finite and non-negative, got {t}")));
    }
    p.validate()?;
    let [ix, iy, _] = p.inertia;
    let [wx0, wy0, wz0] = p.omega0;
    let i = C::i();
    Ok(match p.case_id {
        1 => Vector3::zeros(),
        2 => Vector3::from(p.omega0),
        3 | 6 => {
            let a = (ix - iy) / iy * wx0;
            let u0 = C::new(wy0, wz0);
            let u = if p.case_id == 3 {
                lti(u0, a, C::new(0.0, 0.0), t)
            } else {
                let f = C::new(p.m / iy, 0.0);
                let zero = C::new(0.0, 0.0);
                if t <= p.t1 {
                    lti(u0, a, zero, t)
                } else {
                    let u1 = lti(u0, a, zero, p.t1);
                    if t <= p.t2 {
                        lti(u1, a, f, t - p.t1)
                    } else {
                        let u2 = lti(u1, a, f, p.t2 - p.t1);
                        lti(u2, a, zero, t - p.t2)
                    }
                }
            };
            Vector3::new(wx0, u.re, u.im)
        }
        4 | 5 => {
            let a = (ix - iy) / ix * wy0;
            let u0 = C::new(wx0, wz0);
            let u = if p.case_id == 4 {
                lti(u0, a, C::new(p.cx, p.cz) / ix, t)
            } else {
                let g = p.gamma;
                if (g - a).abs() <= 1e-12 * g.abs() {
                    (u0 + t / ix) * (i * a * t).exp()
                } else {
                    let c = C::new(1.0, 0.0) / (i * (g - a) * ix);
                    (u0 - c) * (i * a * t).exp() + c * (i * g * t).exp()
                }
            };
            Vector3::new(u.re, wy0, u.im)
        }
        7..=9 => {
            let k = (ix - iy) / ix;
            let (wy, int_wy) = match p.case_id {
                7 => (wy0 + p.c1 * t / iy, wy0 * t + p.c1 * t * t / (2.0 * iy)),
                8 => {
                    let g = p.gamma;
                    (
                        wy0 + p.m * (g * t).sin() / (g * iy),
                        wy0 * t + 2.0 * p.m * (0.5 * g * t).sin().powi(2) / (g * g * iy),
                    )
                }
                _ => {
                    let r = p.m / iy;
                    if t <= p.t1 {
                        (wy0, wy0 * t)
                    } else if t <= p.t2 {
                        let s = t - p.t1;
                        (wy0 + r * s, wy0 * t + 0.5 * r * s * s)
                    } else {
                        let d = p.t2 - p.t1;
                        (wy0 + r * d, wy0 * t + 0.5 * r * d * d + r * d * (t - p.t2))
                    }
                }
            };
            let u = C::new(wx0, wz0) * (i * k * int_wy).exp();
            Vector3::new(u.re, wy, u.im)
        }
        _ => unreachable!(),
    })
}
