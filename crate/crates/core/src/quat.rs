//! Quaternion algebra, direction cosine matrices, Euler angles and attitude kinematics.

use crate::error::{AttError, Result};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Tolerance on the unit-norm condition for externally supplied quaternions.
pub const UNIT_TOL: f64 = 1e-6;

/// Tolerance on the scalar component recovered by [`omega_from_quat_rates`].
pub const RATE_CONSISTENCY_TOL: f64 = 1e-9;

/// Middle-angle distance from the singular value below which a gimbal lock is flagged.
pub const GIMBAL_TOL: f64 = 1e-6;

/// Attitude quaternion with scalar part `q0` and vector part `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub q0: f64,
    pub q: Vector3<f64>,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Self {
            q0,
            q: Vector3::new(q1, q2, q3),
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.q0, self.q[0], self.q[1], self.q[2])
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        let (s, c) = (0.5 * angle).sin_cos();
        Self { q0: c, q: axis / n * s }
    }

    pub fn norm(&self) -> f64 {
        (self.q0 * self.q0 + self.q.norm_squared()).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            q0: self.q0 / n,
            q: self.q / n,
        }
    }

    pub fn neg(&self) -> Self {
        Self { q0: -self.q0, q: -self.q }
    }

    /// Normalizes the quaternion if its norm deviates from one by more than [`UNIT_TOL`].
    /// Returns the (possibly normalized) quaternion and whether normalization occurred.
    pub fn checked_unit(&self) -> (Self, bool) {
        if (self.norm() - 1.0).abs() > UNIT_TOL {
            log::warn!("non-unit quaternion (norm {}) normalized", self.norm());
            (self.normalized(), true)
        } else {
            (*self, false)
        }
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// The 4x4 matrix `Q(q)` with `q_dot = 0.5 Q [0; omega]`.
pub fn q_matrix(q: &Quaternion) -> Matrix4<f64> {
    let (q0, q1, q2, q3) = (q.q0, q.q[0], q.q[1], q.q[2]);
    Matrix4::new(
        q0, -q1, -q2, -q3, //
        q1, q0, -q3, q2, //
        q2, q3, q0, -q1, //
        q3, -q2, q1, q0,
    )
}

/// Lower-right 3x3 block of [`q_matrix`], mapping `omega_dot` into the vector-part acceleration.
pub fn q_vec_matrix(q: &Quaternion) -> Matrix3<f64> {
    let (q0, q1, q2, q3) = (q.q0, q.q[0], q.q[1], q.q[2]);
    Matrix3::new(q0, -q3, q2, q3, q0, -q1, -q2, q1, q0)
}

/// Direction cosine matrix `R = (q0^2 - q.q) I + 2 q q^T - 2 q0 [q]x`.
///
/// Inputs off the unit sphere by more than [`UNIT_TOL`] are normalized first.
pub fn quat_to_dcm(q: &Quaternion) -> Matrix3<f64> {
    let (q, _) = q.checked_unit();
    let v = q.q;
    Matrix3::identity() * (q.q0 * q.q0 - v.norm_squared()) + v * v.transpose() * 2.0 - skew(&v) * (2.0 * q.q0)
}

/// Quaternion from a proper orthonormal direction cosine matrix (inverse of [`quat_to_dcm`]).
pub fn dcm_to_quat(r: &Matrix3<f64>) -> Quaternion {
    let tr = r.trace();
    let cands = [
        1.0 + tr,
        1.0 + 2.0 * r[(0, 0)] - tr,
        1.0 + 2.0 * r[(1, 1)] - tr,
        1.0 + 2.0 * r[(2, 2)] - tr,
    ];
    let (imax, _) = cands
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
    let s = (cands[imax]).sqrt() * 0.5;
    let f = 0.25 / s;
    let q = match imax {
        0 => Quaternion::new(
            s,
            (r[(1, 2)] - r[(2, 1)]) * f,
            (r[(2, 0)] - r[(0, 2)]) * f,
            (r[(0, 1)] - r[(1, 0)]) * f,
        ),
        1 => Quaternion::new(
            (r[(1, 2)] - r[(2, 1)]) * f,
            s,
            (r[(0, 1)] + r[(1, 0)]) * f,
            (r[(0, 2)] + r[(2, 0)]) * f,
        ),
        2 => Quaternion::new(
            (r[(2, 0)] - r[(0, 2)]) * f,
            (r[(0, 1)] + r[(1, 0)]) * f,
            s,
            (r[(1, 2)] + r[(2, 1)]) * f,
        ),
        _ => Quaternion::new(
            (r[(0, 1)] - r[(1, 0)]) * f,
            (r[(0, 2)] + r[(2, 0)]) * f,
            (r[(1, 2)] + r[(2, 1)]) * f,
            s,
        ),
    };
    if q.q0 < 0.0 {
        q.neg()
    } else {
        q
    }
}

/// One of the twelve Euler rotation sequences, axes numbered 1..=3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u8; 3]", into = "[u8; 3]")]
pub struct EulerSequence {
    axes: [u8; 3],
}

impl EulerSequence {
    pub const ALL: [[u8; 3]; 12] = [
        [1, 2, 1],
        [1, 2, 3],
        [1, 3, 1],
        [1, 3, 2],
        [2, 1, 2],
        [2, 1, 3],
        [2, 3, 1],
        [2, 3, 2],
        [3, 1, 2],
        [3, 1, 3],
        [3, 2, 1],
        [3, 2, 3],
    ];

    pub fn new(a: u8, b: u8, c: u8) -> Result<Self> {
        let axes = [a, b, c];
        if Self::ALL.contains(&axes) {
            Ok(Self { axes })
        } else {
            Err(AttError::InvalidInput(format!("invalid Euler sequence ({a},{b},{c})")))
        }
    }

    /// The default (3,2,1) yaw-pitch-roll sequence.
    pub fn zyx() -> Self {
        Self { axes: [3, 2, 1] }
    }

    pub fn axes(&self) -> [u8; 3] {
        self.axes
    }

    pub fn is_symmetric(&self) -> bool {
        self.axes[0] == self.axes[2]
    }

    pub fn all() -> impl Iterator<Item = EulerSequence> {
        Self::ALL.iter().map(|&axes| EulerSequence { axes })
    }
}

impl Default for EulerSequence {
    fn default() -> Self {
        Self::zyx()
    }
}

impl TryFrom<[u8; 3]> for EulerSequence {
    type Error = AttError;
    fn try_from(a: [u8; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<EulerSequence> for [u8; 3] {
    fn from(s: EulerSequence) -> Self {
        s.axes
    }
}

/// Euler angles in sequence order (first rotation first), radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub angles: [f64; 3],
    pub gimbal_lock: bool,
}

/// Elementary frame rotation about axis `axis` (1..=3) by `angle`.
pub fn axis_rotation(axis: u8, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let i = (axis - 1) as usize;
    let b = (i + 1) % 3;
    let k = (i + 2) % 3;
    let mut r = Matrix3::zeros();
    r[(i, i)] = 1.0;
    r[(b, b)] = c;
    r[(b, k)] = s;
    r[(k, b)] = -s;
    r[(k, k)] = c;
    r
}

/// `R = R_k(a3) R_j(a2) R_i(a1)` for sequence `(i, j, k)`.
pub fn euler_to_dcm(seq: EulerSequence, angles: [f64; 3]) -> Matrix3<f64> {
    let [i, j, k] = seq.axes;
    axis_rotation(k, angles[2]) * axis_rotation(j, angles[1]) * axis_rotation(i, angles[0])
}

/// Sign of the permutation `(i, j, k)` of `(0, 1, 2)`.
fn perm_sign(i: usize, j: usize) -> f64 {
    if (j + 3 - i) % 3 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Extracts Euler angles for `seq` from an orthonormal `R`.
///
/// Asymmetric sequences return a middle angle in `[-pi/2, pi/2]`, symmetric ones in `[0, pi]`.
/// Near a gimbal lock the third angle is set to zero and the flag is raised.
pub fn dcm_to_euler(r: &Matrix3<f64>, seq: EulerSequence) -> EulerAngles {
    let [a, b, c] = seq.axes;
    let i = (a - 1) as usize;
    let j = (b - 1) as usize;
    if seq.is_symmetric() {
        let k = 3 - i - j;
        let eps = perm_sign(i, j);
        let c2 = r[(i, i)].clamp(-1.0, 1.0);
        let a2 = c2.acos();
        if a2.sin().abs() < GIMBAL_TOL {
            let a1 = lock_first_angle(r, seq, a2);
            return EulerAngles {
                angles: [a1, a2, 0.0],
                gimbal_lock: true,
            };
        }
        let a1 = r[(i, j)].atan2(-eps * r[(i, k)]);
        let a3 = r[(j, i)].atan2(eps * r[(k, i)]);
        EulerAngles {
            angles: [a1, a2, a3],
            gimbal_lock: false,
        }
    } else {
        let k = (c - 1) as usize;
        let eps = perm_sign(i, j);
        let s2 = (eps * r[(k, i)]).clamp(-1.0, 1.0);
        let a2 = s2.asin();
        if (a2.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_TOL {
            let a1 = lock_first_angle(r, seq, a2);
            return EulerAngles {
                angles: [a1, a2, 0.0],
                gimbal_lock: true,
            };
        }
        let a1 = (-eps * r[(k, j)]).atan2(r[(k, k)]);
        let a3 = (-eps * r[(j, i)]).atan2(r[(i, i)]);
        EulerAngles {
            angles: [a1, a2, a3],
            gimbal_lock: false,
        }
    }
}

fn lock_first_angle(r: &Matrix3<f64>, seq: EulerSequence, a2: f64) -> f64 {
    let [a, b, _] = seq.axes;
    let m = axis_rotation(b, a2).transpose() * r;
    let i = (a - 1) as usize;
    let bb = (i + 1) % 3;
    let cc = (i + 2) % 3;
    m[(bb, cc)].atan2(m[(bb, bb)])
}

/// Quaternion kinematics: `q0_dot = -0.5 w.q`, `q_dot = -0.5 [w]x q + 0.5 q0 w`.
pub fn quat_rate(q: &Quaternion, w: &Vector3<f64>) -> Quaternion {
    Quaternion {
        q0: -0.5 * w.dot(&q.q),
        q: -0.5 * w.cross(&q.q) + 0.5 * q.q0 * w,
    }
}

/// Recovers the body rate from `[0; w] = 2 Q^T q_dot`.
///
/// Fails when the scalar component exceeds [`RATE_CONSISTENCY_TOL`] relative to the rate scale.
pub fn omega_from_quat_rates(q: &Quaternion, qdot: &Quaternion) -> Result<Vector3<f64>> {
    let v = q_matrix(q).transpose() * qdot.to_vector4() * 2.0;
    let w = Vector3::new(v[1], v[2], v[3]);
    if v[0].abs() > RATE_CONSISTENCY_TOL * (1.0 + w.norm()) {
        return Err(AttError::InconsistentRates(v[0]));
    }
    Ok(w)
}

/// Body rate from `(q, q_dot)` without the consistency check.
pub fn omega_unchecked(q: &Quaternion, qdot: &Quaternion) -> Vector3<f64> {
    let v = q_matrix(q).transpose() * qdot.to_vector4() * 2.0;
    Vector3::new(v[1], v[2], v[3])
}
