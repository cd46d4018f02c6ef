//! Normal form, zero dynamics and Lyapunov certificates for control-affine systems of the
//! form `M(x_beta) x_dot = l(x) + [tau; 0]`, specialized to the flexible spacecraft.
//!
//! For the spacecraft the rate coordinates are `x = [w; chi_dot]` with `x_alpha = w`
//! (p = 3) and `x_beta = chi_dot`, and `M` is the symmetric mass matrix.

use crate::control::ControllerGains;
use crate::error::{AttError, Result};
use crate::flex::{flexural_rigidity, Appendage, FlexState, FlexibleSpacecraft};
use crate::quat::{omega_unchecked, quat_rate, Quaternion};
use nalgebra::{DMatrix, DVector, Vector3};

/// `M x_dot = l + [tau; 0]` evaluated at one point, with `p` inputs.
#[derive(Clone, Debug)]
pub struct BlockMassSystem {
    pub p: usize,
    pub m: DMatrix<f64>,
    pub l: DVector<f64>,
}

impl BlockMassSystem {
    pub fn new(p: usize, m: DMatrix<f64>, l: DVector<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || l.len() != n || p == 0 || p >= n {
            return Err(AttError::InvalidInput(format!(
                "block system needs square M (got {}x{}), matching l ({}) and 0 < p < n (p = {p})",
                m.nrows(),
                m.ncols(),
                l.len()
            )));
        }
        if (&m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
            return Err(AttError::InvalidInput("system matrix M is not symmetric".into()));
        }
        Ok(Self { p, m, l })
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn m11(&self) -> DMatrix<f64> {
        self.m.view((0, 0), (self.p, self.p)).into_owned()
    }

    pub fn m12(&self) -> DMatrix<f64> {
        self.m.view((0, self.p), (self.p, self.n() - self.p)).into_owned()
    }

    pub fn m22(&self) -> DMatrix<f64> {
        let k = self.n() - self.p;
        self.m.view((self.p, self.p), (k, k)).into_owned()
    }

    pub fn m22_inverse(&self) -> Result<DMatrix<f64>> {
        self.m22().try_inverse().ok_or_else(|| AttError::Singular {
            what: "mass block M22".into(),
        })
    }

    /// `F11 = M11 - M12 M22^-1 M12^T`.
    pub fn schur_f11(&self) -> Result<DMatrix<f64>> {
        let m12 = self.m12();
        Ok(self.m11() - &m12 * self.m22_inverse()? * m12.transpose())
    }

    /// Input matrix `G = M^-1 [I; 0]` (n x p).
    pub fn input_matrix(&self) -> Result<DMatrix<f64>> {
        let inv = self.m.clone().try_inverse().ok_or_else(|| AttError::Singular {
            what: "system matrix M".into(),
        })?;
        Ok(inv.columns(0, self.p).into_owned())
    }

    /// Null-space basis `X = [M12 M22^-1; I]` of `G^T`.
    pub fn null_space_x(&self) -> Result<DMatrix<f64>> {
        let k = self.n() - self.p;
        let top = self.m12() * self.m22_inverse()?;
        let mut x = DMatrix::zeros(self.n(), k);
        x.view_mut((0, 0), (self.p, k)).copy_from(&top);
        x.view_mut((self.p, 0), (k, k)).fill_with_identity();
        Ok(x)
    }

    /// `eta = M22^-1 M12^T x_alpha + x_beta`.
    pub fn eta_transform(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let k = self.n() - self.p;
        let xa = x.rows(0, self.p);
        let xb = x.rows(self.p, k);
        Ok(self.m22_inverse()? * self.m12().transpose() * xa + xb)
    }

    /// `eta_dot = M22^-1 l_beta + (M22^-1 M12_dot^T + d(M22^-1)/dt M12^T) zeta`, given `M_dot`.
    pub fn eta_dot(&self, zeta: &DVector<f64>, m_dot: &DMatrix<f64>) -> Result<DVector<f64>> {
        if zeta.len() != self.p || m_dot.shape() != self.m.shape() {
            return Err(AttError::InvalidInput("eta_dot: zeta or M_dot has the wrong shape".into()));
        }
        let k = self.n() - self.p;
        let inv = self.m22_inverse()?;
        let m12_dot = m_dot.view((0, self.p), (self.p, k));
        let m22_dot = m_dot.view((self.p, self.p), (k, k));
        let inv_dot = -&inv * m22_dot * &inv;
        Ok(self.zero_dynamics()? + (&inv * m12_dot.transpose() + inv_dot * self.m12().transpose()) * zeta)
    }

    /// Zero dynamics `eta_dot = M22^-1 l_beta`.
    pub fn zero_dynamics(&self) -> Result<DVector<f64>> {
        let k = self.n() - self.p;
        Ok(self.m22_inverse()? * self.l.rows(self.p, k))
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(AttError::InvalidInput(format!(
                "state has {} entries, system has {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Block system of the spacecraft at `s`: `M` is the mass matrix and `l = M [w_dot; chi_ddot]`
/// at zero torque.
pub fn flexible_block_system(sc: &FlexibleSpacecraft, s: &FlexState) -> Result<BlockMassSystem> {
    let m = sc.mass_matrix(s)?;
    let (wd, cdd) = sc.assemble_and_solve(s, &Vector3::zeros())?;
    let mut acc = DVector::zeros(3 + sc.n_modes());
    acc.rows_mut(0, 3).copy_from(&wd);
    acc.rows_mut(3, sc.n_modes()).copy_from(&cdd);
    let l = &m * acc;
    BlockMassSystem::new(3, m, l)
}

/// `dM/dt` along the motion; `M` is quadratic in `chi`, so a central difference is exact to roundoff.
pub fn flexible_mass_rate(sc: &FlexibleSpacecraft, s: &FlexState) -> Result<DMatrix<f64>> {
    let h = 1e-3;
    let shifted = |sign: f64| FlexState {
        chi: &s.chi + &s.chi_dot * (sign * h),
        ..s.clone()
    };
    Ok((sc.mass_matrix(&shifted(1.0))? - sc.mass_matrix(&shifted(-1.0))?) / (2.0 * h))
}

/// Rate coordinates `[w; chi_dot]` of a state.
pub fn rate_coordinates(s: &FlexState) -> DVector<f64> {
    let n = s.chi.len();
    let mut x = DVector::zeros(3 + n);
    x.rows_mut(0, 3).copy_from(&s.omega);
    x.rows_mut(3, n).copy_from(&s.chi_dot);
    x
}

/// Explicit normal coordinates `(eta_a, eta_b) = (chi, chi_dot + (R B)^T w / (a b))`, with the
/// body rate reconstructed from `(q, q_dot)`.
pub fn diffeomorphism(
    sc: &FlexibleSpacecraft,
    q: &Quaternion,
    q_dot: &Quaternion,
    chi: &DVector<f64>,
    chi_dot: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if chi.len() != sc.n_modes() || chi_dot.len() != sc.n_modes() {
        return Err(AttError::InvalidInput("modal vectors do not match the spacecraft".into()));
    }
    let w = omega_unchecked(q, q_dot);
    let mut eta_b = chi_dot.clone();
    for (i, app) in sc.appendages.iter().enumerate() {
        let rg = sc.block(i);
        let c = chi.rows(rg.start, rg.len()).into_owned();
        let w_p = app.spec.rotation.transpose() * w;
        let b = app.coupling(&c);
        let add = b.transpose() * DVector::from_column_slice(w_p.as_slice()) / app.modal_mass();
        let mut blk = eta_b.rows_mut(rg.start, rg.len());
        blk += add;
    }
    Ok((chi.clone(), eta_b))
}

/// Input vector fields `g_j` of the state-space model on the layout `[q, w, chi, chi_dot]`.
pub fn input_vector_fields(sc: &FlexibleSpacecraft, y: &[f64]) -> Result<Vec<DVector<f64>>> {
    let n = y.len();
    let mut base = vec![0.0; n];
    sc.state_derivative(y, &Vector3::zeros(), &mut base)?;
    let mut out = Vec::with_capacity(3);
    let mut d = vec![0.0; n];
    for j in 0..3 {
        let mut tau = Vector3::zeros();
        tau[j] = 1.0;
        sc.state_derivative(y, &tau, &mut d)?;
        out.push(DVector::from_iterator(n, d.iter().zip(&base).map(|(a, b)| a - b)));
    }
    Ok(out)
}

/// Lie bracket `[g_i, g_j] = Dg_j g_i - Dg_i g_j` by central differences with step `h`.
pub fn lie_bracket(sc: &FlexibleSpacecraft, y: &[f64], i: usize, j: usize, h: f64) -> Result<DVector<f64>> {
    let g = input_vector_fields(sc, y)?;
    let dir = |k: usize, v: &DVector<f64>| -> Result<DVector<f64>> {
        let yp: Vec<f64> = y.iter().zip(v.iter()).map(|(a, b)| a + h * b).collect();
        let ym: Vec<f64> = y.iter().zip(v.iter()).map(|(a, b)| a - h * b).collect();
        Ok((&input_vector_fields(sc, &yp)?[k] - &input_vector_fields(sc, &ym)?[k]) / (2.0 * h))
    };
    Ok(dir(j, &g[i])? - dir(i, &g[j])?)
}

/// Relative least-squares residual of `v` against `span(basis)`.
pub fn span_residual(basis: &[DVector<f64>], v: &DVector<f64>) -> f64 {
    let vn = v.norm();
    if vn == 0.0 {
        return 0.0;
    }
    let g = DMatrix::from_columns(basis);
    let svd = g.clone().svd(true, true);
    let coef = svd.solve(v, 1e-12).unwrap_or_else(|_| DVector::zeros(basis.len()));
    (v - g * coef).norm() / vn.max(basis.iter().map(|b| b.norm()).fold(0.0, f64::max))
}

/// Linear zero dynamics `[eta_a; eta_b]' = [[0, I], [-c2 C, -c1 I]] [eta_a; eta_b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroDynamicsLti {
    pub c1: f64,
    pub c2: f64,
    pub c: DMatrix<f64>,
}

/// Four-digit case (ii) constants.
pub mod case_ii {
    pub const ALPHA: [f64; 4] = [0.1236, 4.8552, 0.1236, 4.8552];
    pub const BETA: [f64; 3] = [0.5577, 3.8901, 0.8856];
}

/// Smallest eigenvalue of `C^-1` used in the stability bound.
pub const INV_C_MIN_EIG: f64 = 0.17238;

impl ZeroDynamicsLti {
    pub fn new(c1: f64, c2: f64, c: DMatrix<f64>) -> Result<Self> {
        if !(c1 >= 0.0 && c2 > 0.0) {
            return Err(AttError::InvalidInput(format!("need c1 >= 0 and c2 > 0 (c1 = {c1}, c2 = {c2})")));
        }
        if !c.is_square() || (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
            return Err(AttError::InvalidInput("C must be square and symmetric".into()));
        }
        Ok(Self { c1, c2, c })
    }

    /// `c1 = xi / (a b)`, `c2 = E h^3 / (12 rho (1 - gamma^2))`.
    pub fn coefficients(a: f64, b: f64, e: f64, h: f64, rho: f64, gamma: f64, xi: f64) -> (f64, f64) {
        (xi / (a * b), flexural_rigidity(e, h, gamma) / rho)
    }

    /// Single-mode case `eta'' + c1 eta' + c2 (12.36 / b^4) eta = 0`.
    pub fn case_i(a: f64, b: f64, e: f64, h: f64, rho: f64, gamma: f64, xi: f64) -> Result<Self> {
        let (c1, c2) = Self::coefficients(a, b, e, h, rho, gamma, xi);
        Self::new(c1, c2, DMatrix::from_element(1, 1, 100.0 / b.powi(4) * case_ii::ALPHA[0]))
    }

    /// Two-by-two-mode case with the four-digit constants.
    pub fn case_ii(a: f64, b: f64, e: f64, h: f64, rho: f64, gamma: f64, xi: f64) -> Result<Self> {
        let (c1, c2) = Self::coefficients(a, b, e, h, rho, gamma, xi);
        let l1 = 100.0 / b.powi(4);
        let l2 = 200.0 * (1.0 - gamma) / (a * a * b * b);
        let al = case_ii::ALPHA;
        let be = case_ii::BETA;
        let mut c = DMatrix::zeros(4, 4);
        c[(0, 0)] = l1 * al[0];
        c[(1, 1)] = l1 * al[1];
        c[(2, 2)] = l1 * al[2] + l2 * be[0];
        c[(3, 3)] = l1 * al[3] + l2 * be[1];
        c[(2, 3)] = -l2 * be[2];
        c[(3, 2)] = -l2 * be[2];
        Self::new(c1, c2, c)
    }

    /// Zero dynamics regenerated from the appendage's mode-shape integrals: `c2 C = Vs / (rho a b)`.
    pub fn from_appendage(app: &Appendage) -> Result<Self> {
        let s = &app.spec;
        let (c1, c2) = Self::coefficients(s.a, s.b, s.e, s.h, s.rho, s.poisson, s.damping);
        let j = flexural_rigidity(s.e, s.h, s.poisson);
        Self::new(c1, c2, &app.vs / (j * app.modal_mass()))
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut a = DMatrix::zeros(2 * k, 2 * k);
        a.view_mut((0, k), (k, k)).fill_with_identity();
        a.view_mut((k, 0), (k, k)).copy_from(&(&self.c * -self.c2));
        a.view_mut((k, k), (k, k)).copy_from(&(DMatrix::identity(k, k) * -self.c1));
        a
    }

    /// Squared undamped natural frequencies, ascending.
    pub fn natural_frequencies_sq(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = (&self.c * self.c2).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `4 / (zeta w_n) = 8 / c1`, common to all modes.
    pub fn settling_time(&self) -> f64 {
        8.0 / self.c1
    }

    /// Leading principal minors of `C`.
    pub fn leading_minors(&self) -> Vec<f64> {
        (1..=self.k()).map(|i| self.c.view((0, 0), (i, i)).determinant()).collect()
    }

    pub fn check_positive_definite(&self) -> Result<()> {
        for (i, d) in self.leading_minors().iter().enumerate() {
            if !(*d > 0.0) {
                return Err(AttError::InvalidInput(format!(
                    "C is not positive definite: leading principal minor {} = {d:.6e}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn is_hurwitz(&self) -> bool {
        self.a_matrix().complex_eigenvalues().iter().all(|z| z.re < 0.0)
    }
}

/// `A^T P + P A + Q = 0` with `P = [[p11, p12], [p12, p22]]`.
#[derive(Clone, Debug)]
pub struct LyapunovCertificate {
    pub p11: DMatrix<f64>,
    pub p12: DMatrix<f64>,
    pub p22: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub residual: f64,
}

impl LyapunovCertificate {
    pub fn p(&self) -> DMatrix<f64> {
        let k = self.p11.nrows();
        let mut p = DMatrix::zeros(2 * k, 2 * k);
        p.view_mut((0, 0), (k, k)).copy_from(&self.p11);
        p.view_mut((0, k), (k, k)).copy_from(&self.p12);
        p.view_mut((k, 0), (k, k)).copy_from(&self.p12.transpose());
        p.view_mut((k, k), (k, k)).copy_from(&self.p22);
        p
    }

    pub fn is_positive_definite(&self) -> bool {
        self.p().cholesky().is_some()
    }
}

/// Closed-form certificate for `Q = I`.
pub fn lyapunov_certificate(zd: &ZeroDynamicsLti) -> Result<LyapunovCertificate> {
    zd.check_positive_definite()?;
    if !(zd.c1 > 0.0) {
        return Err(AttError::InvalidInput("closed-form certificate needs c1 > 0".into()));
    }
    let k = zd.k();
    let (c1, c2) = (zd.c1, zd.c2);
    let ci = zd.c.clone().try_inverse().ok_or_else(|| AttError::Singular { what: "C".into() })?;
    let id = DMatrix::<f64>::identity(k, k);
    let p11 = &ci * (c1 / (2.0 * c2)) + &zd.c * (c2 / (2.0 * c1)) + &id / (2.0 * c1);
    let p12 = &ci / (2.0 * c2);
    let p22 = &ci / (2.0 * c1 * c2) + &id / (2.0 * c1);
    let q = DMatrix::identity(2 * k, 2 * k);
    let mut cert = LyapunovCertificate {
        p11,
        p12,
        p22,
        q,
        residual: 0.0,
    };
    let a = zd.a_matrix();
    let p = cert.p();
    cert.residual = (a.transpose() * &p + &p * &a + &cert.q).amax();
    Ok(cert)
}

/// Certificate for a general symmetric `Q` through the Kronecker solve.
pub fn lyapunov_certificate_with(zd: &ZeroDynamicsLti, q: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let a = zd.a_matrix();
    let p = solve_lyapunov(&a, q)?;
    let k = zd.k();
    let residual = (a.transpose() * &p + &p * &a + q).amax();
    Ok(LyapunovCertificate {
        p11: p.view((0, 0), (k, k)).into_owned(),
        p12: p.view((0, k), (k, k)).into_owned(),
        p22: p.view((k, k), (k, k)).into_owned(),
        q: q.clone(),
        residual,
    })
}

/// Solves `A^T U + U A = -Q` by vectorization.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(AttError::InvalidInput("Lyapunov solve needs square A and Q of equal size".into()));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let big = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let v = big.lu().solve(&rhs).ok_or_else(|| AttError::Singular {
        what: "Lyapunov operator (A has eigenvalues summing to zero)".into(),
    })?;
    let u = DMatrix::from_column_slice(n, n, v.as_slice());
    Ok((&u + u.transpose()) * 0.5)
}

/// Spectral norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Outcome of the zero-dynamics stability test `lambda_max(a) < 4 c2^2 (0.17238 / (2 c1 c2) + 1 / (2 c1))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityCondition {
    /// `lambda_max((C p11 C)^-1)`.
    pub lambda_max_a: f64,
    /// `lambda_max_a / (4 c2^2)`, the left side when the bound is written without the `4 c2^2` factor.
    pub lambda_max_n: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn stability_condition(zd: &ZeroDynamicsLti) -> Result<StabilityCondition> {
    zd.check_positive_definite()?;
    if zd.c1 == 0.0 {
        return Ok(StabilityCondition {
            lambda_max_a: 0.0,
            lambda_max_n: 0.0,
            rhs: f64::INFINITY,
            pass: true,
        });
    }
    let cert = lyapunov_certificate(zd)?;
    let cpc = &zd.c * &cert.p11 * &zd.c;
    let a = cpc.try_inverse().ok_or_else(|| AttError::Singular { what: "C p11 C".into() })?;
    let a = (&a + a.transpose()) * 0.5;
    let lambda_max_a = a.symmetric_eigenvalues().max();
    let (c1, c2) = (zd.c1, zd.c2);
    let rhs = 4.0 * c2 * c2 * (INV_C_MIN_EIG / (2.0 * c1 * c2) + 1.0 / (2.0 * c1));
    Ok(StabilityCondition {
        lambda_max_a,
        lambda_max_n: lambda_max_a / (4.0 * c2 * c2),
        rhs,
        pass: lambda_max_a < rhs,
    })
}

/// Linear part of the closed loop on `mu = [q_e, q_e_dot, eta_a, eta_b]`.
pub fn closed_loop_matrix(gains: &ControllerGains, zd: &ZeroDynamicsLti) -> Result<DMatrix<f64>> {
    let k = zd.k();
    if gains.kp_chi.shape() != (3, k) || gains.kd_chi.shape() != (3, k) {
        return Err(AttError::InvalidInput(format!("modal gains must be 3x{k}")));
    }
    let n = 6 + 2 * k;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 3), (3, 3)).fill_with_identity();
    a.view_mut((3, 0), (3, 3)).copy_from(&(-gains.kp_q));
    a.view_mut((3, 3), (3, 3)).copy_from(&(-gains.kd_q));
    a.view_mut((3, 6), (3, k)).copy_from(&gains.kp_chi);
    a.view_mut((3, 6 + k), (3, k)).copy_from(&gains.kd_chi);
    a.view_mut((3, 6), (3, 2 * k)).neg_mut();
    let zda = zd.a_matrix();
    a.view_mut((6, 6), (2 * k, 2 * k)).copy_from(&zda);
    Ok(a)
}

/// Closed-loop Lyapunov matrix `U` with `A^T U + U A = -I` and its spectral norm.
pub fn closed_loop_certificate(gains: &ControllerGains, zd: &ZeroDynamicsLti) -> Result<(DMatrix<f64>, f64)> {
    let a = closed_loop_matrix(gains, zd)?;
    let n = a.nrows();
    let u = solve_lyapunov(&a, &DMatrix::identity(n, n))?;
    let norm = spectral_norm(&u);
    Ok((u, norm))
}

/// Spacecraft state of a closed-loop coordinate vector `mu` (zero reference attitude).
pub fn state_from_mu(sc: &FlexibleSpacecraft, mu: &DVector<f64>) -> Result<FlexState> {
    let k = sc.n_modes();
    if mu.len() != 6 + 2 * k {
        return Err(AttError::InvalidInput(format!(
            "mu has {} entries, expected {}",
            mu.len(),
            6 + 2 * k
        )));
    }
    let qv = -Vector3::new(mu[0], mu[1], mu[2]);
    let s2 = qv.norm_squared();
    if s2 >= 1.0 {
        return Err(AttError::InvalidInput("attitude error exceeds a unit quaternion".into()));
    }
    let q0 = (1.0 - s2).sqrt();
    let qd = -Vector3::new(mu[3], mu[4], mu[5]);
    let q = Quaternion { q0, q: qv };
    let qdot = Quaternion {
        q0: -qv.dot(&qd) / q0,
        q: qd,
    };
    let omega = omega_unchecked(&q, &qdot);
    let chi = mu.rows(6, k).into_owned();
    let (_, eta_b0) = diffeomorphism(sc, &q, &qdot, &chi, &DVector::zeros(k))?;
    let chi_dot = mu.rows(6 + k, k) - eta_b0;
    Ok(FlexState { q, omega, chi, chi_dot })
}

/// `mu_dot` of the exact closed loop under unsaturated feedback linearization.
pub fn closed_loop_mu_dot(sc: &FlexibleSpacecraft, gains: &ControllerGains, mu: &DVector<f64>) -> Result<DVector<f64>> {
    let k = sc.n_modes();
    let s = state_from_mu(sc, mu)?;
    let ctl = crate::control::FlcController::flexible(
        sc.clone(),
        ControllerGains {
            tau_max: f64::INFINITY,
            ..gains.clone()
        },
    )?;
    let tau = ctl.torque(&s)?.commanded;
    let blk = sc.flex_quat_form(&s)?;
    let qdd = blk.quat.f_q + blk.quat.g_q * tau;
    let qd = quat_rate(&s.q, &s.omega);
    let sys = flexible_block_system(sc, &s)?;
    let mdot = flexible_mass_rate(sc, &s)?;
    let zeta = DVector::from_column_slice(s.omega.as_slice());
    let eta_dot = sys.eta_dot(&zeta, &mdot)?;
    let mut out = DVector::zeros(6 + 2 * k);
    out.rows_mut(0, 3).copy_from(&(-qd.q));
    out.rows_mut(3, 3).copy_from(&(-qdd));
    out.rows_mut(6, k).copy_from(&s.chi_dot);
    out.rows_mut(6 + k, k).copy_from(&eta_dot);
    Ok(out)
}

/// Sampled ratio `max |f_mu| / |mu|` on spheres of the given radii, with `f_mu = mu_dot - A mu`.
pub fn lipschitz_profile(
    sc: &FlexibleSpacecraft,
    gains: &ControllerGains,
    a: &DMatrix<f64>,
    radii: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = a.nrows();
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mu = dir.normalize() * r;
            let f = closed_loop_mu_dot(sc, gains, &mu)? - a * &mu;
            worst = worst.max(f.norm() / r);
        }
        out.push((r, worst));
    }
    Ok(out)
}

/// Largest sampled radius whose Lipschitz estimate satisfies `l < lambda_min(Q) / (2 |U|)`.
pub fn certified_radius(profile: &[(f64, f64)], u_norm: f64) -> Option<f64> {
    let bound = 1.0 / (2.0 * u_norm);
    profile
        .iter()
        .filter(|(_, l)| *l < bound)
        .map(|(r, _)| *r)
        .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flex::AppendageSpec;
    use crate::integrate::{integrate, Schedule, SolverConfig};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sc(p: usize, xi: f64) -> FlexibleSpacecraft {
        let app = Appendage::new(AppendageSpec {
            a: 1.0,
            b: 10.0,
            h: 0.02,
            rho: 10.0,
            e: 5e8,
            poisson: 0.3,
            damping: xi,
            d: Vector3::new(-0.5, 0.5, 0.0),
            rotation: Matrix3::identity(),
            p,
            q: p,
        })
        .unwrap();
        FlexibleSpacecraft::new(Matrix3::identity() * (2000.0 / 6.0), 2000.0, vec![app], Vector3::zeros()).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * n as f64
    }

    fn default_zd() -> ZeroDynamicsLti {
        ZeroDynamicsLti::case_ii(1.0, 10.0, 5e8, 0.02, 10.0, 0.3, 0.05).unwrap()
    }

    #[test]
    fn null_space_decoupled() {
        let mut m = DMatrix::identity(5, 5);
        m[(3, 3)] = 2.0;
        let sys = BlockMassSystem::new(2, m, DVector::zeros(5)).unwrap();
        let x = sys.null_space_x().unwrap();
        assert_eq!(x.rows(0, 2).amax(), 0.0);
        assert_eq!(x.rows(2, 3).into_owned(), DMatrix::identity(3, 3));
        let xs = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(sys.eta_transform(&xs).unwrap(), DVector::from_vec(vec![3.0, 4.0, 5.0]));
    }

    #[test]
    fn null_space_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = random_spd(&mut rng, 6);
            let sys = BlockMassSystem::new(3, m, DVector::zeros(6)).unwrap();
            let x = sys.null_space_x().unwrap();
            let g = sys.input_matrix().unwrap();
            assert!((g.transpose() * &x).amax() <= 1e-10);
            assert_eq!(x.clone().svd(false, false).rank(1e-12), 3);
            // each eta_k is linear with gradient X[:, k]
            let xa = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let eta = sys.eta_transform(&xa).unwrap();
            assert!((eta - x.transpose() * &xa).amax() < 1e-12);
            for j in 0..3 {
                for kk in 0..3 {
                    assert!(x.column(kk).dot(&g.column(j)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn eta_dot_constant_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_spd(&mut rng, 5);
        let l = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let sys = BlockMassSystem::new(2, m, l).unwrap();
        let zeta = DVector::from_vec(vec![0.3, -0.2]);
        let d = sys.eta_dot(&zeta, &DMatrix::zeros(5, 5)).unwrap();
        assert_relative_eq!(d, sys.zero_dynamics().unwrap(), epsilon = 1e-14);
        let bad = BlockMassSystem::new(2, DMatrix::identity(5, 5), DVector::zeros(4));
        assert!(bad.is_err());
    }

    #[test]
    fn eta_dot_along_flexible_trajectory() {
        let sc = sc(1, 0.05);
        let s0 = FlexState {
            q: Quaternion::identity(),
            omega: Vector3::new(0.05, -0.02, 0.04),
            chi: DVector::from_element(1, 0.02),
            chi_dot: DVector::from_element(1, -0.01),
        };
        let tau = |t: f64| Vector3::new(2.0 * (0.3 * t).sin(), -1.0, 0.5 * t.cos());
        let cfg = SolverConfig {
            rel_tol: 1e-12,
            max_step: 0.01,
            ..SolverConfig::abm()
        };
        let tr = integrate(
            |t, y: &[f64], o: &mut [f64]| sc.state_derivative(y, &tau(t), o),
            &s0.to_vec(),
            &Schedule::new(0.0, 10.0, Some(0.001)),
            &cfg,
        )
        .unwrap();
        let eta = |x: &Vec<f64>| {
            let s = FlexState::from_slice(x).unwrap();
            flexible_block_system(&sc, &s)
                .unwrap()
                .eta_transform(&rate_coordinates(&s))
                .unwrap()
        };
        for idx in [1000usize, 5000, 9000] {
            let fd = (eta(&tr.x[idx + 1]) - eta(&tr.x[idx - 1])) / (tr.t[idx + 1] - tr.t[idx - 1]);
            let s = FlexState::from_slice(&tr.x[idx]).unwrap();
            let sys = flexible_block_system(&sc, &s).unwrap();
            let mdot = flexible_mass_rate(&sc, &s).unwrap();
            let zeta = DVector::from_column_slice(s.omega.as_slice());
            let an = sys.eta_dot(&zeta, &mdot).unwrap();
            assert!((fd - an).amax() < 1e-6);
        }
    }

    #[test]
    fn diffeomorphism_consistency() {
        let sc = sc(2, 0.05);
        let rest = FlexState {
            chi: DVector::from_vec(vec![0.1, 0.0, -0.05, 0.02]),
            chi_dot: DVector::from_vec(vec![0.01, 0.02, 0.0, -0.01]),
            ..FlexState::rest(4)
        };
        let (ea, eb) = diffeomorphism(&sc, &rest.q, &quat_rate(&rest.q, &rest.omega), &rest.chi, &rest.chi_dot).unwrap();
        assert_eq!(ea, rest.chi);
        assert_eq!(eb, rest.chi_dot);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q = Quaternion::new(
                1.0,
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )
            .normalized();
            let s = FlexState {
                q,
                omega: Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                ),
                chi: DVector::from_fn(4, |_, _| rng.random_range(-0.1..0.1)),
                chi_dot: DVector::from_fn(4, |_, _| rng.random_range(-0.1..0.1)),
            };
            let (_, eb) = diffeomorphism(&sc, &s.q, &quat_rate(&s.q, &s.omega), &s.chi, &s.chi_dot).unwrap();
            let sys = flexible_block_system(&sc, &s).unwrap();
            let et = sys.eta_transform(&rate_coordinates(&s)).unwrap();
            assert!((eb - &et).amax() <= 1e-8);
            // gradient of eta with respect to the rate coordinates annihilates the input fields
            let x = sys.null_space_x().unwrap();
            let g = sys.input_matrix().unwrap();
            assert!((x.transpose() * g).amax() <= 1e-8);
        }
    }

    #[test]
    fn reference_coupling_row() {
        // first mode coupling to w_x equals 6.1 for the single-appendage spacecraft
        let sc = sc(2, 0.05);
        let b = sc.appendages[0].coupling(&DVector::zeros(4));
        assert!((b[(0, 0)] / 10.0 - 6.1).abs() < 0.05);
        assert!((b[(0, 1)] / 10.0 - 1.1).abs() < 0.05);
    }

    #[test]
    fn lie_brackets_stay_in_input_span() {
        let sc = sc(2, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let s = FlexState {
                q: Quaternion::new(
                    1.0,
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
                .normalized(),
                omega: Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                ),
                chi: DVector::from_fn(4, |_, _| rng.random_range(-0.1..0.1)),
                chi_dot: DVector::from_fn(4, |_, _| rng.random_range(-0.1..0.1)),
            };
            let y = s.to_vec();
            let g = input_vector_fields(&sc, &y).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let br = lie_bracket(&sc, &y, i, j, 1e-5).unwrap();
                assert!(span_residual(&g, &br) <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_dynamics_case_i_coefficients() {
        let zd = ZeroDynamicsLti::case_i(1.0, 10.0, 5e8, 0.02, 10.0, 0.3, 0.05).unwrap();
        assert_relative_eq!(zd.c1, 0.005);
        let wn2 = zd.natural_frequencies_sq()[0];
        assert_relative_eq!(wn2, 1.03 * 5e8 * 8e-6 / (10.0 * 1e4 * 0.91), max_relative = 1e-3);
        assert!((wn2.sqrt() - 0.2128).abs() < 1e-3);
        assert_relative_eq!(zd.settling_time(), 1600.0);
        let from_modes = ZeroDynamicsLti::from_appendage(&sc(1, 0.05).appendages[0]).unwrap();
        assert_relative_eq!(from_modes.c, zd.c, max_relative = 1e-3);
    }

    #[test]
    fn case_ii_matches_mode_integrals() {
        let rounded = default_zd();
        let derived = ZeroDynamicsLti::from_appendage(&sc(2, 0.05).appendages[0]).unwrap();
        assert!((&rounded.c - &derived.c).amax() <= 2e-4 * rounded.c.amax());
        let b = case_ii::BETA;
        assert!(b[0] * b[1] > b[2] * b[2]);
        assert!(rounded.leading_minors().iter().all(|d| *d > 0.0));
        assert!((1.0 / rounded.c.symmetric_eigenvalues().max() - INV_C_MIN_EIG).abs() < 1e-4);
    }

    #[test]
    fn lyapunov_residuals() {
        let zd = default_zd();
        let cert = lyapunov_certificate(&zd).unwrap();
        assert!(cert.residual <= 1e-9);
        assert!(cert.is_positive_definite());
        let gen = lyapunov_certificate_with(&zd, &DMatrix::identity(8, 8)).unwrap();
        assert!((gen.p() - cert.p()).amax() <= 1e-6 * cert.p().amax());
        // scalar damped oscillator x'' + c1 x' + w x = 0 with Q = I
        let (c1, w) = (0.7, 2.0);
        let zd1 = ZeroDynamicsLti::new(c1, 1.0, DMatrix::from_element(1, 1, w)).unwrap();
        let c = lyapunov_certificate(&zd1).unwrap();
        let p12 = 1.0 / (2.0 * w);
        let p22 = (1.0 + 1.0 / w) / (2.0 * c1);
        let p11 = c1 * p12 + w * p22;
        assert_relative_eq!(c.p11[(0, 0)], p11, max_relative = 1e-14);
        assert_relative_eq!(c.p12[(0, 0)], p12, max_relative = 1e-14);
        assert_relative_eq!(c.p22[(0, 0)], p22, max_relative = 1e-14);
    }

    #[test]
    fn non_positive_c_rejected() {
        let mut c = DMatrix::identity(3, 3);
        c[(1, 1)] = -1.0;
        let zd = ZeroDynamicsLti::new(0.1, 1.0, c).unwrap();
        let err = lyapunov_certificate(&zd).unwrap_err().to_string();
        assert!(err.contains("minor 2"), "{err}");
    }

    #[test]
    fn stability_condition_limits() {
        let zd = ZeroDynamicsLti { c1: 0.0, ..default_zd() };
        let r = stability_condition(&zd).unwrap();
        assert!(r.pass && r.rhs.is_infinite());
        let r = stability_condition(&default_zd()).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn hurwitz_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let a = rng.random_range(0.2..3.0);
            let b = rng.random_range(2.0..20.0);
            let e = rng.random_range(1e8..1e11);
            let h = rng.random_range(0.002..0.05);
            let rho = rng.random_range(1.0..30.0);
            let g = rng.random_range(0.0..0.45);
            let xi = rng.random_range(0.001..0.5);
            let zd = ZeroDynamicsLti::case_ii(a, b, e, h, rho, g, xi).unwrap();
            assert!(zd.is_hurwitz());
        }
    }

    #[test]
    fn closed_loop_lyapunov() {
        let zd = default_zd();
        let gains = ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 4, 50.0);
        let (u, norm) = closed_loop_certificate(&gains, &zd).unwrap();
        let a = closed_loop_matrix(&gains, &zd).unwrap();
        assert!((a.transpose() * &u + &u * &a + DMatrix::identity(14, 14)).amax() <= 1e-9 * norm);
        assert!(u.clone().cholesky().is_some());
    }

    #[test]
    fn closed_loop_linearization_matches_nonlinear_model() {
        let sc = sc(2, 0.05);
        let zd = ZeroDynamicsLti::from_appendage(&sc.appendages[0]).unwrap();
        let gains = ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 4, 50.0);
        let a = closed_loop_matrix(&gains, &zd).unwrap();
        assert_eq!(closed_loop_mu_dot(&sc, &gains, &DVector::zeros(14)).unwrap().amax(), 0.0);
        // the Jacobian of mu_dot at the origin equals A except for the linear rate-coupling columns
        let h = 1e-7;
        let mut jac = DMatrix::zeros(14, 14);
        for k in 0..14 {
            let mut e = DVector::zeros(14);
            e[k] = h;
            let d = (closed_loop_mu_dot(&sc, &gains, &e).unwrap() - closed_loop_mu_dot(&sc, &gains, &-&e).unwrap()) / (2.0 * h);
            jac.set_column(k, &d);
        }
        assert!((jac.view((0, 0), (3, 14)) - a.view((0, 0), (3, 14))).amax() < 1e-6);
        assert!((jac.view((3, 0), (3, 3)) - a.view((3, 0), (3, 3))).amax() < 1e-6);
        assert!((jac.view((3, 6), (3, 8)) - a.view((3, 6), (3, 8))).amax() < 1e-6);
        assert!((jac.view((10, 6), (4, 4)) - a.view((10, 6), (4, 4))).amax() < 1e-6);
    }

    #[test]
    fn pinned_outputs_follow_lti_zero_dynamics() {
        let sc = sc(2, 0.05);
        let zd = ZeroDynamicsLti::from_appendage(&sc.appendages[0]).unwrap();
        let gains = ControllerGains::flexible(0.08, 0.57, 0.0, 0.0, 4, f64::INFINITY);
        let ctl = crate::control::FlcController::flexible(
            sc.clone(),
            ControllerGains {
                kp_chi: DMatrix::zeros(3, 4),
                kd_chi: DMatrix::zeros(3, 4),
                ..gains
            },
        )
        .unwrap();
        let chi0 = DVector::from_vec(vec![0.05, -0.01, 0.02, 0.005]);
        // eta_b = chi_dot when w = 0
        let s0 = FlexState {
            chi: chi0.clone(),
            ..FlexState::rest(4)
        };
        let cfg = SolverConfig {
            rel_tol: 1e-11,
            ..SolverConfig::abm()
        };
        let tr = integrate(
            |_t, y: &[f64], o: &mut [f64]| {
                let s = FlexState::from_slice(y)?;
                let tau = ctl.torque(&s)?.applied;
                sc.state_derivative(y, &tau, o)
            },
            &s0.to_vec(),
            &Schedule::new(0.0, 100.0, Some(10.0)),
            &cfg,
        )
        .unwrap();
        let a = zd.a_matrix();
        let mut e0 = DVector::zeros(8);
        e0.rows_mut(0, 4).copy_from(&chi0);
        for (t, x) in tr.t.iter().zip(&tr.x) {
            let lti = (&a * *t).exp() * &e0;
            let chi = DVector::from_column_slice(&x[7..11]);
            assert!((chi - lti.rows(0, 4)).amax() < 1e-5, "t {t}");
        }
    }

    #[test]
    fn lipschitz_profile_and_radius() {
        let sc = sc(2, 0.05);
        let zd = ZeroDynamicsLti::from_appendage(&sc.appendages[0]).unwrap();
        let gains = ControllerGains::flexible(0.08, 0.57, 0.01, 0.001, 4, 50.0);
        let a = closed_loop_matrix(&gains, &zd).unwrap();
        let prof = lipschitz_profile(&sc, &gains, &a, &[1e-4, 1e-2], 5, 3).unwrap();
        assert!(prof.iter().all(|(_, l)| l.is_finite() && *l >= 0.0));
        assert_eq!(certified_radius(&[(0.1, 1.0), (0.01, 1e-9)], 1.0), Some(0.01));
        assert_eq!(certified_radius(&[(0.1, 1.0)], 1.0), None);
    }
}
