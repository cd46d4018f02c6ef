//! Beam eigenfunctions, cantilever plate mode shapes and the mode-shape integral catalog.
//!
//! Plate deflection is expanded as `w(x, y) = sum chi_rs phi_r(x) psi_s(y)` with free-free
//! shapes `phi_r` across the width `a` and clamped-free shapes `psi_s` along the length `b`.
//! Shapes are unnormalized, so `int phi_r^2 = a` and `int psi_s^2 = b`.
//! Generalized coordinates are ordered with index `(r - 1) q + (s - 1)`, so every
//! two-dimensional integral matrix is the Kronecker product `M(x) (x) M(y)`.

use crate::error::{AttError, Result};
use crate::quad::{integrate_2d, integrate_vec, QuadTol};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    FreeFree,
    ClampedFree,
}

/// Characteristic residual scaled by `1 / cosh`, bounded for any root size.
fn scaled_residual(f: Family, l: f64) -> f64 {
    match f {
        Family::FreeFree => 1.0 / l.cosh() - l.cos(),
        Family::ClampedFree => 1.0 / l.cosh() + l.cos(),
    }
}

/// Unscaled characteristic residual: `1 - cosh cos` or `1 + cosh cos`.
pub fn characteristic_residual_freefree(l: f64) -> f64 {
    1.0 - l.cosh() * l.cos()
}

pub fn characteristic_residual_clampedfree(l: f64) -> f64 {
    1.0 + l.cosh() * l.cos()
}

fn bisect(f: Family, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = scaled_residual(f, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = scaled_residual(f, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (scaled_residual(f, lo).abs(), scaled_residual(f, hi).abs());
    if a <= b {
        lo
    } else {
        hi
    }
}

/// First `count` positive roots of `1 - cosh(l) cos(l) = 0` (free-free beam).
///
/// The k-th root lies in `[k pi, (k + 1) pi]`; it is bracketed there and refined by bisection
/// on the rescaled residual `1/cosh(l) - cos(l)`.
pub fn solve_freefree_roots(count: usize) -> Vec<f64> {
    (1..=count)
        .map(|k| bisect(Family::FreeFree, k as f64 * PI, (k + 1) as f64 * PI))
        .collect()
}

/// First `count` positive roots of `1 + cosh(l) cos(l) = 0` (clamped-free beam).
pub fn solve_clampedfree_roots(count: usize) -> Vec<f64> {
    (1..=count)
        .map(|k| bisect(Family::ClampedFree, (k - 1) as f64 * PI, k as f64 * PI))
        .collect()
}

/// Shape coefficient `sigma` and the overflow-free product `(1 - sigma) e^l` for one eigenfunction.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Shape {
    lambda: f64,
    sigma: f64,
    one_minus_sigma_scaled: f64,
}

impl Shape {
    fn new(f: Family, l: f64) -> Self {
        let em = (-l).exp();
        let (s, c) = l.sin_cos();
        match f {
            Family::FreeFree => Self {
                lambda: l,
                sigma: (1.0 - 2.0 * c * em + em * em) / (1.0 - 2.0 * s * em - em * em),
                one_minus_sigma_scaled: 2.0 * (-em - s + c) / (1.0 - em * em - 2.0 * em * s),
            },
            Family::ClampedFree => Self {
                lambda: l,
                sigma: (1.0 - em * em - 2.0 * s * em) / (1.0 + em * em + 2.0 * c * em),
                one_minus_sigma_scaled: 2.0 * (em + c + s) / (1.0 + em * em + 2.0 * em * c),
            },
        }
    }

    /// `(cosh z - sigma sinh z, sinh z - sigma cosh z)` without overflow.
    fn hyperbolic(&self, z: f64) -> (f64, f64) {
        let ep = self.one_minus_sigma_scaled * (z - self.lambda).exp();
        let em = (1.0 + self.sigma) * (-z).exp();
        (0.5 * (ep + em), 0.5 * (ep - em))
    }
}

/// Roots, coefficients and integral catalog inputs for one rectangular plate appendage.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalBasis {
    pub p: usize,
    pub q: usize,
    pub a: f64,
    pub b: f64,
    x_shapes: Vec<Shape>,
    y_shapes: Vec<Shape>,
}

impl ModalBasis {
    pub fn new(p: usize, q: usize, a: f64, b: f64) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(AttError::InvalidInput(format!("mode counts must be positive (p = {p}, q = {q})")));
        }
        if !(a > 0.0 && b > 0.0) {
            return Err(AttError::InvalidInput(format!(
                "plate dimensions must be positive (a = {a}, b = {b})"
            )));
        }
        let x_shapes = solve_freefree_roots(p.saturating_sub(2))
            .into_iter()
            .map(|l| Shape::new(Family::FreeFree, l))
            .collect();
        let y_shapes = solve_clampedfree_roots(q)
            .into_iter()
            .map(|l| Shape::new(Family::ClampedFree, l))
            .collect();
        Ok(Self {
            p,
            q,
            a,
            b,
            x_shapes,
            y_shapes,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.p * self.q
    }

    /// Free-free root used by x-mode `r` (`r >= 3`), else `None`.
    pub fn lambda_x(&self, r: usize) -> Option<f64> {
        (r >= 3 && r <= self.p).then(|| self.x_shapes[r - 3].lambda)
    }

    pub fn sigma_x(&self, r: usize) -> Option<f64> {
        (r >= 3 && r <= self.p).then(|| self.x_shapes[r - 3].sigma)
    }

    pub fn lambda_y(&self, s: usize) -> f64 {
        self.y_shapes[s - 1].lambda
    }

    pub fn sigma_y(&self, s: usize) -> f64 {
        self.y_shapes[s - 1].sigma
    }

    fn check_r(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.p {
            return Err(AttError::InvalidInput(format!("x-mode index {r} out of 1..={}", self.p)));
        }
        Ok(())
    }

    fn check_s(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.q {
            return Err(AttError::InvalidInput(format!("y-mode index {s} out of 1..={}", self.q)));
        }
        Ok(())
    }

    /// `[phi_r, phi_r', phi_r'']` at `x`.
    pub fn phi_derivs(&self, r: usize, x: f64) -> Result<[f64; 3]> {
        self.check_r(r)?;
        Ok(self.phi_unchecked(r, x))
    }

    fn phi_unchecked(&self, r: usize, x: f64) -> [f64; 3] {
        let a = self.a;
        match r {
            1 => [1.0, 0.0, 0.0],
            2 => [12f64.sqrt() * (0.5 - x / a), -(12f64.sqrt()) / a, 0.0],
            _ => {
                let sh = &self.x_shapes[r - 3];
                let k = sh.lambda / a;
                let z = k * x;
                let (ch, shs) = sh.hyperbolic(z);
                let (sn, cs) = z.sin_cos();
                let s = sh.sigma;
                [ch + cs - s * sn, k * (shs - sn - s * cs), k * k * (ch - cs + s * sn)]
            }
        }
    }

    /// `[psi_s, psi_s', psi_s'']` at `y`.
    pub fn psi_derivs(&self, s: usize, y: f64) -> Result<[f64; 3]> {
        self.check_s(s)?;
        Ok(self.psi_unchecked(s, y))
    }

    fn psi_unchecked(&self, s: usize, y: f64) -> [f64; 3] {
        let sh = &self.y_shapes[s - 1];
        let k = sh.lambda / self.b;
        let z = k * y;
        let (ch, shs) = sh.hyperbolic(z);
        let (sn, cs) = z.sin_cos();
        let sg = sh.sigma;
        [ch - cs + sg * sn, k * (shs + sn + sg * cs), k * k * (ch + cs - sg * sn)]
    }

    pub fn phi(&self, r: usize, x: f64) -> Result<f64> {
        Ok(self.phi_derivs(r, x)?[0])
    }

    pub fn psi(&self, s: usize, y: f64) -> Result<f64> {
        Ok(self.psi_derivs(s, y)?[0])
    }

    /// All x-shape values and derivatives at `x`, indexed `[r - 1][derivative order]`.
    pub fn phi_all(&self, x: f64) -> Vec<[f64; 3]> {
        (1..=self.p).map(|r| self.phi_unchecked(r, x)).collect()
    }

    pub fn psi_all(&self, y: f64) -> Vec<[f64; 3]> {
        (1..=self.q).map(|s| self.psi_unchecked(s, y)).collect()
    }

    fn lx(&self, r: usize) -> (f64, f64) {
        let sh = &self.x_shapes[r - 3];
        (sh.lambda, sh.sigma)
    }

    fn ly(&self, s: usize) -> (f64, f64) {
        let sh = &self.y_shapes[s - 1];
        (sh.lambda, sh.sigma)
    }
}

fn parity(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// One-dimensional factors of the catalog, exposed for inspection and tests.
pub mod oned {
    use super::*;

    /// `int_0^a phi_r phi_s dx = a I`.
    pub fn m_phiphi(bs: &ModalBasis) -> DMatrix<f64> {
        DMatrix::identity(bs.p, bs.p) * bs.a
    }

    /// `int_0^a x phi_r phi_s dx`.
    pub fn m_xphiphi(bs: &ModalBasis) -> DMatrix<f64> {
        let a = bs.a;
        let p = bs.p;
        let mut m = DMatrix::zeros(p, p);
        for i in 1..=p {
            for j in i..=p {
                let v = if i == j {
                    a * a / 2.0
                } else if i == 1 && j == 2 {
                    -a * a / (2.0 * SQRT3)
                } else if i == 1 {
                    0.0
                } else if i == 2 {
                    let (lj, sj) = bs.lx(j);
                    -8.0 * SQRT3 * a * a * sj / lj.powi(3) * (1.0 - parity(j))
                } else {
                    let (li, si) = bs.lx(i);
                    let (lj, sj) = bs.lx(j);
                    let (l4i, l4j) = (li.powi(4), lj.powi(4));
                    8.0 * a * a * si * li * sj * lj * (l4i + l4j) / (l4i - l4j).powi(2) * (parity(i + j) - 1.0)
                };
                m[(i - 1, j - 1)] = v;
                m[(j - 1, i - 1)] = v;
            }
        }
        m
    }

    /// `int_0^a phi_r'' phi_s'' dx`.
    pub fn m_phi2phi2(bs: &ModalBasis) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(bs.p, bs.p);
        for i in 3..=bs.p {
            m[(i - 1, i - 1)] = bs.lx(i).0.powi(4) / bs.a.powi(3);
        }
        m
    }

    /// `int_0^a phi_r' phi_s' dx`.
    pub fn m_phi1phi1(bs: &ModalBasis) -> DMatrix<f64> {
        let a = bs.a;
        let p = bs.p;
        let mut m = DMatrix::zeros(p, p);
        for i in 2..=p {
            for j in i..=p {
                let v = if i == 2 && j == 2 {
                    12.0 / a
                } else if i == 2 {
                    4.0 * SQRT3 / a * (parity(j) + 1.0)
                } else if i == j {
                    let (l, s) = bs.lx(i);
                    l * s / a * (6.0 + l * s)
                } else {
                    let (li, si) = bs.lx(i);
                    let (lj, sj) = bs.lx(j);
                    4.0 * lj * li * (sj * li.powi(3) - si * lj.powi(3)) / (a * (li.powi(4) - lj.powi(4))) * (parity(i + j) + 1.0)
                };
                m[(i - 1, j - 1)] = v;
                m[(j - 1, i - 1)] = v;
            }
        }
        m
    }

    /// `A[r, s] = int_0^a phi_r'' phi_s dx` (nonzero rows only for `r >= 3`).
    pub fn a_x(bs: &ModalBasis) -> DMatrix<f64> {
        let a = bs.a;
        let p = bs.p;
        let mut m = DMatrix::zeros(p, p);
        for i in 3..=p {
            let (li, si) = bs.lx(i);
            let pi = parity(i);
            for j in 1..=p {
                m[(i - 1, j - 1)] = match j {
                    1 => 2.0 * si * li / a * (1.0 - pi),
                    2 => 2.0 * SQRT3 * si * li / a * (1.0 - pi) - 4.0 * SQRT3 / a * (1.0 + pi - pi * si * li),
                    _ if j == i => si * li / a * (2.0 - si * li),
                    _ => {
                        let (lj, sj) = bs.lx(j);
                        4.0 * li.powi(4) * (sj * lj - si * li) / (a * (lj.powi(4) - li.powi(4))) * (1.0 + parity(i + j))
                    }
                };
            }
        }
        m
    }

    /// `int_0^b psi_s psi_t dy = b I`.
    pub fn m_psipsi(bs: &ModalBasis) -> DMatrix<f64> {
        DMatrix::identity(bs.q, bs.q) * bs.b
    }

    /// `int_0^b (b - y) psi_s' psi_t' dy`.
    pub fn m1_y(bs: &ModalBasis) -> DMatrix<f64> {
        let q = bs.q;
        let mut m = DMatrix::zeros(q, q);
        for i in 1..=q {
            for j in i..=q {
                let (li, si) = bs.ly(i);
                let v = if i == j {
                    2.0 + si * si * li * li / 2.0 - si * li
                } else {
                    let (lj, sj) = bs.ly(j);
                    let (l2i, l2j) = (li * li, lj * lj);
                    8.0 * l2i * l2j / (l2j + parity(i + j) * l2i).powi(2) - 4.0 * l2i * l2j * (sj * lj - si * li) / (l2j * l2j - l2i * l2i)
                };
                m[(i - 1, j - 1)] = v;
                m[(j - 1, i - 1)] = v;
            }
        }
        m
    }

    /// `int_0^b (b^2 - y^2) / 2 psi_s' psi_t' dy`, evaluated by adaptive quadrature.
    pub fn m4_y(bs: &ModalBasis) -> DMatrix<f64> {
        let q = bs.q;
        let b = bs.b;
        let tol = QuadTol {
            abs: 1e-12,
            rel: 1e-13,
            max_intervals: 4000,
        };
        let v = integrate_vec(
            |y| {
                let d = bs.psi_all(y);
                let w = 0.5 * (b * b - y * y);
                let mut out = DVector::zeros(q * q);
                for i in 0..q {
                    for j in 0..q {
                        out[i * q + j] = w * d[i][1] * d[j][1];
                    }
                }
                out
            },
            0.0,
            b,
            tol,
        );
        let mut m = DMatrix::from_fn(q, q, |i, j| v[i * q + j]);
        m = (&m + m.transpose()) * 0.5;
        m
    }

    /// `int_0^b psi_s'' psi_t'' dy`.
    pub fn m_psi2psi2(bs: &ModalBasis) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(bs.q, bs.q);
        for i in 1..=bs.q {
            m[(i - 1, i - 1)] = bs.ly(i).0.powi(4) / bs.b.powi(3);
        }
        m
    }

    /// `B[s, t] = int_0^b psi_s psi_t'' dy`.
    pub fn b_y(bs: &ModalBasis) -> DMatrix<f64> {
        let q = bs.q;
        let b = bs.b;
        DMatrix::from_fn(q, q, |i0, j0| {
            let (i, j) = (i0 + 1, j0 + 1);
            let (li, si) = bs.ly(i);
            if i == j {
                si * li / b * (2.0 - si * li)
            } else {
                let (lj, sj) = bs.ly(j);
                4.0 * lj * lj * (si * li - sj * lj) / (b * (li.powi(4) - lj.powi(4))) * (li * li + parity(i + j) * lj * lj)
            }
        })
    }

    /// `int_0^b psi_s' psi_t' dy`.
    pub fn m_psi1psi1(bs: &ModalBasis) -> DMatrix<f64> {
        let q = bs.q;
        let b = bs.b;
        let mut m = DMatrix::zeros(q, q);
        for i in 1..=q {
            for j in i..=q {
                let (li, si) = bs.ly(i);
                let v = if i == j {
                    si * li / b * (2.0 + si * li)
                } else {
                    let (lj, sj) = bs.ly(j);
                    4.0 * lj * li / (b * (li.powi(4) - lj.powi(4)))
                        * (parity(i + j) * (sj * li.powi(3) - si * lj.powi(3)) - lj * li * (si * li - sj * lj))
                };
                m[(i - 1, j - 1)] = v;
                m[(j - 1, i - 1)] = v;
            }
        }
        m
    }

    /// `int_0^a phi_r dx`.
    pub fn v_phi(bs: &ModalBasis) -> DVector<f64> {
        let mut v = DVector::zeros(bs.p);
        v[0] = bs.a;
        v
    }

    /// `int_0^a x phi_r dx`.
    pub fn v_xphi(bs: &ModalBasis) -> DVector<f64> {
        let mut v = DVector::zeros(bs.p);
        v[0] = bs.a * bs.a / 2.0;
        if bs.p >= 2 {
            v[1] = -bs.a * bs.a / (2.0 * SQRT3);
        }
        v
    }

    /// `int_0^b psi_s dy = 2 b sigma_s / lambda_s`.
    pub fn v_psi(bs: &ModalBasis) -> DVector<f64> {
        DVector::from_fn(bs.q, |i, _| {
            let (l, s) = bs.ly(i + 1);
            2.0 * bs.b * s / l
        })
    }

    /// `int_0^b y psi_s dy = 2 b^2 / lambda_s^2`.
    pub fn v_ypsi(bs: &ModalBasis) -> DVector<f64> {
        DVector::from_fn(bs.q, |i, _| 2.0 * bs.b * bs.b / bs.ly(i + 1).0.powi(2))
    }
}

/// Kronecker product of two vectors, ordered to match the generalized coordinates.
fn kron_vec(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let q = y.len();
    DVector::from_fn(x.len() * q, |k, _| x[k / q] * y[k % q])
}

/// Integral matrices `M1..M8` and vectors `m1..m3` of one appendage.
///
/// * `M1 = int (b - y) C'C'^T`, `M2 = int x (b - y) C'C'^T`, where `C` is the vector of mode products and `'` is `d/dy`
/// * `M3 = int C C^T`, `M4 = int (b^2 - y^2)/2 C'C'^T`
/// * `M5 = int C_xx C_xx^T`, `M6 = int C_yy C_yy^T`, `M7 = int C_xx C_yy^T`, `M8 = int C_xy C_xy^T`
/// * `m1 = int C`, `m2 = int y C`, `m3 = int x C`
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralCatalog {
    pub m: [DMatrix<f64>; 8],
    pub v: [DVector<f64>; 3],
}

impl IntegralCatalog {
    pub fn new(bs: &ModalBasis) -> Self {
        use oned::*;
        let mpp = m_phiphi(bs);
        let m1y = m1_y(bs);
        let m = [
            mpp.kronecker(&m1y),
            m_xphiphi(bs).kronecker(&m1y),
            mpp.kronecker(&m_psipsi(bs)),
            mpp.kronecker(&m4_y(bs)),
            m_phi2phi2(bs).kronecker(&m_psipsi(bs)),
            mpp.kronecker(&m_psi2psi2(bs)),
            a_x(bs).kronecker(&b_y(bs)),
            m_phi1phi1(bs).kronecker(&m_psi1psi1(bs)),
        ];
        let v = [
            kron_vec(&v_phi(bs), &v_psi(bs)),
            kron_vec(&v_phi(bs), &v_ypsi(bs)),
            kron_vec(&v_xphi(bs), &v_psi(bs)),
        ];
        Self { m, v }
    }
}

/// Matrix `M_k`, `k` in `1..=8`.
pub fn integral_matrix(k: usize, bs: &ModalBasis) -> Result<DMatrix<f64>> {
    if !(1..=8).contains(&k) {
        return Err(AttError::InvalidInput(format!("matrix index {k} out of 1..=8")));
    }
    Ok(IntegralCatalog::new(bs).m[k - 1].clone())
}

/// Vector `m_k`, `k` in `1..=3`.
pub fn integral_vector(k: usize, bs: &ModalBasis) -> Result<DVector<f64>> {
    if !(1..=3).contains(&k) {
        return Err(AttError::InvalidInput(format!("vector index {k} out of 1..=3")));
    }
    Ok(IntegralCatalog::new(bs).v[k - 1].clone())
}

/// Independent oracle: `M_k` from two-dimensional adaptive quadrature of its defining integrand.
pub fn quadrature_matrix(k: usize, bs: &ModalBasis, tol: QuadTol) -> Result<DMatrix<f64>> {
    if !(1..=8).contains(&k) {
        return Err(AttError::InvalidInput(format!("matrix index {k} out of 1..=8")));
    }
    let (p, q, a, b) = (bs.p, bs.q, bs.a, bs.b);
    let n = p * q;
    let v = integrate_2d(
        |x, y| {
            let fx = bs.phi_all(x);
            let fy = bs.psi_all(y);
            // (left factor, right factor) of each mode product.
            let (dl, dr, wgt): ((usize, usize), (usize, usize), f64) = match k {
                1 => ((0, 1), (0, 1), b - y),
                2 => ((0, 1), (0, 1), x * (b - y)),
                3 => ((0, 0), (0, 0), 1.0),
                4 => ((0, 1), (0, 1), 0.5 * (b * b - y * y)),
                5 => ((2, 0), (2, 0), 1.0),
                6 => ((0, 2), (0, 2), 1.0),
                7 => ((2, 0), (0, 2), 1.0),
                _ => ((1, 1), (1, 1), 1.0),
            };
            let mut out = DVector::zeros(n * n);
            for r in 0..p {
                for s in 0..q {
                    let left = fx[r][dl.0] * fy[s][dl.1] * wgt;
                    for r2 in 0..p {
                        for s2 in 0..q {
                            out[(r * q + s) * n + r2 * q + s2] = left * fx[r2][dr.0] * fy[s2][dr.1];
                        }
                    }
                }
            }
            out
        },
        (0.0, a),
        (0.0, b),
        tol,
    );
    Ok(DMatrix::from_fn(n, n, |i, j| v[i * n + j]))
}

/// Independent oracle: `m_k` from two-dimensional adaptive quadrature.
pub fn quadrature_vector(k: usize, bs: &ModalBasis, tol: QuadTol) -> Result<DVector<f64>> {
    if !(1..=3).contains(&k) {
        return Err(AttError::InvalidInput(format!("vector index {k} out of 1..=3")));
    }
    let (p, q) = (bs.p, bs.q);
    Ok(integrate_2d(
        |x, y| {
            let fx = bs.phi_all(x);
            let fy = bs.psi_all(y);
            let w = match k {
                1 => 1.0,
                2 => y,
                _ => x,
            };
            DVector::from_fn(p * q, |i, _| w * fx[i / q][0] * fy[i % q][0])
        },
        (0.0, bs.a),
        (0.0, bs.b),
        tol,
    ))
}

/// Largest entrywise deviation relative to the largest entry of `reference`.
pub fn relative_deviation(m: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax().max(f64::MIN_POSITIVE);
    (m - reference).amax() / scale
}
