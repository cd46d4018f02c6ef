//! Globally adaptive Gauss-Kronrod (7/15) quadrature for scalar and vector-valued integrands.

use nalgebra::DVector;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_489_0,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

/// Tolerances for [`integrate_vec`] and [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self {
            abs: 1e-12,
            rel: 1e-12,
            max_intervals: 2000,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    val: DVector<f64>,
    err: f64,
}

fn gk15<F: FnMut(f64) -> DVector<f64>>(f: &mut F, a: f64, b: f64) -> (DVector<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = &fc * WGK[7];
    let mut g = &fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        let s = &f1 + &f2;
        k += &s * WGK[j];
        if j % 2 == 1 {
            g += &s * WG[j / 2];
        }
    }
    let err = (&k - &g).amax() * h.abs();
    (k * h, err)
}

/// Integrates a vector-valued function over `[a, b]`; the error norm is the max-abs norm.
pub fn integrate_vec<F: FnMut(f64) -> DVector<f64>>(mut f: F, a: f64, b: f64, tol: QuadTol) -> DVector<f64> {
    if a == b {
        return f(a) * 0.0;
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut segs = vec![Segment { a, b, val: v, err: e }];
    loop {
        let total: DVector<f64> = segs.iter().skip(1).fold(segs[0].val.clone(), |acc, s| acc + &s.val);
        let err: f64 = segs.iter().map(|s| s.err).sum();
        if err <= tol.abs.max(tol.rel * total.amax()) || segs.len() >= tol.max_intervals {
            return total;
        }
        let (iw, _) = segs
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s.err > acc.1 { (i, s.err) } else { acc });
        let s = segs.swap_remove(iw);
        let m = 0.5 * (s.a + s.b);
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        segs.push(Segment {
            a: s.a,
            b: m,
            val: v1,
            err: e1,
        });
        segs.push(Segment {
            a: m,
            b: s.b,
            val: v2,
            err: e2,
        });
    }
}

/// Integrates a scalar function over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: QuadTol) -> f64 {
    integrate_vec(|x| DVector::from_element(1, f(x)), a, b, tol)[0]
}

/// Integrates a vector-valued function over the rectangle `[ax, bx] x [ay, by]` by nested adaptive quadrature.
pub fn integrate_2d<F: FnMut(f64, f64) -> DVector<f64>>(
    mut f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    tol: QuadTol,
) -> DVector<f64> {
    let inner = QuadTol {
        abs: tol.abs * 0.1,
        rel: tol.rel * 0.1,
        ..tol
    };
    integrate_vec(|x| integrate_vec(|y| f(x, y), ay, by, inner), ax, bx, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, QuadTol::default());
        assert_relative_eq!(v, 64.0 / 6.0 - 4.0, epsilon = 1e-13);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = integrate(|x| (50.0 * x).sin().powi(2), 0.0, 3.0, QuadTol::default());
        let exact = 1.5 - (300.0f64).sin() / 200.0;
        assert_relative_eq!(v, exact, epsilon = 1e-11);
    }

    #[test]
    fn vector_and_2d() {
        let v = integrate_2d(
            |x, y| DVector::from_vec(vec![x * y, (x + y).exp()]),
            (0.0, 1.0),
            (0.0, 2.0),
            QuadTol::default(),
        );
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        let e = std::f64::consts::E;
        assert_relative_eq!(v[1], (e - 1.0) * (e * e - 1.0), epsilon = 1e-11);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, QuadTol::default()), 0.0);
    }
}
