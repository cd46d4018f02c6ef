//! Fixtures shared by the benchmarks.

use attdyn_core::flex::{AppendageSpec, FlexState};
use attdyn_core::{Appendage, FlexibleSpacecraft, Matrix3, Quaternion, Vector3};
use nalgebra::DVector;

/// Single 1 m x 10 m plate on a 2000 kg bus with `p x p` modes.
pub fn plate_spacecraft(p: usize) -> FlexibleSpacecraft {
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
    .expect("valid appendage");
    FlexibleSpacecraft::new(Matrix3::identity() * (2000.0 / 6.0), 2000.0, vec![app], Vector3::zeros()).expect("valid spacecraft")
}

/// Tumbling, deflected state with `k` modes.
pub fn sample_state(k: usize) -> FlexState {
    FlexState {
        q: Quaternion::new(0.9, 0.2, -0.3, 0.1).normalized(),
        omega: Vector3::new(0.05, -0.1, 0.02),
        chi: DVector::from_fn(k, |i, _| 0.01 * (i as f64 + 1.0)),
        chi_dot: DVector::from_fn(k, |i, _| -0.005 * (i as f64 + 1.0)),
    }
}
