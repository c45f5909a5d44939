//! Shared test oracles, independent of the library implementation paths
//! they are used to check.

use kio::primitives::{AxisBoundary, KinodynamicState, Primitive, TerminalState};
use nalgebra::{Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Composite Simpson quadrature over [a, b].
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(1) * 2;
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * f(a + i as f64 * h);
    }
    total * h / 3.0
}

/// Squared-jerk integral of a primitive by quadrature, evaluating the
/// polynomial's third derivative directly.
pub fn jerk_integral_quadrature(prim: &Primitive, panels: usize) -> f64 {
    simpson(
        |t| {
            let s = prim.eval(t.clamp(0.0, prim.duration)).unwrap();
            s.jerk.norm_squared()
        },
        0.0,
        prim.duration,
        panels,
    )
}

/// Solve one axis of the quintic boundary problem with a dense 6x6 LU
/// solve (independent of the closed-form path).
pub fn quintic_coefficients_by_lu(d: &AxisBoundary, t: f64) -> [f64; 6] {
    #[rustfmt::skip]
    let system = Matrix6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 2.0, 0.0, 0.0, 0.0,
        1.0, t, t*t, t*t*t, t*t*t*t, t*t*t*t*t,
        0.0, 1.0, 2.0*t, 3.0*t*t, 4.0*t*t*t, 5.0*t*t*t*t,
        0.0, 0.0, 2.0, 6.0*t, 12.0*t*t, 20.0*t*t*t,
    );
    let solution: Vector6<f64> = system.lu().solve(d).expect("well-conditioned system");
    [
        solution[0],
        solution[1],
        solution[2],
        solution[3],
        solution[4],
        solution[5],
    ]
}

pub fn random_state(rng: &mut ChaCha8Rng) -> KinodynamicState {
    KinodynamicState {
        position: Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ),
        velocity: Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ),
        acceleration: Vector3::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
        ),
        yaw: rng.random_range(-3.0..3.0),
    }
}

pub fn random_terminal(rng: &mut ChaCha8Rng) -> TerminalState {
    let s = random_state(rng);
    TerminalState {
        position: s.position,
        velocity: s.velocity,
        acceleration: s.acceleration,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
