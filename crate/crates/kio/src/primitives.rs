//! Closed-form quintic boundary-value primitives and the analytic jerk cost.
//!
//! A primitive is one degree-5 position polynomial per axis over a fixed
//! horizon. The six boundary conditions (position, velocity, acceleration at
//! both ends) determine the polynomial uniquely, and the integral of squared
//! jerk over the horizon collapses to a quadratic form of the boundary data.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PrimitiveError {
    #[error("primitive duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("evaluation time {t} outside [0, {t_f}]")]
    TimeOutOfRange { t: f64, t_f: f64 },
    #[error("waypoint count must be at least 2, got {0}")]
    TooFewWaypoints(usize),
}

/// Flat-output state of the vehicle: position, velocity, acceleration, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinodynamicState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
}

impl KinodynamicState {
    pub fn rest_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw: 0.0,
        }
    }

    /// Rotation taking yaw-aligned body coordinates to world coordinates.
    pub fn yaw_rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }
}

/// Per-axis boundary data `[p0, v0, a0, pT, vT, aT]`.
pub type AxisBoundary = Vector6<f64>;

/// Terminal state of a candidate: `[pT, vT, aT]` stacked as a 9-vector,
/// expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl TerminalState {
    pub fn from_array(x: [f64; 9]) -> Self {
        Self {
            position: Vector3::new(x[0], x[1], x[2]),
            velocity: Vector3::new(x[3], x[4], x[5]),
            acceleration: Vector3::new(x[6], x[7], x[8]),
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.acceleration.x,
            self.acceleration.y,
            self.acceleration.z,
        ]
    }

    pub fn rest_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

/// A set of K candidate terminal states with confidences in (0, 1).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveSet {
    pub terminals: Vec<TerminalState>,
    pub confidences: Vec<f64>,
}

impl PrimitiveSet {
    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }
}

/// Per-axis quintic position polynomial, ascending powers of t.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Primitive {
    pub coefficients: [[f64; 6]; 3],
    pub duration: f64,
    pub initial_yaw: f64,
}

/// State of the polynomial and its first three derivatives at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

/// Solve the per-axis quintic boundary-value problem.
///
/// The unique degree-5 polynomial matching position, velocity and
/// acceleration at t = 0 and t = T is written down in closed form; it is
/// also the minimum-jerk interpolant for those boundary conditions.
pub fn solve_obvp(
    x0: &KinodynamicState,
    x_t: &TerminalState,
    t_f: f64,
) -> Result<Primitive, PrimitiveError> {
    if !(t_f > 0.0) {
        return Err(PrimitiveError::NonPositiveDuration(t_f));
    }
    let mut coefficients = [[0.0; 6]; 3];
    for axis in 0..3 {
        let d = AxisBoundary::new(
            x0.position[axis],
            x0.velocity[axis],
            x0.acceleration[axis],
            x_t.position[axis],
            x_t.velocity[axis],
            x_t.acceleration[axis],
        );
        coefficients[axis] = axis_coefficients(&d, t_f);
    }
    Ok(Primitive {
        coefficients,
        duration: t_f,
        initial_yaw: x0.yaw,
    })
}

/// Closed-form quintic coefficients for one axis.
fn axis_coefficients(d: &AxisBoundary, t: f64) -> [f64; 6] {
    let (p0, v0, a0, pt, vt, at) = (d[0], d[1], d[2], d[3], d[4], d[5]);
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;

    let dp = pt - p0 - v0 * t - 0.5 * a0 * t2;
    let dv = vt - v0 - a0 * t;
    let da = at - a0;

    [
        p0,
        v0,
        0.5 * a0,
        (20.0 * dp - 8.0 * t * dv + t2 * da) / (2.0 * t3),
        (-30.0 * dp + 14.0 * t * dv - 2.0 * t2 * da) / (2.0 * t4),
        (12.0 * dp - 6.0 * t * dv + t2 * da) / (2.0 * t5),
    ]
}

/// Sensitivity of the position at time `t` to the terminal boundary values
/// of the same axis: returns d p(t) / d (pT, vT, aT).
///
/// The quintic coefficients are linear in the boundary data, so these three
/// basis responses fully describe how a waypoint moves with the terminal
/// state. Used by the safety-loss gradient.
pub fn terminal_position_jacobian(t: f64, t_f: f64) -> Vector3<f64> {
    let tf2 = t_f * t_f;
    let tf3 = tf2 * t_f;
    let tf4 = tf3 * t_f;
    let tf5 = tf4 * t_f;
    let t3 = t * t * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    // Coefficients of pT, vT, aT in c3, c4, c5 of `axis_coefficients`.
    let dp_dpt = (10.0 / tf3) * t3 + (-15.0 / tf4) * t4 + (6.0 / tf5) * t5;
    let dp_dvt = (-4.0 / tf2) * t3 + (7.0 / tf3) * t4 + (-3.0 / tf4) * t5;
    let dp_dat = (0.5 / t_f) * t3 + (-1.0 / tf2) * t4 + (0.5 / tf3) * t5;
    Vector3::new(dp_dpt, dp_dvt, dp_dat)
}

impl Primitive {
    /// All-zero primitive (hover at the origin).
    pub fn zero(duration: f64) -> Self {
        Self {
            coefficients: [[0.0; 6]; 3],
            duration,
            initial_yaw: 0.0,
        }
    }

    /// Evaluate position and its first three derivatives at `t` by Horner's
    /// rule. Rejects times outside `[0, duration]`.
    pub fn eval(&self, t: f64) -> Result<Sample, PrimitiveError> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(PrimitiveError::TimeOutOfRange {
                t,
                t_f: self.duration,
            });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Sample {
        let mut p = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut a = Vector3::zeros();
        let mut j = Vector3::zeros();
        for axis in 0..3 {
            let c = &self.coefficients[axis];
            p[axis] = ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0];
            v[axis] = (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1];
            a[axis] = ((20.0 * c[5] * t + 12.0 * c[4]) * t + 6.0 * c[3]) * t + 2.0 * c[2];
            j[axis] = (60.0 * c[5] * t + 24.0 * c[4]) * t + 6.0 * c[3];
        }
        Sample {
            position: p,
            velocity: v,
            acceleration: a,
            jerk: j,
        }
    }

    /// Boundary states as a `KinodynamicState` / `TerminalState` pair.
    pub fn boundary_states(&self) -> (KinodynamicState, TerminalState) {
        let s0 = self.eval_unchecked(0.0);
        let st = self.eval_unchecked(self.duration);
        (
            KinodynamicState {
                position: s0.position,
                velocity: s0.velocity,
                acceleration: s0.acceleration,
                yaw: self.initial_yaw,
            },
            TerminalState {
                position: st.position,
                velocity: st.velocity,
                acceleration: st.acceleration,
            },
        )
    }

    /// Positions at `m` evenly spaced times spanning `[0, duration]`.
    pub fn sample_waypoints(&self, m: usize) -> Result<Vec<Vector3<f64>>, PrimitiveError> {
        if m < 2 {
            return Err(PrimitiveError::TooFewWaypoints(m));
        }
        let step = self.duration / (m - 1) as f64;
        Ok((0..m)
            .map(|i| self.eval_unchecked(i as f64 * step).position)
            .collect())
    }

    /// Times of the `m` waypoints produced by [`sample_waypoints`].
    pub fn waypoint_times(&self, m: usize) -> Vec<f64> {
        let step = self.duration / (m.max(2) - 1) as f64;
        (0..m.max(2)).map(|i| i as f64 * step).collect()
    }

    /// Exact integral of squared jerk over the horizon.
    pub fn jerk_cost(&self) -> f64 {
        self.jerk_cost_upto(self.duration)
    }

    /// Exact integral of squared jerk over `[0, t]`; used by the executed
    /// path smoothness metric when only a prefix of the primitive runs.
    pub fn jerk_cost_upto(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for axis in 0..3 {
            let c = &self.coefficients[axis];
            // jerk(t) = a + b t + c2 t^2 with:
            let a = 6.0 * c[3];
            let b = 24.0 * c[4];
            let q = 60.0 * c[5];
            let t2 = t * t;
            let t3 = t2 * t;
            let t4 = t3 * t;
            let t5 = t4 * t;
            total += a * a * t
                + a * b * t2
                + (b * b + 2.0 * a * q) * t3 / 3.0
                + b * q * t4 / 2.0
                + q * q * t5 / 5.0;
        }
        total
    }

    /// Maximum speed over a dense 1000-point time grid (grid-approximate).
    pub fn max_speed(&self) -> f64 {
        self.grid_max(|s| s.velocity.norm())
    }

    /// Maximum acceleration magnitude over the same grid.
    pub fn max_accel(&self) -> f64 {
        self.grid_max(|s| s.acceleration.norm())
    }

    fn grid_max(&self, f: impl Fn(&Sample) -> f64) -> f64 {
        const GRID: usize = 1000;
        let step = self.duration / (GRID - 1) as f64;
        (0..GRID)
            .map(|i| f(&self.eval_unchecked(i as f64 * step)))
            .fold(0.0, f64::max)
    }
}

/// The 6x6 jerk penalty matrix: `d' R_J(T) d` equals the squared-jerk
/// integral of the quintic with boundary data `d = [p0, v0, a0, pT, vT, aT]`.
///
/// Assembled exactly as B' G B where B maps boundary data to the cubic,
/// quartic and quintic coefficients and G is the Gram matrix of their jerk
/// contributions; every entry is a rational function of T.
#[derive(Debug, Clone, PartialEq)]
pub struct JerkPenaltyMatrix {
    matrix: Matrix6<f64>,
    duration: f64,
}

impl JerkPenaltyMatrix {
    pub fn new(t: f64) -> Result<Self, PrimitiveError> {
        if !(t > 0.0) {
            return Err(PrimitiveError::NonPositiveDuration(t));
        }
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;

        // Rows: coefficients of c3, c4, c5 in terms of d.
        #[rustfmt::skip]
        let b = nalgebra::Matrix3x6::new(
            -10.0 / t3, -6.0 / t2, -1.5 / t,  10.0 / t3, -4.0 / t2,  0.5 / t,
             15.0 / t4,  8.0 / t3,  1.5 / t2, -15.0 / t4,  7.0 / t3, -1.0 / t2,
             -6.0 / t5, -3.0 / t4, -0.5 / t3,   6.0 / t5, -3.0 / t4,  0.5 / t3,
        );
        #[rustfmt::skip]
        let g = Matrix3::new(
             36.0 * t,   72.0 * t2, 120.0 * t3,
             72.0 * t2, 192.0 * t3, 360.0 * t4,
            120.0 * t3, 360.0 * t4, 720.0 * t5,
        );
        Ok(Self {
            matrix: b.transpose() * g * b,
            duration: t,
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn as_matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    /// Quadratic form `d' R_J d` for one axis.
    pub fn quadratic_form(&self, d: &AxisBoundary) -> f64 {
        (d.transpose() * self.matrix * d)[0]
    }

    /// Gradient of the quadratic form with respect to the full boundary
    /// vector: `2 R_J d`.
    pub fn gradient(&self, d: &AxisBoundary) -> Vector6<f64> {
        2.0 * self.matrix * d
    }
}

/// Boundary vector for one axis from a start/terminal state pair.
pub fn axis_boundary(x0: &KinodynamicState, x_t: &TerminalState, axis: usize) -> AxisBoundary {
    AxisBoundary::new(
        x0.position[axis],
        x0.velocity[axis],
        x0.acceleration[axis],
        x_t.position[axis],
        x_t.velocity[axis],
        x_t.acceleration[axis],
    )
}

/// Total jerk quadratic form over the three axes.
pub fn jerk_quadratic_form(
    penalty: &JerkPenaltyMatrix,
    x0: &KinodynamicState,
    x_t: &TerminalState,
) -> f64 {
    (0..3)
        .map(|axis| penalty.quadratic_form(&axis_boundary(x0, x_t, axis)))
        .sum()
}
