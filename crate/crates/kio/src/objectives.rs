//! Unsupervised training objective: smoothness, depth-margin safety and
//! goal guidance, with analytic gradients with respect to candidate
//! terminal states and confidences.
//!
//! The safety term uses bilinear depth lookups so gradients flow through
//! the projection; the inference shield (see [`crate::shield`]) uses
//! nearest-pixel lookups instead. The guidance term scores parallel
//! progress toward the goal, penalizes lateral excursion beyond a
//! tolerance, and rewards lateral spread across candidates so the set keeps
//! exploring adjacent openings instead of collapsing onto one ray.

use crate::camera::{world_to_camera, BodyPose, CameraExtrinsics, DepthImage, Intrinsics, Z_NEAR};
use crate::primitives::{
    axis_boundary, terminal_position_jacobian, JerkPenaltyMatrix, KinodynamicState, PrimitiveSet,
};
use crate::shield::SafetyParams;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("goal coincides with the current position")]
    DegenerateGoal,
    #[error("candidate set has {terminals} terminals but {confidences} confidences")]
    MismatchedSet { terminals: usize, confidences: usize },
    #[error(transparent)]
    Primitive(#[from] crate::primitives::PrimitiveError),
}

/// Weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub smooth: f64,
    pub safety: f64,
    pub guidance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            smooth: 1e-3,
            safety: 1.0,
            guidance: 0.1,
        }
    }
}

/// Guidance shaping parameters. The goal itself is passed per call; the
/// unit goal direction is derived from it and the current position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Reward per meter of progress along the goal direction.
    pub progress_weight: f64,
    /// Quadratic penalty weight on lateral excess beyond the tolerance.
    pub lateral_weight: f64,
    /// Reward on the spread of signed lateral offsets across candidates.
    pub diversity_weight: f64,
    /// Lateral tolerance in meters before the hinge activates.
    pub lateral_tolerance: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            progress_weight: 1.0,
            lateral_weight: 0.5,
            diversity_weight: 0.2,
            lateral_tolerance: 2.0,
        }
    }
}

/// One loss component: value plus gradients per candidate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTerm {
    pub value: f64,
    pub grad_terminals: Vec<[f64; 9]>,
    pub grad_confidences: Vec<f64>,
}

impl LossTerm {
    fn zeros(k: usize) -> Self {
        Self {
            value: 0.0,
            grad_terminals: vec![[0.0; 9]; k],
            grad_confidences: vec![0.0; k],
        }
    }
}

/// Weighted total with per-component values and summed gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub smooth: f64,
    pub safety: f64,
    pub guidance: f64,
    pub grad_terminals: Vec<[f64; 9]>,
    pub grad_confidences: Vec<f64>,
}

/// Everything the losses need about the current frame and configuration.
#[derive(Clone, Copy)]
pub struct LossContext<'a> {
    pub x0: &'a KinodynamicState,
    pub horizon: f64,
    pub waypoints: usize,
    pub image: &'a DepthImage,
    pub pose: &'a BodyPose,
    pub intrinsics: &'a Intrinsics,
    pub extrinsics: &'a CameraExtrinsics,
    pub safety: &'a SafetyParams,
    pub goal: Vector3<f64>,
    pub guidance: &'a GuidanceConfig,
    pub weights: &'a LossWeights,
}

fn check_set(set: &PrimitiveSet) -> Result<(), ObjectiveError> {
    if set.terminals.len() != set.confidences.len() {
        return Err(ObjectiveError::MismatchedSet {
            terminals: set.terminals.len(),
            confidences: set.confidences.len(),
        });
    }
    Ok(())
}

/// Numerically stable softplus and its derivative (the logistic sigmoid).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Confidence-weighted mean of the per-candidate jerk quadratic form.
pub fn smoothness_loss(
    set: &PrimitiveSet,
    x0: &KinodynamicState,
    horizon: f64,
) -> Result<LossTerm, ObjectiveError> {
    check_set(set)?;
    let k = set.len();
    let mut term = LossTerm::zeros(k);
    if k == 0 {
        return Ok(term);
    }
    let penalty = JerkPenaltyMatrix::new(horizon)?;
    let conf_sum: f64 = set.confidences.iter().sum();
    let mut costs = vec![0.0; k];
    for (i, terminal) in set.terminals.iter().enumerate() {
        let mut cost = 0.0;
        for axis in 0..3 {
            let d = axis_boundary(x0, terminal, axis);
            cost += penalty.quadratic_form(&d);
            let grad = penalty.gradient(&d);
            let scale = set.confidences[i] / conf_sum;
            // Terminal entries of d are [pT, vT, aT] for this axis.
            term.grad_terminals[i][axis] += scale * grad[3];
            term.grad_terminals[i][3 + axis] += scale * grad[4];
            term.grad_terminals[i][6 + axis] += scale * grad[5];
        }
        costs[i] = cost;
    }
    term.value = set
        .confidences
        .iter()
        .zip(&costs)
        .map(|(c, j)| c * j)
        .sum::<f64>()
        / conf_sum;
    for i in 0..k {
        term.grad_confidences[i] = (costs[i] - term.value) / conf_sum;
    }
    Ok(term)
}

/// Softplus depth-margin penalty over all waypoints of all candidates,
/// weighted by raw confidences.
///
/// Waypoints that do not project into the image (out of view or closer
/// than the near plane) are treated as seeing free space out to the sensor
/// range, so the penalty stays smooth at the view boundary.
pub fn safety_loss(set: &PrimitiveSet, ctx: &LossContext) -> Result<LossTerm, ObjectiveError> {
    check_set(set)?;
    let k = set.len();
    let mut term = LossTerm::zeros(k);
    if k == 0 {
        return Ok(term);
    }
    let margin = ctx.safety.margin();
    let intr = ctx.intrinsics;
    let rotation_cw = (ctx.pose.rotation * ctx.extrinsics.rotation).transpose();
    let m = ctx.waypoints.max(2);
    let step = ctx.horizon / (m - 1) as f64;

    for (i, terminal) in set.terminals.iter().enumerate() {
        let prim = crate::primitives::solve_obvp(ctx.x0, terminal, ctx.horizon)?;
        let confidence = set.confidences[i];
        let mut candidate_sum = 0.0;
        for wp in 0..m {
            let t = wp as f64 * step;
            let point = prim.eval_unchecked(t).position;
            let p_c = world_to_camera(&point, ctx.pose, ctx.extrinsics);
            let in_view = p_c.z > Z_NEAR && {
                let u = intr.fx * p_c.x / p_c.z + intr.cx;
                let v = intr.fy * p_c.y / p_c.z + intr.cy;
                u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64
            };
            // d(margin)/d(p_world), a 3-vector.
            let (g, dg_dpw) = if in_view {
                let u = intr.fx * p_c.x / p_c.z + intr.cx;
                let v = intr.fy * p_c.y / p_c.z + intr.cy;
                let (d_obs, dd_du, dd_dv) = ctx.image.sample_bilinear_with_gradient(u, v);
                let g = p_c.z - d_obs + margin;
                let du_dpc = Vector3::new(
                    intr.fx / p_c.z,
                    0.0,
                    -intr.fx * p_c.x / (p_c.z * p_c.z),
                );
                let dv_dpc = Vector3::new(
                    0.0,
                    intr.fy / p_c.z,
                    -intr.fy * p_c.y / (p_c.z * p_c.z),
                );
                let dz_dpc = Vector3::new(0.0, 0.0, 1.0);
                let dg_dpc = dz_dpc - dd_du * du_dpc - dd_dv * dv_dpc;
                (g, rotation_cw.transpose() * dg_dpc)
            } else {
                let g = p_c.z - ctx.image.max_range + margin;
                (g, rotation_cw.transpose() * Vector3::new(0.0, 0.0, 1.0))
            };
            candidate_sum += softplus(g);
            let slope = confidence * sigmoid(g);
            let jac = terminal_position_jacobian(t, ctx.horizon);
            for axis in 0..3 {
                term.grad_terminals[i][axis] += slope * dg_dpw[axis] * jac.x;
                term.grad_terminals[i][3 + axis] += slope * dg_dpw[axis] * jac.y;
                term.grad_terminals[i][6 + axis] += slope * dg_dpw[axis] * jac.z;
            }
        }
        term.grad_confidences[i] = candidate_sum;
        term.value += confidence * candidate_sum;
    }
    Ok(term)
}

/// Progress / lateral-excess / diversity guidance over the candidate set,
/// with confidences normalized to sum one.
pub fn guidance_loss(
    set: &PrimitiveSet,
    x0: &KinodynamicState,
    goal: &Vector3<f64>,
    cfg: &GuidanceConfig,
) -> Result<LossTerm, ObjectiveError> {
    check_set(set)?;
    let k = set.len();
    let mut term = LossTerm::zeros(k);
    if k == 0 {
        return Ok(term);
    }
    let to_goal = goal - x0.position;
    if to_goal.norm() < 1e-12 {
        return Err(ObjectiveError::DegenerateGoal);
    }
    let g_hat = to_goal.normalize();
    // Horizontal-left axis for signed lateral offsets; fall back near the
    // vertical singularity.
    let mut lateral_axis = Vector3::z().cross(&g_hat);
    if lateral_axis.norm() < 1e-6 {
        lateral_axis = g_hat.cross(&Vector3::x());
    }
    let lateral_axis = lateral_axis.normalize();

    let conf_sum: f64 = set.confidences.iter().sum();
    let mut per_candidate = vec![0.0; k];
    let mut offsets = vec![0.0; k];

    for (i, terminal) in set.terminals.iter().enumerate() {
        let dp = terminal.position - x0.position;
        let progress = dp.dot(&g_hat);
        let lat_vec = dp - progress * g_hat;
        let lateral = lat_vec.norm();
        let hinge = (lateral - cfg.lateral_tolerance).max(0.0);
        per_candidate[i] = -cfg.progress_weight * progress + cfg.lateral_weight * hinge * hinge;
        offsets[i] = dp.dot(&lateral_axis);

        let weight = set.confidences[i] / conf_sum;
        let mut grad_p = -cfg.progress_weight * g_hat;
        if hinge > 0.0 && lateral > 1e-12 {
            grad_p += cfg.lateral_weight * 2.0 * hinge * (lat_vec / lateral);
        }
        for axis in 0..3 {
            term.grad_terminals[i][axis] += weight * grad_p[axis];
        }
    }

    let mean_offset: f64 = offsets.iter().sum::<f64>() / k as f64;
    let variance: f64 = offsets
        .iter()
        .map(|s| (s - mean_offset) * (s - mean_offset))
        .sum::<f64>()
        / k as f64;
    let spread = variance.sqrt();

    let weighted: f64 = set
        .confidences
        .iter()
        .zip(&per_candidate)
        .map(|(c, t)| c / conf_sum * t)
        .sum();
    term.value = weighted - cfg.diversity_weight * spread;

    if spread > 1e-9 {
        for i in 0..k {
            let d_spread = (offsets[i] - mean_offset) / (k as f64 * spread);
            for axis in 0..3 {
                term.grad_terminals[i][axis] -=
                    cfg.diversity_weight * d_spread * lateral_axis[axis];
            }
        }
    }
    for i in 0..k {
        term.grad_confidences[i] = (per_candidate[i] - weighted) / conf_sum;
    }
    Ok(term)
}

/// Weighted total of the three components; the decomposition is exact by
/// construction.
pub fn total_loss(set: &PrimitiveSet, ctx: &LossContext) -> Result<LossBreakdown, ObjectiveError> {
    let smooth = smoothness_loss(set, ctx.x0, ctx.horizon)?;
    let safety = safety_loss(set, ctx)?;
    let guidance = guidance_loss(set, ctx.x0, &ctx.goal, ctx.guidance)?;
    let w = ctx.weights;
    let k = set.len();
    let mut grad_terminals = vec![[0.0; 9]; k];
    let mut grad_confidences = vec![0.0; k];
    for i in 0..k {
        for j in 0..9 {
            grad_terminals[i][j] = w.smooth * smooth.grad_terminals[i][j]
                + w.safety * safety.grad_terminals[i][j]
                + w.guidance * guidance.grad_terminals[i][j];
        }
        grad_confidences[i] = w.smooth * smooth.grad_confidences[i]
            + w.safety * safety.grad_confidences[i]
            + w.guidance * guidance.grad_confidences[i];
    }
    Ok(LossBreakdown {
        total: w.smooth * smooth.value + w.safety * safety.value + w.guidance * guidance.value,
        smooth: smooth.value,
        safety: safety.value,
        guidance: guidance.value,
        grad_terminals,
        grad_confidences,
    })
}
