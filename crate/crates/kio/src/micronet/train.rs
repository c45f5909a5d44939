//! Training glue: forward through the net, map raw outputs to bounded
//! terminal states, evaluate the unsupervised objective and push its
//! gradients back through the envelope activation into the network.

use super::optim::Adam;
use super::policy::{PolicyNet, PolicyOutput, STATE_DIM};
use super::MicronetError;
use crate::camera::{BodyPose, CameraExtrinsics, DepthImage, Intrinsics};
use crate::objectives::{
    total_loss, GuidanceConfig, LossBreakdown, LossContext, LossWeights,
};
use crate::primitives::{KinodynamicState, PrimitiveSet, TerminalState};
use crate::shield::{bound_activation, bound_activation_jacobian, PhysicalEnvelope, SafetyParams};
use nalgebra::Vector3;

/// Everything fixed across training steps.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup {
    pub envelope: PhysicalEnvelope,
    pub safety: SafetyParams,
    pub weights: LossWeights,
    pub guidance: GuidanceConfig,
    pub intrinsics: Intrinsics,
    pub extrinsics: CameraExtrinsics,
    pub horizon: f64,
    pub waypoints: usize,
}

/// One training sample: a rendered frame with the pose it was rendered
/// from and the goal used for guidance.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub image: DepthImage,
    pub state: KinodynamicState,
    pub goal: Vector3<f64>,
}

/// Conditioning vector fed beside the image: body-frame velocity and
/// acceleration plus the unit goal direction in the body frame.
pub fn conditioning_vector(state: &KinodynamicState, goal: &Vector3<f64>) -> [f64; STATE_DIM] {
    let rot = state.yaw_rotation();
    let v = rot.transpose() * state.velocity;
    let a = rot.transpose() * state.acceleration;
    let to_goal = goal - state.position;
    let dir = if to_goal.norm() > 1e-9 {
        rot.transpose() * to_goal.normalize()
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    [v.x, v.y, v.z, a.x, a.y, a.z, dir.x, dir.y, dir.z]
}

/// Map raw head outputs to world-frame terminal states: tanh envelope
/// bounding, then the yaw-aligned displacement is applied to the current
/// position.
pub fn terminals_from_output(
    output: &PolicyOutput,
    state: &KinodynamicState,
    envelope: &PhysicalEnvelope,
) -> PrimitiveSet {
    let rot = state.yaw_rotation();
    let mut set = PrimitiveSet::default();
    for (h, &confidence) in output.h_kin.iter().zip(&output.confidences) {
        let bounded = bound_activation(h, envelope);
        let dp = rot * Vector3::new(bounded[0], bounded[1], bounded[2]);
        let vt = rot * Vector3::new(bounded[3], bounded[4], bounded[5]);
        let at = rot * Vector3::new(bounded[6], bounded[7], bounded[8]);
        set.terminals.push(TerminalState {
            position: state.position + dp,
            velocity: vt,
            acceleration: at,
        });
        set.confidences.push(confidence);
    }
    set
}

/// Pull world-frame terminal gradients back to raw head outputs: transpose
/// the yaw rotation, then scale by the tanh envelope Jacobian.
pub fn chain_to_raw(
    grad_terminal: &[f64; 9],
    h_kin: &[f64; 9],
    state: &KinodynamicState,
    envelope: &PhysicalEnvelope,
) -> [f64; 9] {
    let rot_t = state.yaw_rotation().transpose();
    let gp = rot_t * Vector3::new(grad_terminal[0], grad_terminal[1], grad_terminal[2]);
    let gv = rot_t * Vector3::new(grad_terminal[3], grad_terminal[4], grad_terminal[5]);
    let ga = rot_t * Vector3::new(grad_terminal[6], grad_terminal[7], grad_terminal[8]);
    let body = [gp.x, gp.y, gp.z, gv.x, gv.y, gv.z, ga.x, ga.y, ga.z];
    let jac = bound_activation_jacobian(h_kin, envelope);
    std::array::from_fn(|i| body[i] * jac[i])
}

/// Loss of one frame plus the raw-output gradients, without touching the
/// network parameters. Shared by training and the end-to-end grad check.
pub fn frame_loss(
    output: &PolicyOutput,
    frame: &TrainFrame,
    setup: &TrainSetup,
) -> Result<(LossBreakdown, Vec<[f64; 9]>, Vec<f64>), MicronetError> {
    let set = terminals_from_output(output, &frame.state, &setup.envelope);
    let pose = BodyPose::from_position_yaw(frame.state.position, frame.state.yaw);
    let ctx = LossContext {
        x0: &frame.state,
        horizon: setup.horizon,
        waypoints: setup.waypoints,
        image: &frame.image,
        pose: &pose,
        intrinsics: &setup.intrinsics,
        extrinsics: &setup.extrinsics,
        safety: &setup.safety,
        goal: frame.goal,
        guidance: &setup.guidance,
        weights: &setup.weights,
    };
    let breakdown = total_loss(&set, &ctx)?;
    let grad_raw: Vec<[f64; 9]> = breakdown
        .grad_terminals
        .iter()
        .zip(&output.h_kin)
        .map(|(g, h)| chain_to_raw(g, h, &frame.state, &setup.envelope))
        .collect();
    let grad_conf = breakdown.grad_confidences.clone();
    Ok((breakdown, grad_raw, grad_conf))
}

/// One optimizer step over a batch. Returns the mean pre-update loss.
pub fn train_step(
    frames: &[TrainFrame],
    net: &mut PolicyNet,
    adam: &mut Adam,
    setup: &TrainSetup,
) -> Result<LossBreakdown, MicronetError> {
    if frames.is_empty() {
        return Err(MicronetError::EmptyBatch);
    }
    net.zero_grad();
    let scale = 1.0 / frames.len() as f64;
    let mut mean = LossBreakdown {
        total: 0.0,
        smooth: 0.0,
        safety: 0.0,
        guidance: 0.0,
        grad_terminals: Vec::new(),
        grad_confidences: Vec::new(),
    };
    for frame in frames {
        let cond = conditioning_vector(&frame.state, &frame.goal);
        let output = net.forward(&frame.image, &cond)?;
        let (breakdown, grad_raw, grad_conf) = frame_loss(&output, frame, setup)?;
        if !breakdown.total.is_finite() {
            return Err(MicronetError::NonFiniteLoss(format!(
                "total={} smooth={} safety={} guidance={}",
                breakdown.total, breakdown.smooth, breakdown.safety, breakdown.guidance
            )));
        }
        let grad_raw: Vec<[f64; 9]> = grad_raw
            .iter()
            .map(|g| std::array::from_fn(|i| g[i] * scale))
            .collect();
        let grad_conf: Vec<f64> = grad_conf.iter().map(|g| g * scale).collect();
        net.backward(&grad_raw, &grad_conf);
        mean.total += breakdown.total * scale;
        mean.smooth += breakdown.smooth * scale;
        mean.safety += breakdown.safety * scale;
        mean.guidance += breakdown.guidance * scale;
    }
    let mut params = net.parameters_mut();
    adam.step(&mut params);
    Ok(mean)
}
