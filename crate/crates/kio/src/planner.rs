//! Single-stage planning step: candidate generation (network or sampler),
//! envelope bounding, shield filtering, confidence-argmax selection and a
//! braking fallback when every candidate is rejected.

use crate::camera::{BodyPose, CameraExtrinsics, DepthImage, Intrinsics};
use crate::micronet::{conditioning_vector, terminals_from_output, MicronetError, PolicyNet};
use crate::objectives::GuidanceConfig;
use crate::primitives::{solve_obvp, KinodynamicState, Primitive, PrimitiveSet, TerminalState};
use crate::shield::{filter_primitives, shield_check, PhysicalEnvelope, SafetyParams, ShieldVerdict};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Micronet(#[from] MicronetError),
    #[error(transparent)]
    Primitive(#[from] crate::primitives::PrimitiveError),
}

/// Wall-clock timing is injectable so that benchmark outputs can be made
/// byte-reproducible; the disabled mode reports zero elapsed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingMode {
    Wall,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Candidate count K.
    pub candidates: usize,
    /// Waypoints per shield check M.
    pub waypoints: usize,
    /// Primitive horizon T_f, seconds.
    pub horizon: f64,
    pub envelope: PhysicalEnvelope,
    pub safety: SafetyParams,
    pub guidance: GuidanceConfig,
    /// Replans per second.
    pub replan_rate: f64,
    pub shield_enabled: bool,
    pub timing: TimingMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            candidates: 5,
            waypoints: 20,
            horizon: 1.5,
            envelope: PhysicalEnvelope::default(),
            safety: SafetyParams::default(),
            guidance: GuidanceConfig::default(),
            replan_rate: 10.0,
            shield_enabled: true,
            timing: TimingMode::Disabled,
        }
    }
}

/// Where candidates come from.
pub enum CandidateSource<'a> {
    Network(&'a mut PolicyNet),
    Sampler { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub chosen: Option<Primitive>,
    pub chosen_index: Option<usize>,
    pub candidates: PrimitiveSet,
    /// One verdict per candidate; empty when the shield is disabled.
    pub verdicts: Vec<ShieldVerdict>,
    pub used_fallback: bool,
    pub elapsed_ms: f64,
}

/// Per-candidate guidance score (progress and lateral hinge only); lower
/// is better. Used for sampler ranking and selection tie-breaks.
pub fn candidate_guidance_score(
    terminal: &TerminalState,
    state: &KinodynamicState,
    goal: &Vector3<f64>,
    cfg: &GuidanceConfig,
) -> f64 {
    let to_goal = goal - state.position;
    if to_goal.norm() < 1e-12 {
        return 0.0;
    }
    let g_hat = to_goal.normalize();
    let dp = terminal.position - state.position;
    let progress = dp.dot(&g_hat);
    let lateral = (dp - progress * g_hat).norm();
    let hinge = (lateral - cfg.lateral_tolerance).max(0.0);
    -cfg.progress_weight * progress + cfg.lateral_weight * hinge * hinge
}

/// Seeded network-free candidate source: terminal displacements sampled in
/// a forward cone of the yaw-aligned frame, terminal velocity aligned with
/// the displacement, zero terminal acceleration. Confidences follow the
/// guidance-score ranking, best first.
pub fn sampler_candidates(
    state: &KinodynamicState,
    goal: &Vector3<f64>,
    config: &PlannerConfig,
    seed: u64,
) -> PrimitiveSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.candidates.max(1);
    let rot = state.yaw_rotation();
    let mut set = PrimitiveSet::default();
    // Cap displacement so the quintic cruise speed (magnitude / horizon)
    // stays near the tier; executed maxima then hold the 1.25 * V_max
    // slack the harness asserts.
    let magnitude_max = config
        .envelope
        .p_max
        .min(1.1 * config.envelope.v_max * config.horizon);
    for _ in 0..k {
        let azimuth = rng.random_range(-60.0f64.to_radians()..60.0f64.to_radians());
        let elevation = rng.random_range(-25.0f64.to_radians()..25.0f64.to_radians());
        let magnitude = rng.random_range(0.5..magnitude_max.max(0.6));
        let dir_body = Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        let dir_world = rot * dir_body;
        let speed = (magnitude / config.horizon).min(0.9 * config.envelope.v_max);
        set.terminals.push(TerminalState {
            position: state.position + magnitude * dir_world,
            velocity: speed * dir_world,
            acceleration: Vector3::zeros(),
        });
        set.confidences.push(0.0);
    }
    // Rank by guidance score, best (lowest) first; confidence encodes the
    // rank so that argmax selection picks the best-ranked candidate.
    let mut order: Vec<usize> = (0..k).collect();
    let scores: Vec<f64> = set
        .terminals
        .iter()
        .map(|t| candidate_guidance_score(t, state, goal, &config.guidance))
        .collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    for (rank, &index) in order.iter().enumerate() {
        set.confidences[index] = (k - rank) as f64 / (k + 1) as f64;
    }
    set
}

/// Braking fallback: a quintic from the current state to a stop. The
/// braking primitive is itself shield-checked; failing that, its
/// displacement is halved up to four times, and a zero-displacement stop
/// is returned as the last resort.
#[allow(clippy::too_many_arguments)]
pub fn fallback_stop(
    state: &KinodynamicState,
    config: &PlannerConfig,
    image: &DepthImage,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
) -> Primitive {
    let t_brake = (state.velocity.norm() / config.envelope.a_max).max(0.3);
    // Essentially stationary: hold the position exactly. Executing braking
    // polynomials from millimeter-scale velocities would keep nudging the
    // vehicle blindly while it scans for an opening.
    if state.velocity.norm() < 0.05 {
        let mut hold = Primitive::zero(t_brake);
        for axis in 0..3 {
            hold.coefficients[axis][0] = state.position[axis];
        }
        hold.initial_yaw = state.yaw;
        return hold;
    }
    let mut displacement = state.velocity * (t_brake / 2.0);
    for _ in 0..5 {
        let terminal = TerminalState {
            position: state.position + displacement,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        };
        let prim = solve_obvp(state, &terminal, t_brake).expect("positive braking horizon");
        if !config.shield_enabled {
            return prim;
        }
        let verdict = shield_check(&prim, image, pose, intr, extr, &config.safety, config.waypoints);
        if verdict.accepted {
            return prim;
        }
        displacement *= 0.5;
    }
    let hold = TerminalState {
        position: state.position,
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
    };
    solve_obvp(state, &hold, t_brake).expect("positive braking horizon")
}

/// One full planning step against the current frame.
pub fn plan_step(
    image: &DepthImage,
    state: &KinodynamicState,
    goal: &Vector3<f64>,
    source: CandidateSource,
    config: &PlannerConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
) -> Result<PlanResult, PlanError> {
    let start = std::time::Instant::now();
    let pose = BodyPose::from_position_yaw(state.position, state.yaw);

    let candidates = match source {
        CandidateSource::Sampler { seed } => sampler_candidates(state, goal, config, seed),
        CandidateSource::Network(net) => {
            let cond = conditioning_vector(state, goal);
            let output = net.forward(image, &cond)?;
            terminals_from_output(&output, state, &config.envelope)
        }
    };

    let (survivors, verdicts, survivor_indices) = if config.shield_enabled {
        let (survivors, verdicts) = filter_primitives(
            &candidates,
            state,
            config.horizon,
            image,
            &pose,
            intr,
            extr,
            &config.safety,
            config.waypoints,
        );
        let indices: Vec<usize> = verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.accepted)
            .map(|(i, _)| i)
            .collect();
        (survivors, verdicts, indices)
    } else {
        (
            candidates.clone(),
            Vec::new(),
            (0..candidates.len()).collect(),
        )
    };

    let result = if survivors.is_empty() {
        let prim = fallback_stop(state, config, image, &pose, intr, extr);
        PlanResult {
            chosen: Some(prim),
            chosen_index: None,
            candidates,
            verdicts,
            used_fallback: true,
            elapsed_ms: 0.0,
        }
    } else {
        // Argmax confidence; ties break to the lower guidance score, then
        // the lower index.
        let mut best = 0usize;
        for i in 1..survivors.len() {
            let (ci, cb) = (survivors.confidences[i], survivors.confidences[best]);
            if ci > cb {
                best = i;
            } else if ci == cb {
                let si = candidate_guidance_score(
                    &survivors.terminals[i],
                    state,
                    goal,
                    &config.guidance,
                );
                let sb = candidate_guidance_score(
                    &survivors.terminals[best],
                    state,
                    goal,
                    &config.guidance,
                );
                if si < sb {
                    best = i;
                }
            }
        }
        let chosen_terminal = survivors.terminals[best];
        let prim = solve_obvp(state, &chosen_terminal, config.horizon)?;
        PlanResult {
            chosen: Some(prim),
            chosen_index: Some(survivor_indices[best]),
            candidates,
            verdicts,
            used_fallback: false,
            elapsed_ms: 0.0,
        }
    };

    let elapsed_ms = match config.timing {
        TimingMode::Wall => start.elapsed().as_secs_f64() * 1e3,
        TimingMode::Disabled => 0.0,
    };
    Ok(PlanResult {
        elapsed_ms,
        ..result
    })
}
