//! Receding-horizon closed-loop simulation with ideal primitive tracking.
//!
//! The loop renders a depth frame at the current pose, plans, then follows
//! the chosen primitive exactly for one replan interval while checking the
//! true world for collisions. Everything is deterministic given the trial
//! seeds; per-step sampler randomness derives from the trial seed and the
//! step index.

use super::{mix_seed, HarnessError};
use crate::camera::{render_depth, BodyPose, CameraExtrinsics, Intrinsics};
use crate::micronet::PolicyNet;
use crate::planner::{plan_step, CandidateSource, PlanResult, PlannerConfig};
use crate::primitives::KinodynamicState;
use crate::shield::ShieldVerdict;
use crate::world::World;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Planner arm under test. The two no-shield variants exist for the
/// ablation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Net,
    NetNoShield,
    Sampler,
    SamplerNoShield,
}

impl Method {
    pub fn shield_enabled(&self) -> bool {
        matches!(self, Method::Net | Method::Sampler)
    }

    pub fn uses_network(&self) -> bool {
        matches!(self, Method::Net | Method::NetNoShield)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::Net => "net",
            Method::NetNoShield => "net_no_shield",
            Method::Sampler => "sampler",
            Method::SamplerNoShield => "sampler_no_shield",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "net" => Some(Method::Net),
            "net_no_shield" => Some(Method::NetNoShield),
            "sampler" => Some(Method::Sampler),
            "sampler_no_shield" => Some(Method::SamplerNoShield),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub world_seed: u64,
    pub trial_seed: u64,
    /// Speed tier; becomes the envelope V_max.
    pub v_max_tier: f64,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub replan_rate: f64,
    pub timeout: f64,
    pub method: Method,
    pub max_range: f64,
    /// Goal-reached radius, meters.
    pub goal_radius: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            world_seed: 0,
            trial_seed: 0,
            v_max_tier: 2.0,
            start: [0.0; 3],
            goal: [0.0; 3],
            replan_rate: 10.0,
            timeout: 60.0,
            method: Method::Sampler,
            max_range: 5.0,
            goal_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Collided,
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Reached => "reached",
            Outcome::Collided => "collided",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Dense executed-profile sample; the true-world signed distance is
/// recorded at simulation time so metric computation needs no world handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutedSample {
    pub time: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
    pub signed_distance: f64,
}

/// One candidate of a planning step as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub terminal: [f64; 9],
    pub confidence: f64,
}

/// One replan step: the pre-plan state and the plan itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
    pub yaw: f64,
    pub chosen_index: Option<usize>,
    pub chosen: Option<crate::primitives::Primitive>,
    pub candidates: Vec<CandidateRecord>,
    pub used_fallback: bool,
    pub elapsed_ms: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub verdicts: Vec<SerializedVerdict>,
    /// Exact squared-jerk integral of the executed portion of this step.
    pub jerk_integral: f64,
}

pub fn candidate_records(set: &crate::primitives::PrimitiveSet) -> Vec<CandidateRecord> {
    set.terminals
        .iter()
        .zip(&set.confidences)
        .map(|(t, &confidence)| CandidateRecord {
            terminal: t.to_array(),
            confidence,
        })
        .collect()
}

/// Log-friendly verdict mirror: `{index, accepted, violation|null}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerializedVerdict {
    pub index: usize,
    pub accepted: bool,
    pub violation: Option<crate::shield::Violation>,
}

pub fn serialize_verdicts(verdicts: &[ShieldVerdict]) -> Vec<SerializedVerdict> {
    verdicts
        .iter()
        .enumerate()
        .map(|(index, v)| SerializedVerdict {
            index,
            accepted: v.accepted,
            violation: v.first_violation,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub steps: Vec<StepRecord>,
    pub samples: Vec<ExecutedSample>,
    pub outcome: Outcome,
    pub duration: f64,
}

/// Internal integration granularity of the executed profile.
const SIM_DT: f64 = 0.01;

/// Camera pan rate while the fallback holds the vehicle, rad/s.
const FALLBACK_YAW_RATE: f64 = 1.6;

/// Maximum yaw error, radians, at which a stuck vehicle may start
/// translating along an accepted escape candidate.
const ALIGNMENT_GATE: f64 = 0.44;

/// How far back along the breadcrumb trail a stalled vehicle retreats,
/// and how fast.
const RETREAT_DISTANCE: f64 = 2.0;
const RETREAT_SPEED: f64 = 0.8;

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    } else if x < -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    }
    x
}

/// Run one closed-loop trial. `net` is required for network methods.
pub fn simulate_trial(
    config: &TrialConfig,
    world: &World,
    planner: &PlannerConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    mut net: Option<&mut PolicyNet>,
) -> Result<TrialLog, HarnessError> {
    let start = Vector3::from(config.start);
    let goal = Vector3::from(config.goal);
    let radius = planner.safety.radius;
    if !world.contains(&start) || !world.contains(&goal) {
        return Err(HarnessError::InfeasibleStartGoal(
            "start or goal outside world bounds".into(),
        ));
    }
    if world.signed_distance(&start) < radius {
        return Err(HarnessError::InfeasibleStartGoal(format!(
            "start clearance {:.3} below radius {radius}",
            world.signed_distance(&start)
        )));
    }
    if world.signed_distance(&goal) < radius {
        return Err(HarnessError::InfeasibleStartGoal(format!(
            "goal clearance {:.3} below radius {radius}",
            world.signed_distance(&goal)
        )));
    }
    if config.method.uses_network() && net.is_none() {
        return Err(HarnessError::MissingNetwork(
            config.method.label().to_string(),
        ));
    }

    let planner = PlannerConfig {
        shield_enabled: config.method.shield_enabled(),
        envelope: crate::shield::PhysicalEnvelope {
            v_max: config.v_max_tier,
            ..planner.envelope
        },
        replan_rate: config.replan_rate,
        ..*planner
    };

    let initial_yaw = {
        let d = goal - start;
        if d.xy().norm() > 1e-9 {
            d.y.atan2(d.x)
        } else {
            0.0
        }
    };
    let mut state = KinodynamicState {
        position: start,
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
        yaw: initial_yaw,
    };

    let mut log = TrialLog {
        config: *config,
        steps: Vec::new(),
        samples: vec![ExecutedSample {
            time: 0.0,
            position: config.start,
            velocity: [0.0; 3],
            acceleration: [0.0; 3],
            signed_distance: world.signed_distance(&start),
        }],
        outcome: Outcome::Timeout,
        duration: 0.0,
    };

    if (start - goal).norm() < config.goal_radius {
        log.outcome = Outcome::Reached;
        return Ok(log);
    }

    let dt = 1.0 / config.replan_rate;
    let mut time = 0.0;
    let mut step_index: u64 = 0;
    let mut fallback_streak: u64 = 0;
    // Breadcrumb trail of executed positions. A vehicle that stalls in a
    // pocket retreats along it: the corridor behind was traversed at
    // clearance >= r, which no forward-looking check of the current frame
    // can promise about any other direction.
    let mut breadcrumbs: Vec<Vector3<f64>> = vec![start];
    let mut stalled_steps: u64 = 0;
    let mut retreat_remaining: f64 = 0.0;

    'outer: while time < config.timeout {
        // Stalled for a full sweep and more: back out along the trail.
        if retreat_remaining <= 0.0 && stalled_steps >= 50 && breadcrumbs.len() > 1 {
            retreat_remaining = RETREAT_DISTANCE;
        }
        if retreat_remaining > 0.0 && breadcrumbs.len() > 1 {
            let old_position = state.position;
            let mut budget = RETREAT_SPEED * dt;
            while budget > 0.0 && breadcrumbs.len() > 1 {
                let target = breadcrumbs[breadcrumbs.len() - 2];
                let gap = (target - state.position).norm();
                if gap <= budget {
                    state.position = target;
                    breadcrumbs.pop();
                    budget -= gap;
                } else {
                    state.position += (target - state.position) * (budget / gap);
                    budget = 0.0;
                }
            }
            let moved = state.position - old_position;
            retreat_remaining -= moved.norm();
            if breadcrumbs.len() == 1 {
                retreat_remaining = 0.0;
            }
            time += dt;
            state.velocity = moved / dt;
            state.acceleration = Vector3::zeros();
            if moved.xy().norm() > 1e-6 {
                state.yaw = moved.y.atan2(moved.x);
            }
            log.steps.push(StepRecord {
                time,
                position: state.position.into(),
                velocity: state.velocity.into(),
                acceleration: [0.0; 3],
                yaw: state.yaw,
                chosen_index: None,
                chosen: None,
                candidates: Vec::new(),
                used_fallback: true,
                elapsed_ms: 0.0,
                accepted: 0,
                rejected: 0,
                verdicts: Vec::new(),
                jerk_integral: 0.0,
            });
            log.samples.push(ExecutedSample {
                time,
                position: state.position.into(),
                velocity: state.velocity.into(),
                acceleration: [0.0; 3],
                signed_distance: world.signed_distance(&state.position),
            });
            log.duration = time;
            if retreat_remaining <= 0.0 {
                stalled_steps = 0;
                fallback_streak = 0;
            }
            step_index += 1;
            continue;
        }

        let pose = BodyPose::from_position_yaw(state.position, state.yaw);
        let image = render_depth(world, &pose, intr, extr, config.max_range);
        let source = if config.method.uses_network() {
            CandidateSource::Network(net.as_deref_mut().expect("checked above"))
        } else {
            CandidateSource::Sampler {
                seed: mix_seed(config.trial_seed, step_index),
            }
        };
        let plan: PlanResult = plan_step(&image, &state, &goal, source, &planner, intr, extr)?;
        let prim = plan.chosen.as_ref().expect("planner always yields a primitive");
        let exec_t = dt.min(prim.duration);

        // Alignment gate: exiting a stuck episode, face the chosen escape
        // direction before translating so the footprint check has seen the
        // flanks of the coming motion. Until aligned, hold and rotate.
        if !plan.used_fallback && fallback_streak > 0 {
            let displacement = prim.eval_unchecked(prim.duration).position
                - prim.eval_unchecked(0.0).position;
            if displacement.xy().norm() > 1e-6 {
                let bearing = displacement.y.atan2(displacement.x);
                let err = wrap_angle(bearing - state.yaw);
                if err.abs() > ALIGNMENT_GATE {
                    let max_step = FALLBACK_YAW_RATE * dt;
                    time += dt;
                    log.steps.push(StepRecord {
                        time,
                        position: state.position.into(),
                        velocity: [0.0; 3],
                        acceleration: [0.0; 3],
                        yaw: state.yaw,
                        chosen_index: plan.chosen_index,
                        chosen: plan.chosen,
                        candidates: candidate_records(&plan.candidates),
                        used_fallback: true,
                        elapsed_ms: plan.elapsed_ms,
                        accepted: plan.verdicts.iter().filter(|v| v.accepted).count(),
                        rejected: plan.verdicts.iter().filter(|v| !v.accepted).count(),
                        verdicts: serialize_verdicts(&plan.verdicts),
                        jerk_integral: 0.0,
                    });
                    log.samples.push(ExecutedSample {
                        time,
                        position: state.position.into(),
                        velocity: [0.0; 3],
                        acceleration: [0.0; 3],
                        signed_distance: world.signed_distance(&state.position),
                    });
                    log.duration = time;
                    state.velocity = Vector3::zeros();
                    state.acceleration = Vector3::zeros();
                    state.yaw += err.clamp(-max_step, max_step);
                    stalled_steps += 1;
                    step_index += 1;
                    continue;
                }
            }
        }

        let mut record = StepRecord {
            time,
            position: state.position.into(),
            velocity: state.velocity.into(),
            acceleration: state.acceleration.into(),
            yaw: state.yaw,
            chosen_index: plan.chosen_index,
            chosen: plan.chosen,
            candidates: candidate_records(&plan.candidates),
            used_fallback: plan.used_fallback,
            elapsed_ms: plan.elapsed_ms,
            accepted: plan.verdicts.iter().filter(|v| v.accepted).count(),
            rejected: plan.verdicts.iter().filter(|v| !v.accepted).count(),
            verdicts: serialize_verdicts(&plan.verdicts),
            jerk_integral: 0.0,
        };

        // Ideal tracking of the executed prefix.
        let substeps = (exec_t / SIM_DT).round().max(1.0) as usize;
        let sub_dt = exec_t / substeps as f64;
        let mut collision = false;
        let mut reached = false;
        let mut executed_until = exec_t;
        for i in 1..=substeps {
            let tau = i as f64 * sub_dt;
            let sample = prim.eval_unchecked(tau);
            let distance = world.signed_distance(&sample.position);
            log.samples.push(ExecutedSample {
                time: time + tau,
                position: sample.position.into(),
                velocity: sample.velocity.into(),
                acceleration: sample.acceleration.into(),
                signed_distance: distance,
            });
            if distance < radius {
                collision = true;
                executed_until = tau;
                break;
            }
            if (sample.position - goal).norm() < config.goal_radius {
                reached = true;
                executed_until = tau;
                break;
            }
        }
        record.jerk_integral = prim.jerk_cost_upto(executed_until);
        log.steps.push(record);
        time += executed_until;
        log.duration = time;

        if collision {
            log.outcome = Outcome::Collided;
            break 'outer;
        }
        if reached {
            log.outcome = Outcome::Reached;
            break 'outer;
        }

        // Advance the state along the primitive. Yaw faces the chosen
        // primitive's mean velocity direction; a fallback step instead pans
        // the camera toward the goal (and keeps scanning once aligned) so a
        // blocked vehicle can discover lateral openings.
        let end = prim.eval_unchecked(executed_until);
        let displacement = prim.eval_unchecked(prim.duration).position
            - prim.eval_unchecked(0.0).position;
        let yaw = if plan.used_fallback {
            let max_step = FALLBACK_YAW_RATE * executed_until.max(1.0 / config.replan_rate);
            if end.velocity.xy().norm() > 0.05 {
                // Still braking: keep the camera on the drift direction so
                // the coming motion stays verified.
                let heading = end.velocity.y.atan2(end.velocity.x);
                let err = wrap_angle(heading - state.yaw);
                state.yaw + err.clamp(-max_step, max_step)
            } else {
                // Stopped and blocked: sweep the camera in widening arcs
                // around the goal bearing until some direction opens up.
                fallback_streak += 1;
                let to_goal = goal - end.position;
                let goal_bearing = if to_goal.xy().norm() > 1e-9 {
                    to_goal.y.atan2(to_goal.x)
                } else {
                    state.yaw
                };
                let arc = 0.35 * ((fallback_streak + 1) / 2) as f64;
                let sign = if fallback_streak % 2 == 0 { -1.0 } else { 1.0 };
                let target = goal_bearing + sign * arc.min(std::f64::consts::PI);
                let err = wrap_angle(target - state.yaw);
                state.yaw + err.clamp(-max_step, max_step)
            }
        } else if displacement.xy().norm() > 1e-6 {
            displacement.y.atan2(displacement.x)
        } else {
            state.yaw
        };
        if !plan.used_fallback {
            fallback_streak = 0;
        }
        let moved = (end.position - state.position).norm();
        if moved >= 0.01 {
            stalled_steps = 0;
        } else {
            stalled_steps += 1;
        }
        if (end.position - *breadcrumbs.last().unwrap()).norm() >= 0.02 {
            breadcrumbs.push(end.position);
        }
        state = KinodynamicState {
            position: end.position,
            velocity: end.velocity,
            acceleration: end.acceleration,
            yaw,
        };
        step_index += 1;
    }

    Ok(log)
}
