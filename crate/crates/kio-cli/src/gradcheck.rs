//! Central-difference validation of every analytic gradient in the
//! library, printed as one line per check.

use anyhow::{bail, Result};
use kio::camera::{CameraExtrinsics, DepthImage, Intrinsics};
use kio::micronet::{
    conditioning_vector, frame_loss, CbamBlock, PolicyConfig, PolicyNet, TrainFrame, TrainSetup,
};
use kio::objectives::{
    guidance_loss, safety_loss, smoothness_loss, GuidanceConfig, LossContext, LossWeights,
};
use kio::planner::PlannerConfig;
use kio::primitives::{KinodynamicState, PrimitiveSet, TerminalState};
use kio::shield::{bound_activation, bound_activation_jacobian, OovPolicy, PhysicalEnvelope, SafetyParams};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    max_rel: f64,
    tolerance: f64,
}

impl Check {
    fn ok(&self) -> bool {
        self.max_rel < self.tolerance
    }
}

pub fn run() -> Result<()> {
    let checks = vec![
        envelope_mapping(),
        smoothness(),
        safety(),
        guidance(),
        channel_attention(),
        spatial_attention(),
        cbam_composition(),
        full_graph(),
    ];
    let mut failures = 0;
    for check in &checks {
        println!(
            "gradcheck {:<20} max rel err {:>10.3e}  (tol {:.0e})  [{}]",
            check.name,
            check.max_rel,
            check.tolerance,
            if check.ok() { "ok" } else { "FAIL" }
        );
        if !check.ok() {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} gradient checks failed");
    }
    Ok(())
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn envelope_mapping() -> Check {
    let envelope = PhysicalEnvelope::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_rel: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..50 {
        let base: [f64; 9] = std::array::from_fn(|_| rng.random_range(-2.5..2.5));
        let jac = bound_activation_jacobian(&base, &envelope);
        for i in 0..9 {
            let mut plus = base;
            let mut minus = base;
            plus[i] += h;
            minus[i] -= h;
            let fd = (bound_activation(&plus, &envelope)[i]
                - bound_activation(&minus, &envelope)[i])
                / (2.0 * h);
            max_rel = max_rel.max(rel(jac[i], fd, 1e-9));
        }
    }
    Check {
        name: "tanh-envelope",
        max_rel,
        tolerance: 1e-6,
    }
}

fn random_set(rng: &mut ChaCha8Rng, k: usize) -> PrimitiveSet {
    PrimitiveSet {
        terminals: (0..k)
            .map(|_| TerminalState {
                position: Vector3::new(
                    rng.random_range(0.5..3.5),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                ),
                velocity: Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                ),
                acceleration: Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
            })
            .collect(),
        confidences: (0..k).map(|_| rng.random_range(0.05..0.95)).collect(),
    }
}

fn perturbed(set: &PrimitiveSet, candidate: usize, component: usize, delta: f64) -> PrimitiveSet {
    let mut out = set.clone();
    let mut arr = out.terminals[candidate].to_array();
    arr[component] += delta;
    out.terminals[candidate] = TerminalState::from_array(arr);
    out
}

fn smoothness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = KinodynamicState::rest_at(Vector3::zeros());
    let mut max_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..10 {
        let set = random_set(&mut rng, 4);
        let term = smoothness_loss(&set, &x0, 1.5).unwrap();
        for i in 0..set.len() {
            for j in 0..9 {
                let fd = (smoothness_loss(&perturbed(&set, i, j, h), &x0, 1.5).unwrap().value
                    - smoothness_loss(&perturbed(&set, i, j, -h), &x0, 1.5).unwrap().value)
                    / (2.0 * h);
                max_rel = max_rel.max(rel(term.grad_terminals[i][j], fd, 1.0));
            }
        }
    }
    Check {
        name: "smoothness-loss",
        max_rel,
        tolerance: 1e-5,
    }
}

fn smooth_image() -> DepthImage {
    let mut image = DepthImage::constant(96, 72, 5.0, 5.0);
    for v in 0..image.height {
        for u in 0..image.width {
            let d = 3.0 + 1.5 * ((u as f64 / 9.0).sin() * (v as f64 / 7.0).cos());
            image.set(u, v, d.clamp(0.5, 5.0));
        }
    }
    image
}

fn safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = smooth_image();
    let x0 = KinodynamicState::rest_at(Vector3::zeros());
    let pose = kio::camera::BodyPose::identity();
    let intr = Intrinsics::default();
    let extr = CameraExtrinsics::default();
    let safety_params = SafetyParams {
        oov_policy: OovPolicy::Permissive,
        ..SafetyParams::default()
    };
    let guidance_cfg = GuidanceConfig::default();
    let weights = LossWeights::default();
    let ctx = LossContext {
        x0: &x0,
        horizon: 1.5,
        waypoints: 20,
        image: &image,
        pose: &pose,
        intrinsics: &intr,
        extrinsics: &extr,
        safety: &safety_params,
        goal: Vector3::new(8.0, 0.0, 0.0),
        guidance: &guidance_cfg,
        weights: &weights,
    };
    let mut max_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..6 {
        let set = random_set(&mut rng, 3);
        let term = safety_loss(&set, &ctx).unwrap();
        for i in 0..set.len() {
            if near_pixel_kink(&set, i, &ctx) {
                continue;
            }
            for j in 0..9 {
                let fd = (safety_loss(&perturbed(&set, i, j, h), &ctx).unwrap().value
                    - safety_loss(&perturbed(&set, i, j, -h), &ctx).unwrap().value)
                    / (2.0 * h);
                max_rel = max_rel.max(rel(term.grad_terminals[i][j], fd, 1e-3));
            }
        }
    }
    Check {
        name: "safety-loss",
        max_rel,
        tolerance: 1e-4,
    }
}

fn near_pixel_kink(set: &PrimitiveSet, index: usize, ctx: &LossContext) -> bool {
    let prim =
        kio::primitives::solve_obvp(ctx.x0, &set.terminals[index], ctx.horizon).unwrap();
    let m = ctx.waypoints.max(2);
    let step = ctx.horizon / (m - 1) as f64;
    for wp in 0..m {
        let time = (wp as f64 * step).min(ctx.horizon);
        let point = prim.eval(time).unwrap().position;
        let p_c = kio::camera::world_to_camera(&point, ctx.pose, ctx.extrinsics);
        if (p_c.z - kio::camera::Z_NEAR).abs() < 1e-3 {
            return true;
        }
        if p_c.z <= kio::camera::Z_NEAR {
            continue;
        }
        let u = ctx.intrinsics.fx * p_c.x / p_c.z + ctx.intrinsics.cx;
        let v = ctx.intrinsics.fy * p_c.y / p_c.z + ctx.intrinsics.cy;
        if u.abs() < 0.01
            || (u - ctx.intrinsics.width as f64).abs() < 0.01
            || v.abs() < 0.01
            || (v - ctx.intrinsics.height as f64).abs() < 0.01
            || u.fract().min(1.0 - u.fract()) < 2e-3
            || v.fract().min(1.0 - v.fract()) < 2e-3
        {
            return true;
        }
    }
    false
}

fn guidance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = GuidanceConfig::default();
    let x0 = KinodynamicState::rest_at(Vector3::zeros());
    let goal = Vector3::new(7.0, 2.0, 0.5);
    let mut max_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..10 {
        let set = random_set(&mut rng, 4);
        let term = guidance_loss(&set, &x0, &goal, &cfg).unwrap();
        let g_hat = (goal - x0.position).normalize();
        for i in 0..set.len() {
            let dp = set.terminals[i].position - x0.position;
            let lateral = (dp - dp.dot(&g_hat) * g_hat).norm();
            if (lateral - cfg.lateral_tolerance).abs() < 1e-3 {
                continue;
            }
            for j in 0..9 {
                let fd = (guidance_loss(&perturbed(&set, i, j, h), &x0, &goal, &cfg)
                    .unwrap()
                    .value
                    - guidance_loss(&perturbed(&set, i, j, -h), &x0, &goal, &cfg)
                        .unwrap()
                        .value)
                    / (2.0 * h);
                max_rel = max_rel.max(rel(term.grad_terminals[i][j], fd, 1e-2));
            }
        }
    }
    Check {
        name: "guidance-loss",
        max_rel,
        tolerance: 1e-5,
    }
}

fn attention_check(
    name: &'static str,
    mut forward: impl FnMut(&[f64]) -> Vec<f64>,
    mut backward_input_grad: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
    input_len: usize,
    out_len: usize,
    seed: u64,
) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input: Vec<f64> = (0..input_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pick: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = backward_input_grad(&input, &pick);
    let loss = |x: &[f64], forward: &mut dyn FnMut(&[f64]) -> Vec<f64>| -> f64 {
        forward(x).iter().zip(&pick).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for i in (0..input_len).step_by((input_len / 40).max(1)) {
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (loss(&plus, &mut forward) - loss(&minus, &mut forward)) / (2.0 * h);
        max_rel = max_rel.max(rel(grad[i], fd, 1e-4));
    }
    Check {
        name,
        max_rel,
        tolerance: 1e-4,
    }
}

fn fresh_block(seed: u64, channels: usize, ratio: usize) -> CbamBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CbamBlock::new(channels, ratio, &mut rng)
}

fn channel_attention() -> Check {
    let shape = (4usize, 6usize, 6usize);
    let mut fwd = fresh_block(5, 4, 2);
    let mut bwd = fresh_block(5, 4, 2);
    attention_check(
        "channel-attention",
        move |x: &[f64]| fwd.channel.forward(x, shape),
        move |x: &[f64], pick: &[f64]| {
            let _ = bwd.channel.forward(x, shape);
            bwd.channel.backward(pick)
        },
        4 * 6 * 6,
        4,
        50,
    )
}

fn spatial_attention() -> Check {
    let shape = (3usize, 6usize, 5usize);
    let mut fwd = fresh_block(6, 3, 1);
    let mut bwd = fresh_block(6, 3, 1);
    attention_check(
        "spatial-attention",
        move |x: &[f64]| fwd.spatial.forward(x, shape),
        move |x: &[f64], pick: &[f64]| {
            let _ = bwd.spatial.forward(x, shape);
            bwd.spatial.backward(pick)
        },
        3 * 6 * 5,
        6 * 5,
        60,
    )
}

fn cbam_composition() -> Check {
    let shape = (4usize, 6usize, 6usize);
    let mut fwd = fresh_block(7, 4, 2);
    let mut bwd = fresh_block(7, 4, 2);
    attention_check(
        "cbam-composition",
        move |x: &[f64]| fwd.forward(x, shape),
        move |x: &[f64], pick: &[f64]| {
            let _ = bwd.forward(x, shape);
            bwd.backward(pick)
        },
        4 * 6 * 6,
        4 * 6 * 6,
        70,
    )
}

fn full_graph() -> Check {
    let config = PolicyConfig {
        input_width: 24,
        input_height: 16,
        candidates: 3,
        widths: [4, 8, 8],
        reduction: 4,
        state_hidden: 8,
        head_hidden: 16,
    };
    let setup = TrainSetup {
        envelope: PhysicalEnvelope::default(),
        safety: SafetyParams {
            oov_policy: OovPolicy::Permissive,
            ..SafetyParams::default()
        },
        weights: LossWeights::default(),
        guidance: GuidanceConfig::default(),
        intrinsics: Intrinsics::default_for(24, 16, 87.0),
        extrinsics: CameraExtrinsics::default(),
        horizon: 1.5,
        waypoints: 10,
    };
    let planner = PlannerConfig::default();
    let _ = planner;
    let mut net = PolicyNet::new(config, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut image = DepthImage::constant(24, 16, 5.0, 5.0);
    for v in image.values.iter_mut() {
        *v = rng.random_range(1.0..5.0);
    }
    let frame = TrainFrame {
        image,
        state: KinodynamicState {
            position: Vector3::new(0.2, -0.1, 1.5),
            velocity: Vector3::new(0.5, 0.1, 0.0),
            acceleration: Vector3::zeros(),
            yaw: 0.3,
        },
        goal: Vector3::new(6.0, 1.0, 1.5),
    };

    let objective = |net: &mut PolicyNet| -> f64 {
        let cond = conditioning_vector(&frame.state, &frame.goal);
        let output = net.forward(&frame.image, &cond).unwrap();
        let (breakdown, _, _) = frame_loss(&output, &frame, &setup).unwrap();
        breakdown.total
    };

    net.zero_grad();
    let cond = conditioning_vector(&frame.state, &frame.goal);
    let output = net.forward(&frame.image, &cond).unwrap();
    let (_, grad_raw, grad_conf) = frame_loss(&output, &frame, &setup).unwrap();
    net.backward(&grad_raw, &grad_conf);

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for (name, index) in [
        ("stem.weight", 1),
        ("block1.conv2.weight", 23),
        ("block2.sa.weight", 48),
        ("block3.ca.w0", 9),
        ("state_fc.weight", 31),
        ("head1.weight", 203),
        ("head2.weight", 88),
    ] {
        let analytic = {
            let params = net.parameters_mut();
            let (_, t) = params.into_iter().find(|(n, _)| n == name).unwrap();
            t.grad.as_ref().unwrap()[index]
        };
        let orig = {
            let params = net.parameters_mut();
            let (_, t) = params.into_iter().find(|(n, _)| n == name).unwrap();
            let o = t.values[index];
            t.values[index] = o + h;
            o
        };
        let up = objective(&mut net);
        {
            let params = net.parameters_mut();
            let (_, t) = params.into_iter().find(|(n, _)| n == name).unwrap();
            t.values[index] = orig - h;
        }
        let down = objective(&mut net);
        {
            let params = net.parameters_mut();
            let (_, t) = params.into_iter().find(|(n, _)| n == name).unwrap();
            t.values[index] = orig;
        }
        let fd = (up - down) / (2.0 * h);
        max_rel = max_rel.max(rel(analytic, fd, 1e-5));
    }
    Check {
        name: "full-graph",
        max_rel,
        tolerance: 1e-3,
    }
}
