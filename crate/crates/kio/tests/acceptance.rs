//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any failure fails the build either way.

mod common;

use common::{jerk_integral_quadrature, quintic_coefficients_by_lu, random_state, random_terminal, rng};
use kio::camera::{
    back_project, project, render_depth, BodyPose, CameraExtrinsics, DepthImage, Intrinsics,
};
use kio::harness::{generate_dataset, run_benchmark, BenchConfig, DatasetConfig, Method, Outcome};
use kio::micronet::{
    conditioning_vector, deserialize_checkpoint, frame_loss, serialize_checkpoint, train_step,
    Adam, AdamConfig, CbamBlock, PolicyConfig, PolicyNet, TrainSetup,
};
use kio::objectives::{
    guidance_loss, safety_loss, smoothness_loss, GuidanceConfig, LossContext, LossWeights,
};
use kio::planner::PlannerConfig;
use kio::primitives::{
    axis_boundary, solve_obvp, JerkPenaltyMatrix, KinodynamicState, PrimitiveSet, TerminalState,
};
use kio::shield::{
    bound_activation, bound_activation_jacobian, shield_check, OovPolicy, PhysicalEnvelope,
    SafetyParams, Z_SHIELD_MIN,
};
use kio::world::{generate_world, Wall, World, WorldGenConfig};
use nalgebra::Vector3;
use rand::Rng;
use std::time::Instant;

fn pass(criterion: usize, message: &str) {
    println!("[PASS] criterion {criterion}: {message}");
}

fn assert_runtime(criterion: usize, start: Instant, limit_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_s,
        "criterion {criterion} exceeded its runtime budget: {elapsed:.1}s >= {limit_s}s"
    );
}

#[test]
fn criterion_01_obvp_exactness() {
    let start = Instant::now();
    let mut r = rng(1001);
    for _ in 0..1000 {
        let x0 = random_state(&mut r);
        let xt = random_terminal(&mut r);
        let t_f = r.random_range(0.3..4.0);
        let prim = solve_obvp(&x0, &xt, t_f).unwrap();
        let (b0, bt) = prim.boundary_states();
        assert!((b0.position - x0.position).norm() < 1e-9);
        assert!((b0.velocity - x0.velocity).norm() < 1e-9);
        assert!((b0.acceleration - x0.acceleration).norm() < 1e-9);
        assert!((bt.position - xt.position).norm() < 1e-9);
        assert!((bt.velocity - xt.velocity).norm() < 1e-9);
        assert!((bt.acceleration - xt.acceleration).norm() < 1e-9);
        // Closed form agrees with the 6x6 linear-solve oracle.
        for axis in 0..3 {
            let oracle = quintic_coefficients_by_lu(&axis_boundary(&x0, &xt, axis), t_f);
            for i in 0..6 {
                let got = prim.coefficients[axis][i];
                assert!((got - oracle[i]).abs() <= 1e-9 * (1.0 + oracle[i].abs()));
            }
        }
    }

    let x0 = KinodynamicState::rest_at(Vector3::zeros());
    let xt = TerminalState::rest_at(Vector3::new(1.0, 0.0, 0.0));
    let prim = solve_obvp(&x0, &xt, 1.0).unwrap();
    let expected = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
    for (got, want) in prim.coefficients[0].iter().zip(expected) {
        assert!((got - want).abs() < 1e-9);
    }
    assert!((prim.jerk_cost() - 720.0).abs() < 1e-9);
    let quad = jerk_integral_quadrature(&prim, 10_000);
    assert!((quad - 720.0).abs() < 1e-6);

    assert_runtime(1, start, 5.0);
    pass(1, "quintic boundary recovery within 1e-9 over 1000 problems; unit case exact");
}

#[test]
fn criterion_02_jerk_quadratic_form() {
    let start = Instant::now();
    let mut r = rng(1002);
    for _ in 0..1000 {
        let x0 = random_state(&mut r);
        let xt = random_terminal(&mut r);
        let t_f = r.random_range(0.4..3.0);
        let prim = solve_obvp(&x0, &xt, t_f).unwrap();
        let penalty = JerkPenaltyMatrix::new(t_f).unwrap();
        let quad: f64 = (0..3)
            .map(|axis| penalty.quadratic_form(&axis_boundary(&x0, &xt, axis)))
            .sum();
        let reference = jerk_integral_quadrature(&prim, 128);
        let scale = reference.abs().max(1e-9);
        assert!(
            (quad - reference).abs() / scale < 1e-6,
            "quadratic form {quad} vs quadrature {reference}"
        );
    }

    // Rest-to-rest time scaling: cost = 720 |dp|^2 / T^5.
    let x0 = KinodynamicState::rest_at(Vector3::zeros());
    let xt = TerminalState::rest_at(Vector3::new(1.0, 0.0, 0.0));
    for t_f in [0.5, 2.0, 4.0] {
        let prim = solve_obvp(&x0, &xt, t_f).unwrap();
        let expected = 720.0 / t_f.powi(5);
        assert!((prim.jerk_cost() - expected).abs() / expected < 1e-6);
        let quad = jerk_integral_quadrature(&prim, 10_000);
        assert!((quad - expected).abs() / expected < 1e-6);
    }

    assert_runtime(2, start, 10.0);
    pass(2, "jerk quadratic form matches quadrature within 1e-6 and obeys 1/T^5 scaling");
}

#[test]
fn criterion_03_projection() {
    let start = Instant::now();
    let intr = Intrinsics::default();
    let extr = CameraExtrinsics::default();
    let mut r = rng(1003);
    for _ in 0..1000 {
        let pose = BodyPose::from_position_yaw(
            Vector3::new(
                r.random_range(-20.0..20.0),
                r.random_range(-20.0..20.0),
                r.random_range(-20.0..20.0),
            ),
            r.random_range(-3.1..3.1),
        );
        let u = r.random_range(0.0..intr.width as f64 - 1e-9);
        let v = r.random_range(0.0..intr.height as f64 - 1e-9);
        let depth = r.random_range(0.15..5.0);
        let world_point = back_project(u, v, depth, &pose, &intr, &extr);
        let (u2, v2, z2) = project(&world_point, &pose, &intr, &extr).expect("in frustum");
        let reconstructed = back_project(u2, v2, z2, &pose, &intr, &extr);
        assert!((reconstructed - world_point).norm() < 1e-9);
    }

    // Frontal wall two meters ahead reads exactly 2.0 at the center pixel.
    let world = World {
        seed: 0,
        extent: [100.0, 100.0, 16.0],
        walls: vec![Wall {
            center: [52.5, 50.0, 8.0],
            half_extents: [0.5, 40.0, 8.0],
        }],
    };
    let pose = BodyPose::from_position_yaw(Vector3::new(50.0, 50.0, 8.0), 0.0);
    let image = render_depth(&world, &pose, &intr, &extr, 5.0);
    let center = image.at(intr.cx as usize, intr.cy as usize);
    assert!((center - 2.0).abs() < 1e-6, "center depth {center}");

    assert_runtime(3, start, 10.0);
    pass(3, "projection round trip below 1e-9 m; frontal wall center depth exact");
}

#[test]
fn criterion_04_shield_soundness() {
    let start = Instant::now();
    let intr = Intrinsics::default();
    let extr = CameraExtrinsics::default();
    let safety = SafetyParams::default();
    let margin = safety.margin();
    let m = 20;
    let mut r = rng(1004);
    let mut accepted_count = 0usize;
    let mut rejected_count = 0usize;

    for case in 0..400 {
        // Random small scene around the origin.
        let wall_count = r.random_range(1..6);
        let mut world = World::empty([40.0, 40.0, 16.0], case);
        for _ in 0..wall_count {
            world.walls.push(Wall {
                center: [
                    r.random_range(12.0..28.0),
                    r.random_range(12.0..28.0),
                    8.0,
                ],
                half_extents: [
                    r.random_range(0.2..1.5),
                    r.random_range(0.2..3.0),
                    8.0,
                ],
            });
        }
        let position = Vector3::new(r.random_range(14.0..26.0), r.random_range(14.0..26.0), 8.0);
        if world.signed_distance(&position) < 0.4 {
            continue;
        }
        let yaw = r.random_range(-3.1..3.1);
        let pose = BodyPose::from_position_yaw(position, yaw);
        let image = render_depth(&world, &pose, &intr, &extr, 5.0);

        let x0 = KinodynamicState {
            position,
            velocity: Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.0),
            acceleration: Vector3::zeros(),
            yaw,
        };
        let (s, c) = yaw.sin_cos();
        let azimuth: f64 = r.random_range(-0.9..0.9);
        let dist = r.random_range(0.8..4.0);
        let dir = Vector3::new(
            c * azimuth.cos() - s * azimuth.sin(),
            s * azimuth.cos() + c * azimuth.sin(),
            r.random_range(-0.3..0.3),
        );
        let terminal = TerminalState {
            position: position + dist * dir.normalize(),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        };
        let prim = solve_obvp(&x0, &terminal, 1.5).unwrap();
        let verdict = shield_check(&prim, &image, &pose, &intr, &extr, &safety, m);

        if verdict.accepted {
            accepted_count += 1;
            // Independent re-check of the depth-margin inequality at every
            // waypoint, straight from the definitions.
            for point in prim.sample_waypoints(m).unwrap() {
                let p_c = extr.rotation.transpose()
                    * (pose.rotation.transpose() * (point - pose.translation)
                        - extr.translation);
                if p_c.z <= Z_SHIELD_MIN {
                    continue;
                }
                let u = intr.fx * p_c.x / p_c.z + intr.cx;
                let v = intr.fy * p_c.y / p_c.z + intr.cy;
                assert!(
                    u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64,
                    "accepted primitive has an out-of-view waypoint"
                );
                let ui = u.round().clamp(0.0, intr.width as f64 - 1.0) as usize;
                let vi = v.round().clamp(0.0, intr.height as f64 - 1.0) as usize;
                let d_obs = image.at(ui, vi);
                assert!(
                    p_c.z <= d_obs - margin + 1e-12,
                    "accepted waypoint violates the depth margin: z={} d={}",
                    p_c.z,
                    d_obs
                );
            }
        } else {
            rejected_count += 1;
        }
    }
    assert!(accepted_count >= 50, "only {accepted_count} accepted scenes");
    assert!(rejected_count >= 50, "only {rejected_count} rejected scenes");

    // Constructed wall-piercing primitives are all rejected.
    for case in 0..100 {
        let wall_distance = r.random_range(1.0..3.0);
        let world = World {
            seed: case,
            extent: [100.0, 100.0, 16.0],
            walls: vec![Wall {
                center: [50.0 + wall_distance + 0.25, 50.0, 8.0],
                half_extents: [0.25, r.random_range(2.0..30.0), 8.0],
            }],
        };
        let position = Vector3::new(50.0, 50.0, 8.0);
        let pose = BodyPose::from_position_yaw(position, 0.0);
        let image = render_depth(&world, &pose, &intr, &extr, 5.0);
        let x0 = KinodynamicState::rest_at(position);
        let terminal = TerminalState::rest_at(
            position + Vector3::new(wall_distance + 1.0, r.random_range(-0.5..0.5), 0.0),
        );
        let prim = solve_obvp(&x0, &terminal, 1.5).unwrap();
        let verdict = shield_check(&prim, &image, &pose, &intr, &extr, &safety, m);
        assert!(
            !verdict.accepted,
            "wall-piercing primitive accepted (wall at {wall_distance} m)"
        );
    }

    assert_runtime(4, start, 60.0);
    pass(4, "every accepted candidate passes the independent margin re-check; all piercing candidates rejected");
}

fn perturbed(set: &PrimitiveSet, candidate: usize, component: usize, delta: f64) -> PrimitiveSet {
    let mut out = set.clone();
    let mut arr = out.terminals[candidate].to_array();
    arr[component] += delta;
    out.terminals[candidate] = TerminalState::from_array(arr);
    out
}

fn random_candidate_set(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> PrimitiveSet {
    PrimitiveSet {
        terminals: (0..k)
            .map(|_| TerminalState {
                position: Vector3::new(
                    r.random_range(0.5..3.5),
                    r.random_range(-2.0..2.0),
                    r.random_range(-1.0..1.0),
                ),
                velocity: Vector3::new(
                    r.random_range(-1.5..1.5),
                    r.random_range(-1.5..1.5),
                    r.random_range(-1.5..1.5),
                ),
                acceleration: Vector3::new(
                    r.random_range(-2.0..2.0),
                    r.random_range(-2.0..2.0),
                    r.random_range(-2.0..2.0),
                ),
            })
            .collect(),
        confidences: (0..k).map(|_| r.random_range(0.05..0.95)).collect(),
    }
}

#[test]
fn criterion_05_gradient_checks() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    // Envelope mapping.
    {
        let envelope = PhysicalEnvelope::default();
        let mut r = rng(51);
        let h = 1e-6;
        for _ in 0..50 {
            let base: [f64; 9] = std::array::from_fn(|_| r.random_range(-2.5..2.5));
            let jac = bound_activation_jacobian(&base, &envelope);
            for i in 0..9 {
                let mut plus = base;
                let mut minus = base;
                plus[i] += h;
                minus[i] -= h;
                let fd = (bound_activation(&plus, &envelope)[i]
                    - bound_activation(&minus, &envelope)[i])
                    / (2.0 * h);
                if (jac[i] - fd).abs() / fd.abs().max(1e-9) > 1e-4 {
                    failures.push(format!("envelope component {i}"));
                }
            }
        }
    }

    // Smoothness loss.
    {
        let mut r = rng(52);
        let x0 = KinodynamicState::rest_at(Vector3::zeros());
        let h = 1e-5;
        for _ in 0..6 {
            let set = random_candidate_set(&mut r, 4);
            let term = smoothness_loss(&set, &x0, 1.5).unwrap();
            for i in 0..set.len() {
                for j in 0..9 {
                    let fd = (smoothness_loss(&perturbed(&set, i, j, h), &x0, 1.5)
                        .unwrap()
                        .value
                        - smoothness_loss(&perturbed(&set, i, j, -h), &x0, 1.5)
                            .unwrap()
                            .value)
                        / (2.0 * h);
                    let got = term.grad_terminals[i][j];
                    if (got - fd).abs() / fd.abs().max(1.0) > 1e-4 {
                        failures.push(format!("smoothness {i}/{j}: {got} vs {fd}"));
                    }
                }
            }
        }
    }

    // Safety loss (smooth synthetic depth, away from pixel kinks).
    {
        let mut image = DepthImage::constant(96, 72, 5.0, 5.0);
        for v in 0..image.height {
            for u in 0..image.width {
                let depth = 3.0 + 1.5 * ((u as f64 / 9.0).sin() * (v as f64 / 7.0).cos());
                image.set(u, v, depth.clamp(0.5, 5.0));
            }
        }
        let x0 = KinodynamicState::rest_at(Vector3::zeros());
        let pose = BodyPose::identity();
        let intr = Intrinsics::default();
        let extr = CameraExtrinsics::default();
        let safety = SafetyParams {
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
            safety: &safety,
            goal: Vector3::new(8.0, 0.0, 0.0),
            guidance: &guidance_cfg,
            weights: &weights,
        };
        let near_kink = |set: &PrimitiveSet, index: usize| -> bool {
            let prim = solve_obvp(ctx.x0, &set.terminals[index], ctx.horizon).unwrap();
            let step = ctx.horizon / 19.0;
            for wp in 0..20 {
                let t = (wp as f64 * step).min(ctx.horizon);
                let point = prim.eval(t).unwrap().position;
                let p_c = kio::camera::world_to_camera(&point, &pose, &extr);
                if (p_c.z - kio::camera::Z_NEAR).abs() < 1e-3 {
                    return true;
                }
                if p_c.z <= kio::camera::Z_NEAR {
                    continue;
                }
                let u = intr.fx * p_c.x / p_c.z + intr.cx;
                let v = intr.fy * p_c.y / p_c.z + intr.cy;
                if u.abs() < 0.01
                    || (u - intr.width as f64).abs() < 0.01
                    || v.abs() < 0.01
                    || (v - intr.height as f64).abs() < 0.01
                    || u.fract().min(1.0 - u.fract()) < 2e-3
                    || v.fract().min(1.0 - v.fract()) < 2e-3
                {
                    return true;
                }
            }
            false
        };
        let mut r = rng(53);
        let h = 1e-5;
        for _ in 0..6 {
            let set = random_candidate_set(&mut r, 3);
            let term = safety_loss(&set, &ctx).unwrap();
            for i in 0..set.len() {
                if near_kink(&set, i) {
                    continue;
                }
                for j in 0..9 {
                    let fd = (safety_loss(&perturbed(&set, i, j, h), &ctx).unwrap().value
                        - safety_loss(&perturbed(&set, i, j, -h), &ctx).unwrap().value)
                        / (2.0 * h);
                    let got = term.grad_terminals[i][j];
                    if (got - fd).abs() / fd.abs().max(1e-3) > 1e-4 {
                        failures.push(format!("safety {i}/{j}: {got} vs {fd}"));
                    }
                }
            }
        }
    }

    // Guidance loss, away from the hinge.
    {
        let mut r = rng(54);
        let cfg = GuidanceConfig::default();
        let x0 = KinodynamicState::rest_at(Vector3::zeros());
        let goal = Vector3::new(7.0, 2.0, 0.5);
        let g_hat = (goal - x0.position).normalize();
        let h = 1e-5;
        for _ in 0..8 {
            let set = random_candidate_set(&mut r, 4);
            let term = guidance_loss(&set, &x0, &goal, &cfg).unwrap();
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
                    let got = term.grad_terminals[i][j];
                    if (got - fd).abs() / fd.abs().max(1e-2) > 1e-4 {
                        failures.push(format!("guidance {i}/{j}: {got} vs {fd}"));
                    }
                }
            }
        }
    }

    // Attention blocks: channel, spatial, and the composition.
    {
        let shape = (4usize, 6usize, 6usize);
        let len = 4 * 6 * 6;
        let mut r = rng(55);
        let input: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let h = 1e-6;

        let fresh = |seed: u64| {
            let mut rr = rng(seed);
            CbamBlock::new(4, 2, &mut rr)
        };

        // Channel attention.
        let pick: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut block = fresh(550);
        let _ = block.channel.forward(&input, shape);
        let grad = block.channel.backward(&pick);
        for i in (0..len).step_by(11) {
            let mut plus = input.clone();
            let mut minus = input.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut b2 = fresh(550);
            let up: f64 = b2
                .channel
                .forward(&plus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let mut b3 = fresh(550);
            let down: f64 = b3
                .channel
                .forward(&minus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let fd = (up - down) / (2.0 * h);
            if (grad[i] - fd).abs() / fd.abs().max(1e-4) > 1e-4 {
                failures.push(format!("channel attention input {i}"));
            }
        }

        // Spatial attention.
        let pick: Vec<f64> = (0..36).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut block = fresh(551);
        let _ = block.spatial.forward(&input, shape);
        let grad = block.spatial.backward(&pick);
        for i in (0..len).step_by(13) {
            let mut plus = input.clone();
            let mut minus = input.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut b2 = fresh(551);
            let up: f64 = b2
                .spatial
                .forward(&plus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let mut b3 = fresh(551);
            let down: f64 = b3
                .spatial
                .forward(&minus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let fd = (up - down) / (2.0 * h);
            if (grad[i] - fd).abs() / fd.abs().max(1e-4) > 1e-4 {
                failures.push(format!("spatial attention input {i}"));
            }
        }

        // Full CBAM composition.
        let pick: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut block = fresh(552);
        let _ = block.forward(&input, shape);
        let grad = block.backward(&pick);
        for i in (0..len).step_by(17) {
            let mut plus = input.clone();
            let mut minus = input.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut b2 = fresh(552);
            let up: f64 = b2
                .forward(&plus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let mut b3 = fresh(552);
            let down: f64 = b3
                .forward(&minus, shape)
                .iter()
                .zip(&pick)
                .map(|(a, b)| a * b)
                .sum();
            let fd = (up - down) / (2.0 * h);
            if (grad[i] - fd).abs() / fd.abs().max(1e-4) > 1e-4 {
                failures.push(format!("cbam composition input {i}"));
            }
        }
    }

    // Full composed graph: network -> envelope -> losses.
    {
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
        let mut net = PolicyNet::new(config, 99);
        let mut r = rng(56);
        let mut image = DepthImage::constant(24, 16, 5.0, 5.0);
        for v in image.values.iter_mut() {
            *v = r.random_range(1.0..5.0);
        }
        let frame = kio::micronet::TrainFrame {
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
            frame_loss(&output, &frame, &setup).unwrap().0.total
        };
        net.zero_grad();
        let cond = conditioning_vector(&frame.state, &frame.goal);
        let output = net.forward(&frame.image, &cond).unwrap();
        let (_, grad_raw, grad_conf) = frame_loss(&output, &frame, &setup).unwrap();
        net.backward(&grad_raw, &grad_conf);
        let h = 1e-5;
        for (name, index) in [
            ("stem.weight", 1usize),
            ("block1.conv1.weight", 7),
            ("block2.ca.w0", 5),
            ("block2.sa.weight", 48),
            ("block3.conv2.weight", 100),
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
            if (analytic - fd).abs() / fd.abs().max(1e-5) > 1e-3 {
                failures.push(format!("full graph {name}[{index}]: {analytic} vs {fd}"));
            }
        }
    }

    assert!(failures.is_empty(), "gradient failures: {failures:?}");
    assert_runtime(5, start, 120.0);
    pass(5, "all analytic gradients match central differences at their tolerances");
}

#[test]
fn criterion_06_cbam_structure() {
    let start = Instant::now();
    let mut r = rng(1006);
    for shape in [(4usize, 6usize, 6usize), (8, 9, 5), (16, 4, 7)] {
        let ratio = if shape.0 >= 8 { 8 } else { 2 };
        let mut block = CbamBlock::new(shape.0, ratio, &mut r);
        let len = shape.0 * shape.1 * shape.2;
        let input: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        let out = block.forward(&input, shape);
        assert_eq!(out.len(), input.len(), "shape not preserved");

        let gates_c = block.channel.forward(&input, shape);
        assert!(gates_c.iter().all(|&g| g > 0.0 && g < 1.0));
        let gates_s = block.spatial.forward(&input, shape);
        assert!(gates_s.iter().all(|&g| g > 0.0 && g < 1.0));
    }

    // Zero-initialized block scales features by exactly 0.25.
    let mut block = CbamBlock::new(4, 2, &mut r);
    block.channel.w0.values.iter_mut().for_each(|v| *v = 0.0);
    block.channel.w1.values.iter_mut().for_each(|v| *v = 0.0);
    block.spatial.weight.values.iter_mut().for_each(|v| *v = 0.0);
    block.spatial.bias.values[0] = 0.0;
    let input: Vec<f64> = (0..4 * 5 * 5).map(|_| r.random_range(-2.0..2.0)).collect();
    let out = block.forward(&input, (4, 5, 5));
    for (o, i) in out.iter().zip(&input) {
        assert_eq!(*o, 0.25 * i);
    }

    assert_runtime(6, start, 10.0);
    pass(6, "attention output shapes, (0,1) ranges and zero-init 0.25 scaling hold");
}

#[test]
fn criterion_07_training_smoke() {
    let start = Instant::now();
    let dataset_config = DatasetConfig::default();
    let world_gen = WorldGenConfig::default();
    let intr = Intrinsics::default();
    let extr = CameraExtrinsics::default();
    let frames = generate_dataset(&dataset_config, &world_gen, &intr, &extr).unwrap();
    assert_eq!(frames.len(), 64);

    let setup = TrainSetup {
        envelope: PhysicalEnvelope::default(),
        safety: SafetyParams {
            oov_policy: OovPolicy::Permissive,
            ..SafetyParams::default()
        },
        weights: LossWeights::default(),
        guidance: GuidanceConfig::default(),
        intrinsics: intr,
        extrinsics: extr,
        horizon: 1.5,
        waypoints: 20,
    };
    let run = || -> Vec<f64> {
        let mut net = PolicyNet::new(PolicyConfig::default(), 11);
        let mut adam = Adam::new(AdamConfig::default());
        let mut curve = Vec::with_capacity(200);
        for step in 0..200 {
            let start_index = (step * 8) % frames.len();
            let batch: Vec<_> = (0..8)
                .map(|i| frames[(start_index + i) % frames.len()].clone())
                .collect();
            let loss = train_step(&batch, &mut net, &mut adam, &setup).unwrap();
            assert!(loss.total.is_finite(), "non-finite loss at step {step}");
            curve.push(loss.total);
        }
        curve
    };

    let first = run();
    let second = run();
    assert_eq!(first, second, "loss curves differ across identical runs");

    let initial = first[0];
    let final_loss = *first.last().unwrap();
    let decrease = initial - final_loss;
    assert!(
        decrease >= 0.3 * initial.abs(),
        "loss decreased by {decrease:.4} from {initial:.4}, less than 30%"
    );

    assert_runtime(7, start, 600.0);
    pass(7, "200-step training run reproducible with >= 30% loss decrease");
}

#[test]
fn criterion_08_closed_loop_ablation() {
    let start = Instant::now();
    let world_gen = WorldGenConfig::default();
    let planner = PlannerConfig::default();
    let bench = BenchConfig {
        methods: vec![Method::Sampler, Method::SamplerNoShield],
        tiers: vec![2.0],
        trials: 50,
        ..BenchConfig::default()
    };
    let report = run_benchmark(
        &world_gen,
        &planner,
        &Intrinsics::default(),
        &CameraExtrinsics::default(),
        &bench,
        None,
    )
    .unwrap();

    let arm = |method: Method| -> Vec<&kio::harness::TrialRow> {
        report.rows.iter().filter(|r| r.method == method).collect()
    };
    let shield_on = arm(Method::Sampler);
    let shield_off = arm(Method::SamplerNoShield);
    assert_eq!(shield_on.len(), 50);
    assert_eq!(shield_off.len(), 50);

    let collisions_on = shield_on
        .iter()
        .filter(|r| r.metrics.outcome == Outcome::Collided)
        .count();
    assert_eq!(
        collisions_on, 0,
        "shield-on arm collided {collisions_on} times out of 50"
    );

    let mean = |rows: &[&kio::harness::TrialRow]| -> f64 {
        rows.iter().map(|r| r.metrics.min_dist_m).sum::<f64>() / rows.len() as f64
    };
    let mean_on = mean(&shield_on);
    let mean_off = mean(&shield_off);
    assert!(
        mean_on >= mean_off,
        "shield-on mean min-dist {mean_on:.3} below shield-off {mean_off:.3}"
    );

    assert_runtime(8, start, 900.0);
    pass(
        8,
        &format!(
            "50-trial ablation: shield-on 0 collisions, mean min-dist {mean_on:.3} >= {mean_off:.3} shield-off"
        ),
    );
}

#[test]
fn criterion_09_benchmark_determinism() {
    let start = Instant::now();
    let world_gen = WorldGenConfig {
        wall_count: 80,
        ..WorldGenConfig::default()
    };
    let planner = PlannerConfig::default();
    let mut bench = BenchConfig {
        methods: vec![Method::Sampler, Method::SamplerNoShield],
        tiers: vec![2.0],
        trials: 4,
        timeout: 20.0,
        ..BenchConfig::default()
    };
    let intr = Intrinsics::default();
    let extr = CameraExtrinsics::default();

    let serial_a = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
    let serial_b = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
    bench.parallel = true;
    let parallel = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();

    assert_eq!(serial_a.trials_csv(), serial_b.trials_csv());
    assert_eq!(serial_a.metrics_csv(), serial_b.metrics_csv());
    assert_eq!(serial_a.trials_csv(), parallel.trials_csv());
    assert_eq!(serial_a.metrics_csv(), parallel.metrics_csv());

    assert_runtime(9, start, 300.0);
    pass(9, "benchmark CSVs byte-identical across repeats and serial/parallel execution");
}

#[test]
fn criterion_10_checkpoint_round_trip() {
    let start = Instant::now();
    let config = PolicyConfig {
        input_width: 24,
        input_height: 16,
        candidates: 3,
        widths: [4, 8, 8],
        reduction: 4,
        state_hidden: 8,
        head_hidden: 16,
    };
    // Train a few steps so the weights are not at initialization.
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
    let mut r = rng(1010);
    let mut image = DepthImage::constant(24, 16, 5.0, 5.0);
    for v in image.values.iter_mut() {
        *v = r.random_range(1.0..5.0);
    }
    let frame = kio::micronet::TrainFrame {
        image: image.clone(),
        state: KinodynamicState::rest_at(Vector3::new(0.0, 0.0, 1.5)),
        goal: Vector3::new(6.0, 0.5, 1.5),
    };
    let mut net = PolicyNet::new(config, 77);
    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..5 {
        train_step(&[frame.clone()], &mut net, &mut adam, &setup).unwrap();
    }

    let first = serialize_checkpoint(&mut net);
    let mut loaded = deserialize_checkpoint(&first).unwrap();
    let second = serialize_checkpoint(&mut loaded);
    assert_eq!(first, second, "save -> load -> save changed bytes");

    let state = [0.1, -0.2, 0.0, 0.3, 0.0, 0.1, 0.9, 0.2, 0.1];
    let a = net.forward(&image, &state).unwrap();
    let b = loaded.forward(&image, &state).unwrap();
    for (ha, hb) in a.h_kin.iter().zip(&b.h_kin) {
        for j in 0..9 {
            assert_eq!(ha[j].to_bits(), hb[j].to_bits(), "forward differs in bits");
        }
    }
    for (ca, cb) in a.confidences.iter().zip(&b.confidences) {
        assert_eq!(ca.to_bits(), cb.to_bits());
    }

    assert_runtime(10, start, 60.0);
    pass(10, "checkpoint bytes stable and loaded forward pass bit-equal");
}

#[test]
fn envelope_speed_slack_over_bench() {
    // Harness invariant: executed maximum speed never exceeds the tier by
    // more than the envelope's slack factor of 1.25.
    let world_gen = WorldGenConfig::default();
    let bench = BenchConfig {
        methods: vec![Method::Sampler],
        tiers: vec![2.0, 2.5, 3.0],
        trials: 3,
        timeout: 30.0,
        ..BenchConfig::default()
    };
    let report = run_benchmark(
        &world_gen,
        &PlannerConfig::default(),
        &Intrinsics::default(),
        &CameraExtrinsics::default(),
        &bench,
        None,
    )
    .unwrap();
    for row in &report.rows {
        assert!(
            row.metrics.max_speed_mps <= 1.25 * row.tier,
            "trial {} at tier {} reached {:.2} m/s",
            row.trial,
            row.tier,
            row.metrics.max_speed_mps
        );
    }
}

#[test]
fn world_file_interface_matches_schema() {
    // External interface: {seed, extent, walls:[{center, half_extents}]}.
    let world = generate_world(
        &WorldGenConfig {
            wall_count: 6,
            ..WorldGenConfig::default()
        },
        3,
    )
    .unwrap();
    let text = world.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(value["seed"].is_u64());
    assert_eq!(value["extent"].as_array().unwrap().len(), 3);
    let walls = value["walls"].as_array().unwrap();
    assert_eq!(walls.len(), 6);
    assert_eq!(walls[0]["center"].as_array().unwrap().len(), 3);
    assert_eq!(walls[0]["half_extents"].as_array().unwrap().len(), 3);
    // Field order is pinned.
    let seed_pos = text.find("\"seed\"").unwrap();
    let extent_pos = text.find("\"extent\"").unwrap();
    let walls_pos = text.find("\"walls\"").unwrap();
    assert!(seed_pos < extent_pos && extent_pos < walls_pos);
}
