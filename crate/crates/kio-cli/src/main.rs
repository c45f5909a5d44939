//! `kio` command line: generate worlds, render depth, plan, simulate,
//! benchmark, train and run gradient checks.

mod gradcheck;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kio::camera::{render_depth, write_pfm, BodyPose, CameraExtrinsics};
use kio::harness::{
    compute_metrics, generate_dataset, run_benchmark, simulate_trial, Method, TrialConfig,
};
use kio::micronet::{load_checkpoint, save_checkpoint, train_step, Adam, PolicyNet, TrainSetup};
use kio::planner::{plan_step, CandidateSource, PlannerConfig, TimingMode};
use kio::primitives::KinodynamicState;
use kio::world::{generate_world, World};
use kio::AppConfig;
use nalgebra::Vector3;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kio", about = "Depth-shielded quintic-primitive UAV planner", version)]
struct Cli {
    /// Configuration file (JSON); missing sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a wall world and write world.json.
    GenWorld,
    /// Render a depth frame from a pose and write depth.pfm plus sidecar.
    Render(RenderArgs),
    /// Run one planning step and print the result as JSON.
    Plan(PlanArgs),
    /// Run one closed-loop trial; writes trial.jsonl and metrics.json.
    Simulate(SimulateArgs),
    /// Run the benchmark matrix; writes metrics.csv and trials.csv.
    Bench(BenchArgs),
    /// Train the policy network; writes checkpoint.kio and loss_curve.csv.
    Train(TrainArgs),
    /// Finite-difference validation of every analytic gradient.
    Gradcheck,
}

#[derive(Args)]
struct RenderArgs {
    /// World file; defaults to generating one from the config seed.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Camera pose as x,y,z,yaw_deg.
    #[arg(long, default_value = "5,50,8,0")]
    pose: String,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value = "5,50,8,0")]
    pose: String,
    /// Goal as x,y,z.
    #[arg(long, default_value = "20,50,8")]
    goal: String,
    #[arg(long, default_value = "sampler")]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value = "5,50,8")]
    start: String,
    #[arg(long, default_value = "60,50,8")]
    goal: String,
    #[arg(long, default_value = "sampler")]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Speed tier (envelope V_max), m/s.
    #[arg(long, default_value_t = 2.0)]
    tier: f64,
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Measure wall-clock planner latency (makes logs non-reproducible).
    #[arg(long)]
    measure_latency: bool,
    /// Dump one PFM depth frame per step next to the log.
    #[arg(long)]
    dump_depth: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated methods (net, net_no_shield, sampler, sampler_no_shield).
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated speed tiers.
    #[arg(long)]
    tiers: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    measure_latency: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    /// Also dump the generated dataset (PFM + JSON sidecars).
    #[arg(long)]
    dump_dataset: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            AppConfig::from_json(&text).context("parsing config")?
        }
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.bench.base_seed = seed;
        config.training.seed = seed;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match &cli.command {
        Command::GenWorld => gen_world(&cli, &config),
        Command::Render(args) => render(&cli, &config, args),
        Command::Plan(args) => plan(&cli, &config, args),
        Command::Simulate(args) => simulate(&cli, &config, args),
        Command::Bench(args) => bench(&cli, &config, args),
        Command::Train(args) => train(&cli, &config, args),
        Command::Gradcheck => gradcheck::run(),
    }
}

fn world_seed(cli: &Cli, config: &AppConfig) -> u64 {
    cli.seed.unwrap_or(config.bench.base_seed)
}

fn load_or_generate_world(cli: &Cli, config: &AppConfig, path: &Option<PathBuf>) -> Result<World> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(World::from_json(&text)?)
        }
        None => Ok(generate_world(&config.world, world_seed(cli, config))?),
    }
}

fn parse_vec3(text: &str) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing vector {text:?}"))?;
    if parts.len() != 3 {
        bail!("expected x,y,z but got {text:?}");
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn parse_pose(text: &str) -> Result<(Vector3<f64>, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing pose {text:?}"))?;
    if parts.len() != 4 {
        bail!("expected x,y,z,yaw_deg but got {text:?}");
    }
    Ok((
        Vector3::new(parts[0], parts[1], parts[2]),
        parts[3].to_radians(),
    ))
}

fn parse_method(text: &str) -> Result<Method> {
    Method::parse(text).with_context(|| {
        format!("unknown method {text:?}; expected net, net_no_shield, sampler or sampler_no_shield")
    })
}

fn gen_world(cli: &Cli, config: &AppConfig) -> Result<()> {
    let world = generate_world(&config.world, world_seed(cli, config))?;
    let path = cli.out.join("world.json");
    fs::write(&path, world.to_json()?)?;
    println!(
        "wrote {} ({} walls, extent {:?})",
        path.display(),
        world.walls.len(),
        world.extent
    );
    Ok(())
}

fn write_depth_with_sidecar(
    path_base: &Path,
    image: &kio::camera::DepthImage,
    pose: &BodyPose,
    config: &AppConfig,
) -> Result<()> {
    let pfm = path_base.with_extension("pfm");
    fs::write(&pfm, write_pfm(image))?;
    let intr = config.camera.intrinsics();
    let sidecar = serde_json::json!({
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "pose": {
            "rotation": pose.rotation.as_slice(),
            "translation": [pose.translation.x, pose.translation.y, pose.translation.z],
        },
        "max_range": config.camera.max_range,
    });
    fs::write(
        path_base.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

fn render(cli: &Cli, config: &AppConfig, args: &RenderArgs) -> Result<()> {
    let world = load_or_generate_world(cli, config, &args.world)?;
    let (position, yaw) = parse_pose(&args.pose)?;
    let pose = BodyPose::from_position_yaw(position, yaw);
    let image = render_depth(
        &world,
        &pose,
        &config.camera.intrinsics(),
        &CameraExtrinsics::default(),
        config.camera.max_range,
    );
    let base = cli.out.join("depth");
    write_depth_with_sidecar(&base, &image, &pose, config)?;
    println!("wrote {} and sidecar", base.with_extension("pfm").display());
    Ok(())
}

fn plan(cli: &Cli, config: &AppConfig, args: &PlanArgs) -> Result<()> {
    let world = load_or_generate_world(cli, config, &args.world)?;
    let (position, yaw) = parse_pose(&args.pose)?;
    let goal = parse_vec3(&args.goal)?;
    let method = parse_method(&args.method)?;
    let pose = BodyPose::from_position_yaw(position, yaw);
    let intr = config.camera.intrinsics();
    let extr = CameraExtrinsics::default();
    let image = render_depth(&world, &pose, &intr, &extr, config.camera.max_range);
    let state = KinodynamicState {
        position,
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
        yaw,
    };
    let planner = PlannerConfig {
        shield_enabled: method.shield_enabled(),
        timing: TimingMode::Wall,
        ..config.planner
    };
    let mut net_storage;
    let result = if method.uses_network() {
        let path = args
            .checkpoint
            .as_ref()
            .context("network methods need --checkpoint")?;
        net_storage = load_checkpoint(path)?;
        plan_step(
            &image,
            &state,
            &goal,
            CandidateSource::Network(&mut net_storage),
            &planner,
            &intr,
            &extr,
        )?
    } else {
        plan_step(
            &image,
            &state,
            &goal,
            CandidateSource::Sampler {
                seed: world_seed(cli, config),
            },
            &planner,
            &intr,
            &extr,
        )?
    };

    let doc = serde_json::json!({
        "used_fallback": result.used_fallback,
        "chosen_index": result.chosen_index,
        "elapsed_ms": result.elapsed_ms,
        "chosen": result.chosen.map(|p| serde_json::json!({
            "coefficients": p.coefficients,
            "duration": p.duration,
        })),
        "candidates": result.candidates.terminals.iter().zip(&result.candidates.confidences)
            .map(|(t, c)| serde_json::json!({"terminal": t.to_array(), "confidence": c}))
            .collect::<Vec<_>>(),
        "verdicts": kio::harness::sim::serialize_verdicts(&result.verdicts),
    });
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(cli.out.join("plan.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn simulate(cli: &Cli, config: &AppConfig, args: &SimulateArgs) -> Result<()> {
    let world = load_or_generate_world(cli, config, &args.world)?;
    let method = parse_method(&args.method)?;
    let start = parse_vec3(&args.start)?;
    let goal = parse_vec3(&args.goal)?;
    let trial = TrialConfig {
        world_seed: world.seed,
        trial_seed: world_seed(cli, config),
        v_max_tier: args.tier,
        start: start.into(),
        goal: goal.into(),
        replan_rate: config.planner.replan_rate,
        timeout: args.timeout,
        method,
        max_range: config.camera.max_range,
        goal_radius: 1.0,
    };
    let planner = PlannerConfig {
        timing: if args.measure_latency {
            TimingMode::Wall
        } else {
            TimingMode::Disabled
        },
        ..config.planner
    };
    let intr = config.camera.intrinsics();
    let extr = CameraExtrinsics::default();
    let mut net_storage = None;
    if method.uses_network() {
        let path = args
            .checkpoint
            .as_ref()
            .context("network methods need --checkpoint")?;
        net_storage = Some(load_checkpoint(path)?);
    }
    let log = simulate_trial(
        &trial,
        &world,
        &planner,
        &intr,
        &extr,
        net_storage.as_mut(),
    )?;
    let metrics = compute_metrics(&log);

    // One JSON record per step, then the final metrics record.
    let mut lines = Vec::with_capacity(log.steps.len() + 1);
    for (i, step) in log.steps.iter().enumerate() {
        let depth_ref = if args.dump_depth {
            let pose = BodyPose::from_position_yaw(Vector3::from(step.position), step.yaw);
            let image = render_depth(&world, &pose, &intr, &extr, config.camera.max_range);
            let base = cli.out.join(format!("depth_{i:05}"));
            write_depth_with_sidecar(&base, &image, &pose, config)?;
            Some(format!("depth_{i:05}.pfm"))
        } else {
            None
        };
        let mut value = serde_json::to_value(step)?;
        value["depth_ref"] = serde_json::to_value(&depth_ref)?;
        lines.push(serde_json::to_string(&value)?);
    }
    lines.push(serde_json::to_string(&serde_json::json!({
        "outcome": log.outcome.label(),
        "duration": log.duration,
        "metrics": metrics,
    }))?);
    fs::write(cli.out.join("trial.jsonl"), lines.join("\n") + "\n")?;
    fs::write(
        cli.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    println!(
        "outcome={} path={:.2}m steps={} min_dist={:.2}m",
        log.outcome.label(),
        metrics.path_length_m,
        log.steps.len(),
        metrics.min_dist_m
    );
    Ok(())
}

fn bench(cli: &Cli, config: &AppConfig, args: &BenchArgs) -> Result<()> {
    let mut bench = config.bench.clone();
    if let Some(methods) = &args.methods {
        bench.methods = methods
            .split(',')
            .map(|m| parse_method(m.trim()))
            .collect::<Result<_>>()?;
    }
    if let Some(tiers) = &args.tiers {
        bench.tiers = tiers
            .split(',')
            .map(|t| t.trim().parse::<f64>().context("parsing tier"))
            .collect::<Result<_>>()?;
    }
    if let Some(trials) = args.trials {
        bench.trials = trials;
    }
    bench.parallel |= args.parallel;
    bench.measure_latency |= args.measure_latency;

    let mut net_storage = None;
    if bench.methods.iter().any(|m| m.uses_network()) {
        let path = args
            .checkpoint
            .as_ref()
            .context("network methods need --checkpoint")?;
        net_storage = Some(load_checkpoint(path)?);
    }
    let report = run_benchmark(
        &config.world,
        &config.planner,
        &config.camera.intrinsics(),
        &CameraExtrinsics::default(),
        &bench,
        net_storage.as_mut(),
    )?;
    fs::write(cli.out.join("metrics.csv"), report.metrics_csv())?;
    fs::write(cli.out.join("trials.csv"), report.trials_csv())?;
    print!("{}", report.metrics_csv());
    println!("wrote metrics.csv and trials.csv to {}", cli.out.display());
    Ok(())
}

fn train(cli: &Cli, config: &AppConfig, args: &TrainArgs) -> Result<()> {
    let steps = args.steps.unwrap_or(config.training.steps);
    let training = &config.training;
    let intr = config.camera.intrinsics();
    let extr = CameraExtrinsics::default();
    let frames = generate_dataset(&training.dataset, &config.world, &intr, &extr)?;
    println!("dataset: {} frames", frames.len());

    if args.dump_dataset {
        let dir = cli.out.join("dataset");
        fs::create_dir_all(&dir)?;
        for (i, frame) in frames.iter().enumerate() {
            let base = dir.join(format!("frame_{i:05}"));
            fs::write(base.with_extension("pfm"), write_pfm(&frame.image))?;
            let sidecar = serde_json::json!({
                "state": {
                    "position": [frame.state.position.x, frame.state.position.y, frame.state.position.z],
                    "velocity": [frame.state.velocity.x, frame.state.velocity.y, frame.state.velocity.z],
                    "acceleration": [frame.state.acceleration.x, frame.state.acceleration.y, frame.state.acceleration.z],
                    "yaw": frame.state.yaw,
                },
                "goal": [frame.goal.x, frame.goal.y, frame.goal.z],
                "max_range": config.camera.max_range,
            });
            fs::write(
                base.with_extension("json"),
                serde_json::to_string_pretty(&sidecar)?,
            )?;
        }
    }

    let setup = TrainSetup {
        envelope: config.planner.envelope,
        safety: config.safety,
        weights: config.losses.weights,
        guidance: config.losses.guidance,
        intrinsics: intr,
        extrinsics: extr,
        horizon: config.planner.horizon,
        waypoints: config.planner.waypoints,
    };
    let mut net = PolicyNet::new(training.policy, training.seed);
    let mut adam = Adam::new(training.adam);
    let mut curve = String::from("step,total,smooth,safety,guidance\n");
    let batch_size = training.batch_size.max(1).min(frames.len());
    for step in 0..steps {
        let start = (step * batch_size) % frames.len();
        let batch: Vec<_> = (0..batch_size)
            .map(|i| frames[(start + i) % frames.len()].clone())
            .collect();
        let loss = train_step(&batch, &mut net, &mut adam, &setup)?;
        curve.push_str(&format!(
            "{},{},{},{},{}\n",
            step, loss.total, loss.smooth, loss.safety, loss.guidance
        ));
        if step % 20 == 0 || step + 1 == steps {
            println!(
                "step {step:4}  total {:+.4}  smooth {:.4}  safety {:.4}  guidance {:+.4}",
                loss.total, loss.smooth, loss.safety, loss.guidance
            );
        }
    }
    fs::write(cli.out.join("loss_curve.csv"), curve)?;
    let checkpoint = cli.out.join("checkpoint.kio");
    save_checkpoint(&mut net, &checkpoint)?;
    println!("wrote {} and loss_curve.csv", checkpoint.display());
    Ok(())
}
