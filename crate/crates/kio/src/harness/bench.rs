//! Benchmark matrix: methods x speed tiers x seeded trials, with CSV
//! emission. Trials are independent and own their RNG streams, so serial
//! and parallel execution produce byte-identical outputs.

use super::metrics::{compute_metrics, Metrics};
use super::sim::{simulate_trial, Method, Outcome, TrialConfig};
use super::{mix_seed, HarnessError};
use crate::camera::{CameraExtrinsics, Intrinsics};
use crate::micronet::PolicyNet;
use crate::planner::{PlannerConfig, TimingMode};
use crate::world::{generate_world, World, WorldGenConfig};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub tiers: Vec<f64>,
    /// Trials per (method, tier) cell.
    pub trials: usize,
    pub base_seed: u64,
    /// Minimum start-goal separation, meters.
    pub separation_min: f64,
    pub timeout: f64,
    pub parallel: bool,
    /// Measure wall-clock planner latency. Off by default so benchmark
    /// outputs are byte-reproducible; turn on for timing studies.
    pub measure_latency: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Sampler, Method::SamplerNoShield],
            tiers: vec![2.0],
            trials: 50,
            base_seed: 7,
            separation_min: 40.0,
            timeout: 90.0,
            parallel: false,
            measure_latency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: Method,
    pub tier: f64,
    pub trial: usize,
    pub world_seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub tier: f64,
    pub latency_ms: f64,
    pub path_length_m: f64,
    pub avg_speed_mps: f64,
    pub max_speed_mps: f64,
    pub min_dist_m: f64,
    pub smoothness: f64,
    pub reached: usize,
    pub collided: usize,
    pub timeout: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
}

pub const METRICS_HEADER: &str =
    "method,tier,latency_ms,path_length_m,avg_speed_mps,max_speed_mps,min_dist_m,smoothness,outcome";
pub const TRIALS_HEADER: &str =
    "method,tier,trial,latency_ms,path_length_m,avg_speed_mps,max_speed_mps,min_dist_m,smoothness,outcome";

impl BenchReport {
    /// Aggregate CSV, one row per (method, tier); the outcome column holds
    /// outcome counts.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},reached={};collided={};timeout={}\n",
                a.method.label(),
                a.tier,
                a.latency_ms,
                a.path_length_m,
                a.avg_speed_mps,
                a.max_speed_mps,
                a.min_dist_m,
                a.smoothness,
                a.reached,
                a.collided,
                a.timeout
            ));
        }
        out
    }

    /// Per-trial CSV.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from(TRIALS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method.label(),
                r.tier,
                r.trial,
                m.latency_ms,
                m.path_length_m,
                m.avg_speed_mps,
                m.max_speed_mps,
                m.min_dist_m,
                m.smoothness,
                m.outcome.label()
            ));
        }
        out
    }
}

/// Sample a collision-free point with clearance, away from the boundary.
fn sample_free_point(world: &World, rng: &mut ChaCha8Rng, clearance: f64) -> Option<Vector3<f64>> {
    let e = world.extent;
    for _ in 0..500 {
        let p = Vector3::new(
            rng.random_range(3.0..e[0] - 3.0),
            rng.random_range(3.0..e[1] - 3.0),
            rng.random_range(2.0..e[2] - 2.0),
        );
        if world.signed_distance(&p) >= clearance {
            return Some(p);
        }
    }
    None
}

/// Deterministic start/goal pair for a trial index.
pub fn sample_start_goal(
    world: &World,
    seed: u64,
    separation_min: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let Some(start) = sample_free_point(world, &mut rng, 1.0) else {
            continue;
        };
        let Some(goal) = sample_free_point(world, &mut rng, 1.0) else {
            continue;
        };
        if (goal - start).norm() >= separation_min {
            return Ok((start, goal));
        }
    }
    Err(HarnessError::InfeasibleStartGoal(format!(
        "no start/goal pair with separation {separation_min} found for seed {seed}"
    )))
}

#[derive(Clone, Copy)]
struct Job {
    method: Method,
    tier: f64,
    trial: usize,
}

fn run_job(
    job: &Job,
    world_gen: &WorldGenConfig,
    planner: &PlannerConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    bench: &BenchConfig,
    net: Option<&mut PolicyNet>,
) -> Result<TrialRow, HarnessError> {
    let world_seed = mix_seed(bench.base_seed, 1_000 + job.trial as u64);
    let world = generate_world(world_gen, world_seed)?;
    let sg_seed = mix_seed(bench.base_seed, 2_000_000 + job.trial as u64);
    let (start, goal) = sample_start_goal(&world, sg_seed, bench.separation_min)?;
    let trial = TrialConfig {
        world_seed,
        trial_seed: mix_seed(bench.base_seed, 3_000_000_000 + job.trial as u64),
        v_max_tier: job.tier,
        start: start.into(),
        goal: goal.into(),
        replan_rate: planner.replan_rate,
        timeout: bench.timeout,
        method: job.method,
        max_range: 5.0,
        goal_radius: 1.0,
    };
    let planner = PlannerConfig {
        timing: if bench.measure_latency {
            TimingMode::Wall
        } else {
            TimingMode::Disabled
        },
        ..*planner
    };
    let log = simulate_trial(&trial, &world, &planner, intr, extr, net)?;
    Ok(TrialRow {
        method: job.method,
        tier: job.tier,
        trial: job.trial,
        world_seed,
        metrics: compute_metrics(&log),
    })
}

/// Run the full matrix. Network methods always run serially (they share
/// the single mutable net); sampler methods honor `bench.parallel`.
pub fn run_benchmark(
    world_gen: &WorldGenConfig,
    planner: &PlannerConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    bench: &BenchConfig,
    mut net: Option<&mut PolicyNet>,
) -> Result<BenchReport, HarnessError> {
    let mut jobs = Vec::new();
    for method in &bench.methods {
        for &tier in &bench.tiers {
            for trial in 0..bench.trials {
                jobs.push(Job {
                    method: *method,
                    tier,
                    trial,
                });
            }
        }
    }

    let mut rows: Vec<Option<TrialRow>> = vec![None; jobs.len()];
    let sampler_indices: Vec<usize> = (0..jobs.len())
        .filter(|&i| !jobs[i].method.uses_network())
        .collect();
    if bench.parallel {
        let computed: Vec<(usize, Result<TrialRow, HarnessError>)> = sampler_indices
            .par_iter()
            .map(|&i| {
                (
                    i,
                    run_job(&jobs[i], world_gen, planner, intr, extr, bench, None),
                )
            })
            .collect();
        for (i, row) in computed {
            rows[i] = Some(row?);
        }
    } else {
        for &i in &sampler_indices {
            rows[i] = Some(run_job(&jobs[i], world_gen, planner, intr, extr, bench, None)?);
        }
    }
    for i in 0..jobs.len() {
        if jobs[i].method.uses_network() {
            let net_ref = net
                .as_deref_mut()
                .ok_or_else(|| HarnessError::MissingNetwork(jobs[i].method.label().into()))?;
            rows[i] = Some(run_job(
                &jobs[i],
                world_gen,
                planner,
                intr,
                extr,
                bench,
                Some(net_ref),
            )?);
        }
    }
    let rows: Vec<TrialRow> = rows.into_iter().map(|r| r.unwrap()).collect();

    let mut aggregates = Vec::new();
    for method in &bench.methods {
        for &tier in &bench.tiers {
            let cell: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.method == *method && r.tier == tier)
                .collect();
            let reached: Vec<&&TrialRow> = cell
                .iter()
                .filter(|r| r.metrics.outcome == Outcome::Reached)
                .collect();
            let count = |o: Outcome| cell.iter().filter(|r| r.metrics.outcome == o).count();
            let mean = |f: &dyn Fn(&Metrics) -> f64| -> f64 {
                if reached.is_empty() {
                    0.0
                } else {
                    reached.iter().map(|r| f(&r.metrics)).sum::<f64>() / reached.len() as f64
                }
            };
            aggregates.push(AggregateRow {
                method: *method,
                tier,
                latency_ms: mean(&|m| m.latency_ms),
                path_length_m: mean(&|m| m.path_length_m),
                avg_speed_mps: mean(&|m| m.avg_speed_mps),
                max_speed_mps: mean(&|m| m.max_speed_mps),
                min_dist_m: mean(&|m| m.min_dist_m),
                smoothness: mean(&|m| m.smoothness),
                reached: count(Outcome::Reached),
                collided: count(Outcome::Collided),
                timeout: count(Outcome::Timeout),
            });
        }
    }
    Ok(BenchReport { rows, aggregates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bench() -> (WorldGenConfig, PlannerConfig, BenchConfig) {
        let world_gen = WorldGenConfig {
            wall_count: 30,
            ..WorldGenConfig::default()
        };
        let bench = BenchConfig {
            trials: 2,
            timeout: 4.0,
            separation_min: 20.0,
            ..BenchConfig::default()
        };
        (world_gen, PlannerConfig::default(), bench)
    }

    #[test]
    fn single_trial_aggregate_equals_trial_metrics() {
        let (world_gen, planner, mut bench) = tiny_bench();
        bench.trials = 1;
        bench.methods = vec![Method::Sampler];
        let report = run_benchmark(
            &world_gen,
            &planner,
            &Intrinsics::default(),
            &CameraExtrinsics::default(),
            &bench,
            None,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.aggregates.len(), 1);
        let m = &report.rows[0].metrics;
        let a = &report.aggregates[0];
        if m.outcome == Outcome::Reached {
            assert_eq!(a.path_length_m, m.path_length_m);
            assert_eq!(a.min_dist_m, m.min_dist_m);
        }
    }

    #[test]
    fn serial_and_parallel_are_byte_identical() {
        let (world_gen, planner, mut bench) = tiny_bench();
        let intr = Intrinsics::default();
        let extr = CameraExtrinsics::default();
        bench.parallel = false;
        let serial = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
        bench.parallel = true;
        let parallel = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
        assert_eq!(serial.trials_csv(), parallel.trials_csv());
        assert_eq!(serial.metrics_csv(), parallel.metrics_csv());
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let (world_gen, planner, bench) = tiny_bench();
        let intr = Intrinsics::default();
        let extr = CameraExtrinsics::default();
        let a = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
        let b = run_benchmark(&world_gen, &planner, &intr, &extr, &bench, None).unwrap();
        assert_eq!(a.trials_csv(), b.trials_csv());
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }

    #[test]
    fn shared_worlds_across_arms() {
        let (world_gen, planner, bench) = tiny_bench();
        let report = run_benchmark(
            &world_gen,
            &planner,
            &Intrinsics::default(),
            &CameraExtrinsics::default(),
            &bench,
            None,
        )
        .unwrap();
        // Trial i uses the same world seed in both arms.
        let shield_on: Vec<u64> = report
            .rows
            .iter()
            .filter(|r| r.method == Method::Sampler)
            .map(|r| r.world_seed)
            .collect();
        let shield_off: Vec<u64> = report
            .rows
            .iter()
            .filter(|r| r.method == Method::SamplerNoShield)
            .map(|r| r.world_seed)
            .collect();
        assert_eq!(shield_on, shield_off);
    }

    #[test]
    fn csv_headers_are_pinned() {
        assert_eq!(
            METRICS_HEADER,
            "method,tier,latency_ms,path_length_m,avg_speed_mps,max_speed_mps,min_dist_m,smoothness,outcome"
        );
        let (world_gen, planner, mut bench) = tiny_bench();
        bench.trials = 1;
        bench.methods = vec![Method::Sampler];
        let report = run_benchmark(
            &world_gen,
            &planner,
            &Intrinsics::default(),
            &CameraExtrinsics::default(),
            &bench,
            None,
        )
        .unwrap();
        assert!(report.metrics_csv().starts_with(METRICS_HEADER));
        assert!(report.trials_csv().starts_with(TRIALS_HEADER));
    }
}
