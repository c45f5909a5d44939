//! Per-trial metric computation from the executed profile.

use super::sim::{Outcome, TrialLog};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean planner latency per step, milliseconds (zero when timing is
    /// disabled for reproducibility).
    pub latency_ms: f64,
    pub path_length_m: f64,
    pub avg_speed_mps: f64,
    pub max_speed_mps: f64,
    /// Minimum true-world signed distance over the executed path.
    pub min_dist_m: f64,
    /// Mean squared jerk over the executed path, m^2/s^6.
    pub smoothness: f64,
    pub outcome: Outcome,
}

pub fn compute_metrics(log: &TrialLog) -> Metrics {
    let latency_ms = if log.steps.is_empty() {
        0.0
    } else {
        log.steps.iter().map(|s| s.elapsed_ms).sum::<f64>() / log.steps.len() as f64
    };

    let mut path_length = 0.0;
    for pair in log.samples.windows(2) {
        let dx = pair[1].position[0] - pair[0].position[0];
        let dy = pair[1].position[1] - pair[0].position[1];
        let dz = pair[1].position[2] - pair[0].position[2];
        path_length += (dx * dx + dy * dy + dz * dz).sqrt();
    }

    let speeds: Vec<f64> = log
        .samples
        .iter()
        .map(|s| {
            (s.velocity[0] * s.velocity[0]
                + s.velocity[1] * s.velocity[1]
                + s.velocity[2] * s.velocity[2])
                .sqrt()
        })
        .collect();
    let avg_speed = if speeds.is_empty() {
        0.0
    } else {
        speeds.iter().sum::<f64>() / speeds.len() as f64
    };
    let max_speed = speeds.iter().fold(0.0, |a: f64, &b| a.max(b));

    let min_dist = log
        .samples
        .iter()
        .map(|s| s.signed_distance)
        .fold(f64::INFINITY, f64::min);

    let jerk_integral: f64 = log.steps.iter().map(|s| s.jerk_integral).sum();
    let smoothness = if log.duration > 0.0 {
        jerk_integral / log.duration
    } else {
        0.0
    };

    Metrics {
        latency_ms,
        path_length_m: path_length,
        avg_speed_mps: avg_speed,
        max_speed_mps: max_speed,
        min_dist_m: min_dist,
        smoothness,
        outcome: log.outcome,
    }
}
