//! Training-set generation: collision-free poses with forward-biased
//! orientations, rendered depth, and goals sampled a few meters ahead.

use super::{mix_seed, HarnessError};
use crate::camera::{render_depth, BodyPose, CameraExtrinsics, Intrinsics};
use crate::micronet::TrainFrame;
use crate::primitives::KinodynamicState;
use crate::world::{generate_world, World, WorldGenConfig};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub world_seeds: Vec<u64>,
    pub frames_per_world: usize,
    /// Minimum pose clearance, meters.
    pub clearance: f64,
    /// Goal distance range ahead of the pose, meters.
    pub goal_distance: (f64, f64),
    /// Speed scale for sampled velocities.
    pub v_max: f64,
    pub max_range: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            world_seeds: vec![1, 2, 3, 4],
            frames_per_world: 16,
            clearance: 0.6,
            goal_distance: (3.0, 8.0),
            v_max: 2.0,
            max_range: 5.0,
        }
    }
}

/// Generate `world_seeds.len() * frames_per_world` frames, deterministic
/// per seed. Every stored pose has true-world clearance at least
/// `config.clearance`.
pub fn generate_dataset(
    config: &DatasetConfig,
    world_gen: &WorldGenConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
) -> Result<Vec<TrainFrame>, HarnessError> {
    let mut frames = Vec::with_capacity(config.world_seeds.len() * config.frames_per_world);
    for &seed in &config.world_seeds {
        let world = generate_world(world_gen, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xDA7A));
        for frame_index in 0..config.frames_per_world {
            let frame = sample_frame(&world, config, intr, extr, &mut rng).ok_or_else(|| {
                HarnessError::InfeasibleStartGoal(format!(
                    "no free pose found for dataset frame {frame_index} of world {seed}"
                ))
            })?;
            frames.push(frame);
        }
    }
    Ok(frames)
}

fn sample_frame(
    world: &World,
    config: &DatasetConfig,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    rng: &mut ChaCha8Rng,
) -> Option<TrainFrame> {
    let e = world.extent;
    for _ in 0..1000 {
        let position = Vector3::new(
            rng.random_range(2.0..e[0] - 2.0),
            rng.random_range(2.0..e[1] - 2.0),
            rng.random_range(1.5..e[2] - 1.5),
        );
        if world.signed_distance(&position) < config.clearance {
            continue;
        }
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let state = KinodynamicState {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw,
        };
        let rot = state.yaw_rotation();

        // Forward-biased goal a few meters ahead.
        let azimuth = rng.random_range(-45.0f64.to_radians()..45.0f64.to_radians());
        let elevation = rng.random_range(-15.0f64.to_radians()..15.0f64.to_radians());
        let distance = rng.random_range(config.goal_distance.0..config.goal_distance.1);
        let dir = rot
            * Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
        let goal = position + distance * dir;
        if !world.contains(&goal) {
            continue;
        }

        // Forward-biased velocity and a mild acceleration.
        let v_az = rng.random_range(-30.0f64.to_radians()..30.0f64.to_radians());
        let v_mag = rng.random_range(0.0..0.8 * config.v_max);
        let velocity = rot * Vector3::new(v_az.cos() * v_mag, v_az.sin() * v_mag, 0.0);
        let acceleration = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        );
        let state = KinodynamicState {
            velocity,
            acceleration,
            ..state
        };
        let pose = BodyPose::from_position_yaw(position, yaw);
        let image = render_depth(world, &pose, intr, extr, config.max_range);
        return Some(TrainFrame { image, state, goal });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> (DatasetConfig, WorldGenConfig) {
        (
            DatasetConfig {
                world_seeds: vec![5, 6],
                frames_per_world: 3,
                ..DatasetConfig::default()
            },
            WorldGenConfig {
                wall_count: 40,
                ..WorldGenConfig::default()
            },
        )
    }

    #[test]
    fn dataset_size_is_worlds_times_frames() {
        let (config, world_gen) = small_config();
        let frames = generate_dataset(
            &config,
            &world_gen,
            &Intrinsics::default(),
            &CameraExtrinsics::default(),
        )
        .unwrap();
        assert_eq!(frames.len(), 6);
    }

    #[test]
    fn dataset_is_deterministic() {
        let (config, world_gen) = small_config();
        let intr = Intrinsics::default();
        let extr = CameraExtrinsics::default();
        let a = generate_dataset(&config, &world_gen, &intr, &extr).unwrap();
        let b = generate_dataset(&config, &world_gen, &intr, &extr).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.image, fb.image);
            assert_eq!(fa.state, fb.state);
            assert_eq!(fa.goal, fb.goal);
        }
    }

    #[test]
    fn poses_are_collision_free() {
        let (config, world_gen) = small_config();
        let frames = generate_dataset(
            &config,
            &world_gen,
            &Intrinsics::default(),
            &CameraExtrinsics::default(),
        )
        .unwrap();
        for (i, frame) in frames.iter().enumerate() {
            let world_index = i / config.frames_per_world;
            let world =
                generate_world(&world_gen, config.world_seeds[world_index]).unwrap();
            assert!(world.signed_distance(&frame.state.position) >= config.clearance);
        }
    }
}
