//! # kio
//!
//! A desk-scale, fully testable implementation of an attention-guided
//! single-stage UAV local planner: closed-form quintic motion primitives, a
//! tanh physical-bounds mapping, a deterministic depth-pixel safety shield,
//! an unsupervised trajectory objective with analytic gradients, a minimal
//! CNN/attention engine, and a seeded wall-dense simulation harness.
//!
//! The pipeline at a glance:
//!
//! 1. [`world`] generates wall-dense environments and answers exact
//!    signed-distance and ray queries.
//! 2. [`camera`] renders metric depth frames and projects world points
//!    into them.
//! 3. [`micronet`] (or a seeded sampler in [`planner`]) proposes candidate
//!    terminal states with confidences.
//! 4. [`shield`] bounds raw outputs to the physical envelope and rejects
//!    candidates that breach the observed depth margin.
//! 5. [`primitives`] turns terminal states into closed-form quintics.
//! 6. [`objectives`] scores candidate sets for training; [`harness`] runs
//!    closed-loop trials and reports metrics.
//!
//! The book under `book/` walks through each concept with runnable
//! examples; those snippets compile as doc-tests of this crate.

pub mod camera;
pub mod config;
pub mod harness;
pub mod micronet;
pub mod objectives;
pub mod planner;
pub mod primitives;
pub mod shield;
pub mod world;

pub use config::AppConfig;

// The guide chapters double as doc-tests so the book's code can never rot.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/worlds-and-sensing.md")]
    mod worlds_and_sensing {}
    #[doc = include_str!("../../../book/src/quintic-primitives.md")]
    mod quintic_primitives {}
    #[doc = include_str!("../../../book/src/safety-shield.md")]
    mod safety_shield {}
    #[doc = include_str!("../../../book/src/objectives-and-training.md")]
    mod objectives_and_training {}
    #[doc = include_str!("../../../book/src/attention-backbone.md")]
    mod attention_backbone {}
    #[doc = include_str!("../../../book/src/planning-and-simulation.md")]
    mod planning_and_simulation {}
}
