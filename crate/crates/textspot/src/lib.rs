//! Set-prediction matching and losses for joint text detection and
//! recognition, plus a desk-scale synthetic training gym and the standard
//! IoU-matched evaluation protocol.
//!
//! The crate is organized around a bipartite matching loss. Ground-truth
//! words are assigned one-to-one to model predictions by minimizing a
//! configurable matching criteria built from classification, box, and
//! transcription terms, and the training loss is evaluated on the matched
//! pairs. The weak variant drops every box term from both the criteria and
//! the loss, so a model can be trained from transcription lists alone while
//! still producing boxes at inference time.
//!
//! Modules:
//! - [`geometry`]: axis-aligned box arithmetic (conversions, IoU, GIoU).
//! - [`alphabet`] / [`scene`] / [`dataset`]: domain types and the
//!   line-delimited dataset format.
//! - [`assignment`]: Hungarian assignment plus a brute-force oracle.
//! - [`cost`] / [`loss`]: the matching criteria and the matching-based
//!   loss with analytic gradients.
//! - [`tape`]: a minimal reverse-mode differentiation tape.
//! - [`model`] / [`world`] / [`train`] / [`experiment`]: the toy model,
//!   synthetic scene generation, trainers, and canned experiments.
//! - [`eval`]: IoU-matched word-spotting / end-to-end evaluation.

pub mod alphabet;
pub mod assignment;
pub mod cost;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod scene;
pub mod tape;
pub mod train;
pub mod world;

mod error;

pub use error::{Error, Result};

pub use alphabet::{Alphabet, Transcription};
pub use assignment::{brute_force_assignment, solve_assignment, CostMatrix, MatchResult};
pub use cost::{build_cost_matrix, CostWeights, MatchMode};
pub use geometry::{giou, iou, CenterSizeBox, CornerBox};
pub use loss::{hungarian_loss, loss_gradients, LossBreakdown, LossWeights};
pub use scene::{GroundTruthInstance, Prediction, Scene, Supervision};
