//! Multi-view hand pose annotation engine.
//!
//! The crate covers the whole annotation and learning loop for egocentric
//! hand poses captured by a small camera rig:
//!
//! 1. [`hand_model`] – a 21-joint forward-kinematics hand skeleton with joint
//!    limits and a limit penalty.
//! 2. [`camera_geometry`] – pinhole cameras, marker-cube pose hypotheses,
//!    RANSAC consensus over them, and DLT triangulation.
//! 3. [`skeleton_fitter`] – Levenberg–Marquardt fitting of the hand model to
//!    weighted multi-view 2D detections.
//! 4. [`synth_oracle`] – seeded synthetic scenes that stand in for a learned
//!    keypoint detector, including geometric occlusions and the annotation
//!    bootstrapping loop.
//! 5. [`dataset_pairs`] – occluded/clean pairs sharing one ground truth and
//!    the batch planner used for paired training.
//! 6. [`mlp`] – a small from-scratch perceptron used for 2D→3D lifting and
//!    grasp classification.
//! 7. [`metrics_eval`] – PCK curves, AUC, mean 3D error and confusion matrices.

pub mod camera_geometry;
pub mod dataset_pairs;
pub mod geometry2d;
pub mod hand_model;
pub mod jsonio;
pub mod lm;
pub mod metrics_eval;
pub mod mlp;
pub mod rng;
pub mod skeleton_fitter;
pub mod synth_oracle;
