//! Geometric multi-object tracking toolkit for counting spherical fruits in
//! calibrated image sequences.
//!
//! The crate covers the full desk-scale pipeline: IoU-cost rectangular
//! assignment, RANSAC triangulation of per-fruit spheres, an occlusion-robust
//! tracker with 3-D relocalization, HOTA / MOTA evaluation, a synthetic-scene
//! generator for sensitivity studies, a feed-forward yield regressor, and the
//! MOT16 / COLMAP file formats that tie the stages together.

pub mod assignment;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod regressor;
pub mod simulator;
pub mod sphere;
pub mod tracker;
