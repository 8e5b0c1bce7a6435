//! Multi-view hand keypoint annotation and evaluation toolkit.
//!
//! - [`geometry`]: pinhole cameras and crop transforms.
//! - [`triangulation`]: DLT, Gauss-Newton refinement and RANSAC triangulation.
//! - [`heatmap`]: 3D Gaussian joint heatmaps and soft-argmax decoding.
//! - [`pose`]: the 42-joint schema, 2.5D → 3D assembly and pose utilities.
//! - [`objectives`]: loss values and evaluation metrics.
//! - [`dataset_io`]: annotation and prediction documents and their validation.
//! - [`synthrig`]: seeded synthetic rigs, hands, detections and the view sweep.
//! - [`service`]: journaled click-to-triangulate annotation sessions.
//! - [`server`]: the HTTP+JSON API over the annotation service.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset_io;
pub mod geometry;
pub mod heatmap;
pub mod numeric;
pub mod objectives;
pub mod pose;
pub mod server;
pub mod service;
pub mod synthrig;
pub mod triangulation;

/// Version tag written into every document this crate produces.
pub const FORMAT_VERSION: &str = "1";
