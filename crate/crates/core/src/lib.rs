//! Geometry toolkit for orientation-sensitive keypoint representations of
//! rotated objects.
//!
//! - [`geom`]: validated quads, keypoints, exact and raster IoU
//! - [`reorder`]: canonical vertex order and angle statistics
//! - [`codec`]: keypoint heatmap encoding, BCE loss, decoding
//! - [`attn`]: sampling patterns and feature fusion masks
//! - [`evalkit`]: matching, AP/mAP, rotated NMS
//! - [`dataio`]: DOTA parsing, dataset files, synthetic scenes

pub mod attn;
pub mod codec;
pub mod dataio;
pub mod evalkit;
pub mod geom;
pub mod reorder;
pub mod rng;

pub use codec::{decode, encode, DecodeConfig, Decoded, Heatmap, HeatmapMode, OshConfig, Roi};
pub use evalkit::{ApMethod, Detection, EvalResult, GroundTruth, MatchLabel};
pub use geom::{iou_exact, iou_pixel, keypoints_from_quad, GeomError, KeypointSet, Point2, Quad};
pub use reorder::{reorder_keypoints, AngleHistogram, ReorderConfig};
