//! Monocular dense SLAM core: contracted unbounded-scene Gaussian encoding,
//! SDF volume rendering with depth-distillation losses, depth-supervised
//! Gauss-Newton tracking with Schur elimination, Sim3 loop closure, and the
//! synthetic-scene oracles that exercise all of it on a desktop CPU.

pub mod cone_encoding;
pub mod field_renderer;
pub mod geometry;
pub mod image;
pub mod keyframe;
pub mod loop_closure;
pub mod sampling;
pub mod tracking_ba;
pub mod scene_sim;
