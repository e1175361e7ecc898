//! Object-partitioned Gaussian splatting.
//!
//! A scene is a set of 3D Gaussians, each labeled with an object id at three granularities
//! (large, middle, small). The crate covers consolidation of tracked 2D masks, per-object
//! initialization, a differentiable tile rasterizer, staged training with an object loss,
//! CLIP-style embedding association and open-vocabulary queries over the trained objects.

pub mod error;
pub mod image;
pub mod init;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod semantics;
pub mod synthetic;
pub mod tracking;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
pub use model::{Camera, Gaussian, Granularity, IdMap, Mask, ObjectIds, ObjectSet, SceneModel, TrackedMasks, BACKGROUND};
