//! Geometric-consistency losses for joint depth and normal estimation.
//!
//! The crate covers pinhole geometry and plane-induced depth, texture partitioning,
//! the single-view and multi-view consistency losses, analytic test scenes, and a
//! small gradient-descent refiner used to exercise the losses end to end.

pub mod error;
pub mod field;
pub mod geom;
pub mod io;
pub mod mv_loss;
pub mod optim;
pub mod partition;
pub mod sum;
pub mod sv_loss;
pub mod synth;

pub use error::{Error, Result};
pub use field::{Image, RegionLabel, RegionMask, ScalarField, Vec3, VectorField};
pub use geom::{
    backproject_depth, normal_from_depth, transform_points, unbiased_depth, Camera, DepthNormals, Pose,
    UnbiasedDepth,
};
pub use mv_loss::{mvgeo_loss, MvConfig, MvOutput, MvReport, MvView, SampleSet};
pub use partition::{depth_weight_map, gradient_magnitude, percentile_threshold, sobel_gradients, texture_partition, trust_region};
pub use sv_loss::{svgeo_loss, SvConfig, SvInputs, SvLossReport};
pub use synth::{corrupt, render_scene, Noise, SceneKind, SceneSpec, Surface, Texture, ViewBundle};
