//! Reconstruction of locally controlled, globally smooth ground surfaces
//! z = g(x, y) from terrestrial point clouds.
//!
//! The pipeline has three stages:
//!
//! 1. **Local models** ([`grid_model`]): the cloud is scaled onto a unit
//!    grid and a total least-squares plane ("slope") is fitted per cell;
//!    undersampled cells stay holes.
//! 2. **Hole filling**: either hierarchically ([`grid_model::build_pyramid`]
//!    and [`grid_model::fill_holes_hierarchical`]) by coarsening slopes 2×
//!    until no holes remain and projecting them back down, or globally by
//!    Hermite RBF interpolation of the slope heights and gradients
//!    ([`hrbf`]).
//! 3. **Blending** ([`pu_surface`]): the hole-free slopes are combined by a
//!    tensor-product partition of unity, either cubic-B-spline based (C²)
//!    or exponential (C∞), into an evaluable surface with local control.
//!
//! [`cloud_io`] covers XYZ/CSV/OBJ interchange and detrending; [`synth`]
//! generates reproducible synthetic terrains for tests and demos.

pub mod cloud_io;
pub mod error;
pub mod grid_model;
pub mod hrbf;
pub mod pu_surface;
pub mod synth;

pub use cloud_io::{GridTransform, PointCloud};
pub use error::{Error, Result};
pub use grid_model::{CellAccumulator, FitParams, Slope, SlopeGrid, SlopePyramid};
pub use hrbf::{HermiteData, HrbfConfig, HrbfModel};
pub use pu_surface::{CompiledSurface, GroundSurface, PuBasis, Raster};
pub use synth::{HoleRect, Terrain, TerrainParams};
