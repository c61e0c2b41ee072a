//! Parallel Delaunay refinement of labeled 3D images.

pub mod cli;
pub mod decomp;
pub mod delaunay;
pub mod geom;
pub mod image;
pub mod metrics;
pub mod mw;
pub mod pipeline;
pub mod podm;
