//! Reconstruction of smooth, simulation-ready tubular surface meshes from
//! volumetric images.
//!
//! The shape is decomposed into a centerline and a stack of cross-sectional
//! lumen contours. Contours are extracted on planes orthogonal to the
//! centerline, put into point-to-point correspondence, and skinned with a
//! cubic NURBS surface that is tessellated into a closed triangle mesh.
//! Synthetic phantoms with analytic ground truth, a marching-cubes baseline,
//! point-set and mask metrics, and a small volume-conditioned diffusion
//! model for centerline generation round out the crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdm;
pub mod centerline;
pub mod contours;
mod error;
pub mod fmt;
pub mod lumenseg;
pub mod meshkit;
pub mod metrics;
pub mod nurbs;
pub mod phantom;
pub mod pipeline;
pub mod slicer;
pub mod volume;

pub use centerline::{CenterlineImage, CenterlinePolyline, LocalFrame};
pub use error::{Error, Result};
pub use lumenseg::{Contour, ContourSpace, Mask};
pub use meshkit::{TopologyReport, TriMesh};
pub use nurbs::{KnotVector, NurbsCurve, NurbsSurface};
pub use phantom::{PhantomShape, PhantomSpec};
pub use slicer::{Slice, SlicePlane};
pub use volume::Volume;

/// World-space point or direction, millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
