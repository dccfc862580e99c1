//! Numerical toolkit for fast-slow partially hyperbolic torus endomorphisms:
//! cone hyperbolicity checks, inverse branches, transversality counts, transfer
//! operators and spectral diagnostics.

pub mod branches;
pub mod cones;
pub mod error;
pub mod geometry;
pub mod map;
pub mod spectral;
pub mod spline;
pub mod transfer;
pub mod transversality;
pub mod trig;

pub use error::{Result, SvphError};
pub use geometry::{Mat2, Point2, ProjectiveLine};
pub use map::MapSpec;
