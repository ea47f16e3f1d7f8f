//! The optimizable Gaussian scene and its projection to the screen.

pub mod camera;
pub mod gaussian;
pub mod init;
pub mod ply;
pub mod project;
pub mod sh;

pub use camera::{BayerPattern, Camera};
pub use gaussian::{logit, sigmoid, Gaussian3D, GaussianCloud, ParamFamily, ParamLayout};
pub use init::{init_from_points, init_random, ColoredPoint, InitOptions};
pub use ply::{read_ply, write_ply};
pub use project::{build_covariance, project, ProjectedSplat, Shading, ViewTransform};
pub use sh::sh_to_color;
