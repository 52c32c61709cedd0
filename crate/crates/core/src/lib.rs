pub mod analysis;
pub mod cli;
pub mod curvature;
pub mod flow;
pub mod geometry;
pub mod kernel;
pub mod perimeter;
pub mod quad;
