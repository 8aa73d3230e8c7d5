//! Artistic typography synthesis: glyph outline extraction, differentiable
//! rasterization, silhouette-driven glyph deformation, and the pipeline that
//! stylizes, scores and texturizes the results through pluggable generative
//! backends.

pub mod diffrast;
pub mod fontparse;
pub mod genbackends;
pub mod geom;
pub mod image;
pub mod orchestrator;
pub mod planner;
pub mod semtypo;
pub mod shapeparam;
