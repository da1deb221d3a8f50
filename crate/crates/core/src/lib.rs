//! Signature-based generative path synthesis.
//!
//! Marcus signatures of time-extended càdlàg paths, a whitened Nyström
//! geometry with rank-1 precision updates, and a jump-diffusion sampler
//! whose drift and jump intensity descend a moving-target MMD loss. Herding,
//! entropic tilting and bound diagnostics sit on the same geometry.

pub mod avnsg;
pub mod bounds;
pub mod bridge;
pub mod error;
pub mod flow;
pub mod herding;
pub mod linalg;
pub mod path;
pub mod rng;
pub mod signature;
pub mod suite;
pub mod synthgen;
pub mod tensor;

pub use avnsg::{Features, Geometry, GeometrySnapshot, NystromBasis, PrecisionState};
pub use bridge::GibbsTilt;
pub use error::{Error, Result};
pub use flow::{EnsembleState, FlowConfig, Mode, ProxyTrajectory};
pub use herding::HerdingResult;
pub use path::{CadlagPath, PathEnsemble};
pub use synthgen::{MertonParams, RegimeSwitchParams};
pub use tensor::{TensorSeries, Word};
