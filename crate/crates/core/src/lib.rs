pub mod clustering;
pub mod error;
pub mod field;
pub mod full;
pub mod io;
pub mod kernels;
pub mod lmoments;
pub mod lowrank;
pub mod optim;
pub mod quad;
pub mod rf;
pub mod sblue;
pub mod scalar;
pub mod simgen;
pub mod sparse;
pub mod special;
pub mod tgh;

pub use error::{Error, Result};

/// f64 instantiations of the generic types.
pub type Site = field::Site<f64>;
pub type SiteSet = field::SiteSet<f64>;
pub type GridSpec = field::GridSpec<f64>;
pub type FieldFrame = field::FieldFrame<f64>;
pub type TghParams = tgh::TghParams<f64>;
pub type ExpKernelParams = kernels::ExpKernelParams<f64>;
pub type LMoments = lmoments::LMoments<f64>;
