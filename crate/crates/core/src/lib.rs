//! Spurious local minima of networks with locally affine activations:
//! explicit construction, certification and escape, plus tools for the
//! geometry of the set of realizable output vectors.

pub mod activation;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod net;
pub mod optim;
pub mod par;
pub mod spurious;
pub mod verify;

pub use activation::{ActivationKind, AffineSegment, SpaceFillingActivation};
pub use error::{Error, Result};
pub use loss::{Dataset, FiniteMeasure, LossSpec, Target, TargetClass};
pub use net::{AffineMap, Architecture, Layer, Parameters};
pub use par::Exec;
pub use spurious::{SpuriousConstruction, Variant};
