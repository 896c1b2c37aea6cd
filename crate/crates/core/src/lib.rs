//! Selective-tuning attention over sequential convolutional networks.
//!
//! A bottom-up pass ([`net`]) records every layer's activations. A top-down
//! pass ([`attention`]) then starts from a class label and sparsely activates
//! a gating hierarchy, layer by layer, through a three-stage winner selection.
//! The gating volume at an intermediate layer is collapsed into an attention
//! map from which [`localize`] proposes a bounding box and [`chviz`] renders
//! class-hypothesis maps.

pub mod attention;
pub mod chviz;
pub mod cli;
pub mod error;
pub mod localize;
pub mod model_io;
pub mod net;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{ActivationTrace, LayerSpec, Network};
pub use tensor::{FeatureVolume, GatingVolume, RfGeometry, Shape3};
