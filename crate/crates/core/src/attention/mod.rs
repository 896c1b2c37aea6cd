//! Top-down selective tuning.
//!
//! Starting from a one-hot gating vector at the class layer, each active
//! gating node looks at its post-synaptic (PS) field in the layer below and
//! keeps a small set of winners:
//!
//! 1. parametric WTA with an activity-preserving margin,
//! 2. grouping: statistical (SI) at fully-connected layers, spatially
//!    contiguous (SC) at convolution and pooling layers,
//! 3. propagation of its activity to the winners, weighted by their share of
//!    the winners' PS sum.
//!
//! Relu, softmax and flatten layers copy gating through unchanged.

mod ps;
mod regions;
mod select;
mod td;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ps::{ps_activities, PsField};
pub use regions::{label_regions, region_score, winning_region};
pub use select::{
    ap_threshold, bridge_select, si_select, stage1_pwta, stage2_sc, stage2_si, stage3_propagate,
    strongest, Stage1, SI_COEFFICIENTS,
};
pub use td::{td_pass, LayerTrace, TdOutcome};

/// Hyperparameters of the selection process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Target of the activity-preserving buffer in stage 1.
    pub epsilon: f64,
    /// SI loosening offset at fully-connected layers.
    pub offset_fc: usize,
    /// SI loosening offset for the bridge pruning pass; `None` disables it.
    pub offset_bridge: Option<usize>,
    /// Trade-off between PS sum and region size in SC grouping.
    pub sc_alpha: f64,
    /// With stage 2 disabled, fc layers keep only the strongest winner and
    /// spatial layers keep every stage-1 winner.
    pub stage2: bool,
    /// Layer whose gating volume the pass stops at (`"input"` for the image).
    pub stop_layer: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            offset_fc: 3,
            offset_bridge: Some(3),
            sc_alpha: 0.2,
            stage2: true,
            stop_layer: "pool1".into(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sc_alpha) {
            return Err(Error::Config(format!(
                "sc_alpha {} outside [0, 1]",
                self.sc_alpha
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon {} must be finite and >= 0",
                self.epsilon
            )));
        }
        Ok(())
    }
}
