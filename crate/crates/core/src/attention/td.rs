use rayon::prelude::*;
use serde::Serialize;

use super::ps::{ps_activities, PsField};
use super::select::{
    bridge_select, stage1_pwta, stage2_sc, stage2_si, stage3_propagate, strongest,
};
use super::SelectionConfig;
use crate::error::{Error, Result};
use crate::net::{ActivationTrace, LayerKind, LayerOp, Network};
use crate::tensor::GatingVolume;

/// Per-layer statistics of one top-down step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTrace {
    pub layer: String,
    pub kind: LayerKind,
    /// Active gating nodes in the upper volume.
    pub active_top: usize,
    /// Active nodes whose PS field had no positive entry.
    pub dead_nodes: usize,
    pub dead_mass: f64,
    pub stage1_winners: usize,
    pub stage2_winners: usize,
    pub theta_mean: f64,
    pub theta_max: f64,
    pub mass_top: f64,
    /// Lower-volume mass right after propagation, before bridge pruning.
    pub mass_lower: f64,
    /// Mass removed by bridge pruning, when this step filled the bridge volume.
    pub bridge_pruned: Option<f64>,
    pub active_lower: usize,
}

#[derive(Debug, Clone)]
pub struct TdOutcome {
    /// Volume index the pass stopped at.
    pub stop: usize,
    /// Gating volumes `stop..=top`, indexed by `volume - stop`.
    pub volumes: Vec<GatingVolume>,
    /// One entry per traversed layer, top-down.
    pub layers: Vec<LayerTrace>,
}

impl TdOutcome {
    pub fn gating(&self) -> &GatingVolume {
        &self.volumes[0]
    }

    pub fn volume(&self, index: usize) -> Option<&GatingVolume> {
        index
            .checked_sub(self.stop)
            .and_then(|i| self.volumes.get(i))
    }

    /// Fraction of traversed gating nodes that ended up active.
    pub fn active_fraction(&self) -> f64 {
        let total: usize = self.volumes.iter().map(|g| g.shape().len()).sum();
        let active: usize = self.volumes.iter().map(|g| g.active_count()).sum();
        active as f64 / total as f64
    }
}

struct NodeSelection {
    top: usize,
    activity: f64,
    outcome: Option<(PsField, Vec<usize>, usize, f64)>,
}

/// Runs the top-down pass for class `class_k` from the top volume down to
/// `config.stop_layer`.
pub fn td_pass(
    trace: &ActivationTrace,
    net: &Network,
    class_k: usize,
    config: &SelectionConfig,
) -> Result<TdOutcome> {
    config.validate()?;
    let shapes = net.shapes();
    if trace.len() != shapes.len()
        || trace
            .volumes()
            .iter()
            .zip(shapes)
            .any(|(v, s)| v.shape() != *s)
    {
        return Err(Error::Shape(
            "activation trace does not belong to this network".into(),
        ));
    }
    let stop = net.volume_index(&config.stop_layer)?;
    let top = shapes.len() - 1;
    let bridge_volume = net.bridge().map(|b| b + 1);

    let mut current = GatingVolume::one_hot(shapes[top], class_k)?;
    let mut volumes = Vec::with_capacity(top - stop + 1);
    let mut layers = Vec::with_capacity(top - stop);

    for upper in (stop + 1..=top).rev() {
        let layer_index = upper - 1;
        let spec = &net.layers()[layer_index];
        let lower_shape = shapes[layer_index];
        let mass_top = current.mass();
        let active_top = current.active_count();

        let mut record = LayerTrace {
            layer: spec.name.clone(),
            kind: spec.kind(),
            active_top,
            dead_nodes: 0,
            dead_mass: 0.0,
            stage1_winners: 0,
            stage2_winners: 0,
            theta_mean: 0.0,
            theta_max: 0.0,
            mass_top,
            mass_lower: mass_top,
            bridge_pruned: None,
            active_lower: 0,
        };

        let mut lower = match spec.op {
            LayerOp::Relu | LayerOp::Softmax | LayerOp::Flatten => {
                current.clone().reshape_into(lower_shape)
            }
            _ => {
                let spatial = spec.spatial_window().is_some();
                let active: Vec<(usize, f64)> = current
                    .active_indices()
                    .map(|i| (i, current.data()[i]))
                    .collect();
                let selections = active
                    .par_iter()
                    .map(|&(i, activity)| -> Result<NodeSelection> {
                        let ps = ps_activities(trace, net, layer_index, i)?;
                        let outcome = stage1_pwta(&ps, config.epsilon).map(|s1| {
                            let w2 = match (config.stage2, spatial) {
                                (true, true) => stage2_sc(&s1.winners, &ps, config.sc_alpha),
                                (true, false) => stage2_si(&s1.winners, &ps, config.offset_fc),
                                (false, true) => s1.winners.clone(),
                                (false, false) => strongest(&s1.winners, &ps),
                            };
                            (ps, w2, s1.winners.len(), s1.theta)
                        });
                        Ok(NodeSelection {
                            top: i,
                            activity,
                            outcome,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;

                // ordered reduction: scan order of the upper volume
                let mut lower = GatingVolume::zeros(lower_shape);
                let mut live = 0usize;
                let mut theta_sum = 0.0;
                for sel in &selections {
                    match &sel.outcome {
                        Some((ps, w2, n1, theta)) => {
                            live += 1;
                            record.stage1_winners += n1;
                            record.stage2_winners += w2.len();
                            theta_sum += theta;
                            record.theta_max = record.theta_max.max(*theta);
                            stage3_propagate(sel.activity, w2, ps, &mut lower);
                        }
                        None => {
                            record.dead_nodes += 1;
                            record.dead_mass += sel.activity;
                            log::debug!("dead gating node {} at `{}`", sel.top, spec.name);
                        }
                    }
                }
                if live == 0 {
                    return Err(Error::TdDied(spec.name.clone()));
                }
                record.theta_mean = theta_sum / live as f64;
                record.mass_lower = lower.mass();
                lower
            }
        };

        if Some(layer_index) == bridge_volume {
            if let Some(offset) = config.offset_bridge {
                let pruned = bridge_select(&mut lower, offset)
                    .map_err(|_| Error::TdDied(spec.name.clone()))?;
                record.bridge_pruned = Some(pruned);
            }
        }
        record.active_lower = lower.active_count();
        layers.push(record);
        volumes.push(std::mem::replace(&mut current, lower));
    }
    volumes.push(current);
    volumes.reverse();
    Ok(TdOutcome {
        stop,
        volumes,
        layers,
    })
}
