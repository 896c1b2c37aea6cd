//! Network config JSON.
//!
//! ```json
//! {
//!   "input": {"channels": 1, "height": 64, "width": 64},
//!   "preprocess": {"mean": [0.0], "scale": [1.0]},
//!   "classes": ["background", "square"],
//!   "layers": [
//!     {"name": "conv1", "kind": "conv", "kernel": 3, "stride": 1, "padding": 1,
//!      "out_channels": 2, "weights": "conv1.weight", "bias": "conv1.bias"},
//!     {"name": "relu1", "kind": "relu"},
//!     {"name": "pool1", "kind": "maxpool", "kernel": 2, "stride": 2},
//!     {"name": "flatten", "kind": "flatten"},
//!     {"name": "fc", "kind": "fc", "out_channels": 2, "weights": "fc.weight"},
//!     {"name": "prob", "kind": "softmax"}
//!   ]
//! }
//! ```
//!
//! Conv weights are `[out, in, k, k]`, fc weights `[out, in]`, biases `[out]`.
//! A missing bias means zeros. Stride defaults to 1 and padding to 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::{Tensor, TensorTable};
use crate::error::{Error, Result};
use crate::net::{Conv, Dense, LayerKind, LayerOp, LayerSpec, Network, Preprocess};
use crate::tensor::{Shape3, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input: Shape3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<Preprocess>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub layers: Vec<LayerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

impl LayerConfig {
    fn require<T: Copy>(&self, value: Option<T>, field: &str) -> Result<T> {
        value.ok_or_else(|| Error::Config(format!("layer `{}` needs `{field}`", self.name)))
    }

    fn window(&self) -> Result<Window> {
        Ok(Window::new(
            self.require(self.kernel, "kernel")?,
            self.stride.unwrap_or(1),
            self.padding.unwrap_or(0),
        ))
    }
}

fn fetch<'a>(table: &'a TensorTable, name: &str, expected: &[usize]) -> Result<&'a Tensor> {
    let t = table
        .get(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    if t.dims != expected {
        return Err(Error::TensorShape {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: t.dims.clone(),
        });
    }
    Ok(t)
}

fn bias(table: &TensorTable, layer: &LayerConfig, out: usize) -> Result<Vec<f32>> {
    match &layer.bias {
        Some(name) => Ok(fetch(table, name, &[out])?.data.clone()),
        None => Ok(vec![0.0; out]),
    }
}

impl NetworkConfig {
    /// Wires every layer to its tensors and validates the stack.
    pub fn build(&self, table: &TensorTable) -> Result<Network> {
        let mut shape = self.input;
        let mut layers = Vec::with_capacity(self.layers.len());
        for lc in &self.layers {
            let op = match lc.kind {
                LayerKind::Conv => {
                    let window = lc.window()?;
                    let out = lc.require(lc.out_channels, "out_channels")?;
                    let k = window.kernel;
                    let wname = lc.weights.as_deref().ok_or_else(|| {
                        Error::Config(format!("layer `{}` needs `weights`", lc.name))
                    })?;
                    let weights = fetch(table, wname, &[out, shape.channels, k, k])?
                        .data
                        .clone();
                    LayerOp::Conv(Conv::new(
                        window,
                        shape.channels,
                        out,
                        weights,
                        bias(table, lc, out)?,
                    )?)
                }
                LayerKind::Fc => {
                    let out = lc.require(lc.out_channels, "out_channels")?;
                    let wname = lc.weights.as_deref().ok_or_else(|| {
                        Error::Config(format!("layer `{}` needs `weights`", lc.name))
                    })?;
                    let weights = fetch(table, wname, &[out, shape.len()])?.data.clone();
                    LayerOp::Fc(Dense::new(
                        shape.len(),
                        out,
                        weights,
                        bias(table, lc, out)?,
                    )?)
                }
                LayerKind::MaxPool => LayerOp::MaxPool(lc.window()?),
                LayerKind::AvgPool => LayerOp::AvgPool(lc.window()?),
                LayerKind::Relu => LayerOp::Relu,
                LayerKind::Softmax => LayerOp::Softmax,
                LayerKind::Flatten => LayerOp::Flatten,
            };
            let spec = LayerSpec::new(lc.name.clone(), op);
            // fc-before-flatten and friends are reported by Network::new below
            shape = spec.output_shape(shape).or_else(|e| match spec.kind() {
                LayerKind::Fc => Ok(shape),
                _ => Err(e),
            })?;
            layers.push(spec);
        }
        let net = Network::new(self.input, layers)?;
        match &self.preprocess {
            Some(p) => net.with_preprocess(p.clone()),
            None => Ok(net),
        }
    }

    /// Config plus tensor table for an in-memory network. Tensors are named
    /// `<layer>.weight` and `<layer>.bias`.
    pub fn from_network(net: &Network, classes: Vec<String>) -> Result<(Self, TensorTable)> {
        let mut table = TensorTable::new();
        let mut layers = Vec::with_capacity(net.layers().len());
        for spec in net.layers() {
            let mut lc = LayerConfig {
                name: spec.name.clone(),
                kind: spec.kind(),
                kernel: None,
                stride: None,
                padding: None,
                out_channels: None,
                weights: None,
                bias: None,
            };
            let set_window = |lc: &mut LayerConfig, w: Window| {
                lc.kernel = Some(w.kernel);
                lc.stride = Some(w.stride);
                lc.padding = Some(w.padding);
            };
            let mut add =
                |lc: &mut LayerConfig, dims: Vec<usize>, w: &[f32], b: &[f32]| -> Result<()> {
                    let (wn, bn) = (
                        format!("{}.weight", spec.name),
                        format!("{}.bias", spec.name),
                    );
                    let out = dims[0];
                    table.insert(wn.clone(), Tensor::new(dims, w.to_vec())?)?;
                    table.insert(bn.clone(), Tensor::new(vec![out], b.to_vec())?)?;
                    lc.out_channels = Some(out);
                    lc.weights = Some(wn);
                    lc.bias = Some(bn);
                    Ok(())
                };
            match &spec.op {
                LayerOp::Conv(c) => {
                    set_window(&mut lc, c.window);
                    let k = c.window.kernel;
                    add(
                        &mut lc,
                        vec![c.out_channels, c.in_channels, k, k],
                        &c.weights,
                        &c.bias,
                    )?;
                }
                LayerOp::Fc(d) => add(
                    &mut lc,
                    vec![d.out_features, d.in_features],
                    &d.weights,
                    &d.bias,
                )?,
                LayerOp::MaxPool(w) | LayerOp::AvgPool(w) => set_window(&mut lc, *w),
                LayerOp::Relu | LayerOp::Softmax | LayerOp::Flatten => {}
            }
            layers.push(lc);
        }
        let config = NetworkConfig {
            input: net.input_shape(),
            preprocess: net.preprocess().cloned(),
            classes,
            layers,
        };
        Ok((config, table))
    }
}

pub fn parse_config(text: &str) -> Result<NetworkConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("network config: {e}")))
}

pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Loads a config file and builds it against `weights`.
pub fn load_network(config_path: &Path, weights: &TensorTable) -> Result<Network> {
    load_config(config_path)?.build(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_relu_config() {
        let cfg = parse_config(
            r#"{"input":{"channels":1,"height":2,"width":2},"layers":[{"name":"r","kind":"relu"}]}"#,
        )
        .unwrap();
        let net = cfg.build(&TensorTable::new()).unwrap();
        assert_eq!(net.layers().len(), 1);
    }

    #[test]
    fn missing_tensor() {
        let cfg = parse_config(
            r#"{"input":{"channels":1,"height":4,"width":4},"layers":[
                {"name":"c","kind":"conv","kernel":3,"out_channels":2,"weights":"c.w"}]}"#,
        )
        .unwrap();
        assert!(
            matches!(cfg.build(&TensorTable::new()), Err(Error::MissingTensor(n)) if n == "c.w")
        );
    }

    #[test]
    fn shape_mismatch() {
        let cfg = parse_config(
            r#"{"input":{"channels":1,"height":4,"width":4},"layers":[
                {"name":"c","kind":"conv","kernel":3,"out_channels":2,"weights":"c.w"}]}"#,
        )
        .unwrap();
        let mut t = TensorTable::new();
        t.insert("c.w", Tensor::new(vec![2, 1, 2, 2], vec![0.0; 8]).unwrap())
            .unwrap();
        assert!(matches!(cfg.build(&t), Err(Error::TensorShape { .. })));
    }

    #[test]
    fn fc_before_flatten() {
        let cfg = parse_config(
            r#"{"input":{"channels":1,"height":1,"width":2},"layers":[
                {"name":"fc","kind":"fc","out_channels":1,"weights":"fc.w"}]}"#,
        )
        .unwrap();
        let mut t = TensorTable::new();
        t.insert("fc.w", Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert!(matches!(cfg.build(&t), Err(Error::Network(m)) if m.contains("before flatten")));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse_config(
            r#"{"input":{"channels":1,"height":1,"width":1},"layers":[],"extra":1}"#
        )
        .is_err());
        assert!(parse_config(
            r#"{"input":{"channels":1,"height":1,"width":1},"layers":[{"name":"x","kind":"lrn"}]}"#
        )
        .is_err());
    }

    #[test]
    fn from_network_round_trips() {
        let net = Network::new(
            Shape3::new(1, 4, 4),
            vec![
                LayerSpec::conv_uniform("c", 1, 2, 3, 1, 1, 0.5),
                LayerSpec::max_pool("p", 2, 2, 0),
                LayerSpec::flatten("f"),
                LayerSpec::new(
                    "fc",
                    LayerOp::Fc(Dense::new(8, 3, vec![0.25; 24], vec![1.0, 2.0, 3.0]).unwrap()),
                ),
            ],
        )
        .unwrap();
        let (cfg, table) = NetworkConfig::from_network(&net, vec![]).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let rebuilt = parse_config(&text).unwrap().build(&table).unwrap();
        assert_eq!(rebuilt, net);
    }
}
