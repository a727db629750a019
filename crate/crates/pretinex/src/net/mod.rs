//! Declarative layer graphs for the two perception networks, their
//! parameters, and shape inference.
//!
//! IM-Net estimates per-patch illumination through two parallel branches
//! (full and half resolution), each holding two parallel conv+pool units.
//! NM-Net estimates the per-patch noise level through a single chain.
//! Both consume a 4-channel 32x32 input: RGB plus one broadcast feedback
//! channel carrying the other network's previous estimate.

pub mod eval;
pub mod serial;
pub mod train;

use crate::error::{Error, Result};
use crate::tensor::ops::ConvParams;
use crate::tensor::optim::{
    msra_init, DEFAULT_BASE_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY,
};
use crate::tensor::Shape4;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::collections::BTreeMap;

pub const PATCH_SIZE: usize = 32;

/// Which network a spec or parameter file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// Illumination estimation (IM-Net).
    Im = 0,
    /// Noise level estimation (NM-Net).
    Nm = 1,
}

impl NetKind {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(NetKind::Im),
            1 => Ok(NetKind::Nm),
            other => Err(Error::ModelFormat(format!("unknown network id {other}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NetKind::Im => "IM",
            NetKind::Nm => "NM",
        }
    }
}

/// What a graph node computes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    PointwiseConv { c_in: usize, c_out: usize },
    MaxPool { kh: usize, kw: usize, stride: usize, pad: usize },
    Relu,
    Concat,
    Downsample { factor: usize },
}

/// Where a node reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Input,
    Node(usize),
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeRef>,
}

/// An acyclic layer graph with a single scalar-shaped sink. Nodes may only
/// reference earlier nodes, so the vector order is a topological order.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub kind: NetKind,
    pub input_channels: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Index of the sink node.
    pub fn output(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_shape(&self) -> Shape4 {
        Shape4::new(1, self.input_channels, self.input_size, self.input_size)
    }

    /// Names of the conv layers in graph (table) order.
    pub fn conv_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::PointwiseConv { .. }))
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Infers the (c, h, w) shape of every node, validating the graph on
    /// the way: unique names, forward-only references, single-consumer
    /// sink, and a (1, 1, 1) output.
    pub fn infer_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut names = std::collections::BTreeSet::new();
        for l in &self.layers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name {}", l.name)));
            }
        }
        let input = (self.input_channels, self.input_size, self.input_size);
        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(self.layers.len());
        let mut consumed = vec![false; self.layers.len()];
        for (idx, l) in self.layers.iter().enumerate() {
            let mut ins = Vec::new();
            for r in &l.inputs {
                match *r {
                    NodeRef::Input => ins.push(input),
                    NodeRef::Node(j) => {
                        if j >= idx {
                            return Err(Error::Config(format!(
                                "layer {} references a later node",
                                l.name
                            )));
                        }
                        consumed[j] = true;
                        ins.push(shapes[j]);
                    }
                }
            }
            let out = match &l.kind {
                LayerKind::PointwiseConv { c_in, c_out } => {
                    let (c, h, w) = single(&ins, l)?;
                    if c != *c_in {
                        return Err(Error::shape(
                            format!("layer {}", l.name),
                            format!("{c_in} input channels"),
                            c,
                        ));
                    }
                    (*c_out, h, w)
                }
                LayerKind::MaxPool { kh, kw, stride, pad } => {
                    let (c, h, w) = single(&ins, l)?;
                    let oh = pooled(h, *kh, *stride, *pad, &l.name)?;
                    let ow = pooled(w, *kw, *stride, *pad, &l.name)?;
                    (c, oh, ow)
                }
                LayerKind::Relu => single(&ins, l)?,
                LayerKind::Concat => {
                    if ins.len() < 2 {
                        return Err(Error::Config(format!(
                            "layer {} needs at least two inputs",
                            l.name
                        )));
                    }
                    let (_, h, w) = ins[0];
                    if ins.iter().any(|&(_, ih, iw)| ih != h || iw != w) {
                        return Err(Error::shape(
                            format!("layer {}", l.name),
                            format!("uniform spatial dims {h}x{w}"),
                            "mismatched branch sizes",
                        ));
                    }
                    (ins.iter().map(|&(c, _, _)| c).sum(), h, w)
                }
                LayerKind::Downsample { factor } => {
                    let (c, h, w) = single(&ins, l)?;
                    if *factor == 0 || h % factor != 0 || w % factor != 0 {
                        return Err(Error::Config(format!(
                            "layer {}: downsample factor {factor} does not divide {h}x{w}",
                            l.name
                        )));
                    }
                    (c, h / factor, w / factor)
                }
            };
            shapes.push(out);
        }
        if shapes.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if *consumed.last().unwrap() {
            return Err(Error::Config("sink node is consumed by another layer".into()));
        }
        if consumed[..self.layers.len() - 1].iter().any(|c| !c) {
            return Err(Error::Config("network has a dangling (unconsumed) node".into()));
        }
        let sink = *shapes.last().unwrap();
        if sink != (1, 1, 1) {
            return Err(Error::shape("network sink", "1x1x1", format!("{}x{}x{}", sink.0, sink.1, sink.2)));
        }
        Ok(shapes)
    }

    /// (c_in, c_out) of a conv layer by name.
    pub fn conv_dims(&self, name: &str) -> Option<(usize, usize)> {
        self.layers.iter().find(|l| l.name == name).and_then(|l| match l.kind {
            LayerKind::PointwiseConv { c_in, c_out } => Some((c_in, c_out)),
            _ => None,
        })
    }
}

fn single(ins: &[(usize, usize, usize)], l: &LayerSpec) -> Result<(usize, usize, usize)> {
    if ins.len() != 1 {
        return Err(Error::Config(format!("layer {} expects exactly one input", l.name)));
    }
    Ok(ins[0])
}

fn pooled(dim: usize, k: usize, stride: usize, pad: usize, name: &str) -> Result<usize> {
    let span = dim + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::Config(format!(
            "layer {name}: pooling {k}/{stride}/{pad} does not tile dim {dim}"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Builds the illumination network. The full-resolution branch holds two
/// parallel conv+pool units (16/16/0 and 20/16/2); the half-resolution
/// branch downsamples by two and holds units 8/8/0 and 10/8/1. The four
/// 160x2x2 results concatenate into 640x2x2, reduce through Conv-DR1 and a
/// 2x2 pool, and Conv6 maps 80 channels to the scalar estimate. Every conv
/// except the regression head is followed by ReLU.
pub fn build_im_net(input_channels: usize) -> NetworkSpec {
    assert!(
        input_channels == 3 || input_channels == 4,
        "illumination net supports 3- or 4-channel input"
    );
    let mut layers = Vec::new();
    let unit = |layers: &mut Vec<LayerSpec>,
                    tag: &str,
                    src: NodeRef,
                    c_in: usize,
                    pool: (usize, usize, usize)| {
        layers.push(LayerSpec {
            name: format!("Conv-{tag}"),
            kind: LayerKind::PointwiseConv { c_in, c_out: 160 },
            inputs: vec![src],
        });
        layers.push(LayerSpec {
            name: format!("ReLU-{tag}"),
            kind: LayerKind::Relu,
            inputs: vec![NodeRef::Node(layers.len() - 1)],
        });
        layers.push(LayerSpec {
            name: format!("MaxPool-{tag}"),
            kind: LayerKind::MaxPool { kh: pool.0, kw: pool.0, stride: pool.1, pad: pool.2 },
            inputs: vec![NodeRef::Node(layers.len() - 1)],
        });
        layers.len() - 1
    };
    let bp1 = unit(&mut layers, "BP1", NodeRef::Input, input_channels, (16, 16, 0));
    let bp2 = unit(&mut layers, "BP2", NodeRef::Input, input_channels, (20, 16, 2));
    layers.push(LayerSpec {
        name: "Downsample".into(),
        kind: LayerKind::Downsample { factor: 2 },
        inputs: vec![NodeRef::Input],
    });
    let half = NodeRef::Node(layers.len() - 1);
    let bp3 = unit(&mut layers, "BP3", half, input_channels, (8, 8, 0));
    let bp4 = unit(&mut layers, "BP4", half, input_channels, (10, 8, 1));
    layers.push(LayerSpec {
        name: "Concat".into(),
        kind: LayerKind::Concat,
        inputs: vec![NodeRef::Node(bp1), NodeRef::Node(bp2), NodeRef::Node(bp3), NodeRef::Node(bp4)],
    });
    layers.push(LayerSpec {
        name: "Conv-DR1".into(),
        kind: LayerKind::PointwiseConv { c_in: 640, c_out: 80 },
        inputs: vec![NodeRef::Node(layers.len() - 1)],
    });
    layers.push(LayerSpec {
        name: "ReLU-DR1".into(),
        kind: LayerKind::Relu,
        inputs: vec![NodeRef::Node(layers.len() - 1)],
    });
    layers.push(LayerSpec {
        name: "MaxPool-DR1".into(),
        kind: LayerKind::MaxPool { kh: 2, kw: 2, stride: 2, pad: 0 },
        inputs: vec![NodeRef::Node(layers.len() - 1)],
    });
    layers.push(LayerSpec {
        name: "Conv6".into(),
        kind: LayerKind::PointwiseConv { c_in: 80, c_out: 1 },
        inputs: vec![NodeRef::Node(layers.len() - 1)],
    });
    NetworkSpec { kind: NetKind::Im, input_channels, input_size: PATCH_SIZE, layers }
}

/// Builds the noise level network: a single chain of conv+pool units
/// (4/4/0 twice), the 160-to-80 reduction, a final 2x2 pool, and the
/// linear head Conv10.
pub fn build_nm_net(input_channels: usize) -> NetworkSpec {
    assert!(
        input_channels == 3 || input_channels == 4,
        "noise net supports 3- or 4-channel input"
    );
    let mut layers: Vec<LayerSpec> = Vec::new();
    let chain = |layers: &mut Vec<LayerSpec>, spec: LayerSpec| {
        layers.push(spec);
        NodeRef::Node(layers.len() - 1)
    };
    let mut prev = NodeRef::Input;
    for (tag, c_in) in [("NP1", input_channels), ("NP2", 160usize)] {
        prev = chain(
            &mut layers,
            LayerSpec {
                name: format!("Conv-{tag}"),
                kind: LayerKind::PointwiseConv { c_in, c_out: 160 },
                inputs: vec![prev],
            },
        );
        prev = chain(
            &mut layers,
            LayerSpec { name: format!("ReLU-{tag}"), kind: LayerKind::Relu, inputs: vec![prev] },
        );
        prev = chain(
            &mut layers,
            LayerSpec {
                name: format!("MaxPool-{tag}"),
                kind: LayerKind::MaxPool { kh: 4, kw: 4, stride: 4, pad: 0 },
                inputs: vec![prev],
            },
        );
    }
    prev = chain(
        &mut layers,
        LayerSpec {
            name: "Conv-DR2".into(),
            kind: LayerKind::PointwiseConv { c_in: 160, c_out: 80 },
            inputs: vec![prev],
        },
    );
    prev = chain(
        &mut layers,
        LayerSpec { name: "ReLU-DR2".into(), kind: LayerKind::Relu, inputs: vec![prev] },
    );
    prev = chain(
        &mut layers,
        LayerSpec {
            name: "MaxPool-DR2".into(),
            kind: LayerKind::MaxPool { kh: 2, kw: 2, stride: 2, pad: 0 },
            inputs: vec![prev],
        },
    );
    chain(
        &mut layers,
        LayerSpec {
            name: "Conv10".into(),
            kind: LayerKind::PointwiseConv { c_in: 80, c_out: 1 },
            inputs: vec![prev],
        },
    );
    NetworkSpec { kind: NetKind::Nm, input_channels, input_size: PATCH_SIZE, layers }
}

/// Trained weights: one [`ConvParams`] per conv layer, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub by_name: BTreeMap<String, ConvParams>,
}

impl ModelParams {
    /// MSRA-initialized weights with zero biases, drawn in graph order so
    /// a seed fixes the full parameter set.
    pub fn init_msra(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut by_name = BTreeMap::new();
        for l in &spec.layers {
            if let LayerKind::PointwiseConv { c_in, c_out } = l.kind {
                let weights = msra_init(c_in, Shape4::new(c_out, c_in, 1, 1), &mut rng);
                by_name.insert(l.name.clone(), ConvParams { weights, bias: vec![0.0; c_out] });
            }
        }
        ModelParams { by_name }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut by_name = BTreeMap::new();
        for l in &spec.layers {
            if let LayerKind::PointwiseConv { c_in, c_out } = l.kind {
                by_name.insert(l.name.clone(), ConvParams::zeros(c_in, c_out));
            }
        }
        ModelParams { by_name }
    }

    /// Checks the key set and every weight shape against the spec.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let conv_names = spec.conv_names();
        if self.by_name.len() != conv_names.len() {
            return Err(Error::Config(format!(
                "model has {} conv layers, spec expects {}",
                self.by_name.len(),
                conv_names.len()
            )));
        }
        for name in conv_names {
            let (c_in, c_out) = spec.conv_dims(name).expect("conv layer");
            let p = self
                .by_name
                .get(name)
                .ok_or_else(|| Error::Config(format!("model is missing conv layer {name}")))?;
            if p.c_in() != c_in || p.c_out() != c_out {
                return Err(Error::shape(
                    format!("layer {name}"),
                    format!("{c_out}x{c_in}x1x1"),
                    p.weights.shape(),
                ));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.by_name.values().map(|p| p.param_count()).sum()
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub base_lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            batch_size: 128,
            base_lr: DEFAULT_BASE_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be positive".into()));
        }
        if self.base_lr <= 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im_net_shapes_follow_the_table() {
        let spec = build_im_net(4);
        let shapes = spec.infer_shapes().unwrap();
        let by_name: BTreeMap<&str, (usize, usize, usize)> = spec
            .layers
            .iter()
            .map(|l| l.name.as_str())
            .zip(shapes.iter().copied())
            .collect();
        assert_eq!(by_name["Conv-BP1"], (160, 32, 32));
        assert_eq!(by_name["MaxPool-BP1"], (160, 2, 2));
        assert_eq!(by_name["MaxPool-BP2"], (160, 2, 2));
        assert_eq!(by_name["Downsample"], (4, 16, 16));
        assert_eq!(by_name["Conv-BP3"], (160, 16, 16));
        assert_eq!(by_name["MaxPool-BP3"], (160, 2, 2));
        assert_eq!(by_name["MaxPool-BP4"], (160, 2, 2));
        assert_eq!(by_name["Concat"], (640, 2, 2));
        assert_eq!(by_name["Conv-DR1"], (80, 2, 2));
        assert_eq!(by_name["MaxPool-DR1"], (80, 1, 1));
        assert_eq!(by_name["Conv6"], (1, 1, 1));
    }

    #[test]
    fn nm_net_shapes_follow_the_table() {
        let spec = build_nm_net(4);
        let shapes = spec.infer_shapes().unwrap();
        let by_name: BTreeMap<&str, (usize, usize, usize)> = spec
            .layers
            .iter()
            .map(|l| l.name.as_str())
            .zip(shapes.iter().copied())
            .collect();
        assert_eq!(by_name["Conv-NP1"], (160, 32, 32));
        assert_eq!(by_name["MaxPool-NP1"], (160, 8, 8));
        assert_eq!(by_name["Conv-NP2"], (160, 8, 8));
        assert_eq!(by_name["MaxPool-NP2"], (160, 2, 2));
        assert_eq!(by_name["Conv-DR2"], (80, 2, 2));
        assert_eq!(by_name["MaxPool-DR2"], (80, 1, 1));
        assert_eq!(by_name["Conv10"], (1, 1, 1));
    }

    #[test]
    fn im_net_parameter_count() {
        let spec = build_im_net(4);
        let params = ModelParams::zeros(&spec);
        // Conv-BP1..BP4: 4*160+160 = 800 each; Conv-DR1: 640*80+80 = 51280;
        // Conv6: 80*1+1 = 81; total 54561.
        assert_eq!(params.param_count(), 4 * 800 + 51_280 + 81);
        assert_eq!(params.param_count(), 54_561);
    }

    #[test]
    fn conv_names_in_table_order() {
        let spec = build_im_net(4);
        assert_eq!(
            spec.conv_names(),
            vec!["Conv-BP1", "Conv-BP2", "Conv-BP3", "Conv-BP4", "Conv-DR1", "Conv6"]
        );
        let spec = build_nm_net(4);
        assert_eq!(spec.conv_names(), vec!["Conv-NP1", "Conv-NP2", "Conv-DR2", "Conv10"]);
    }

    #[test]
    fn three_channel_variant_also_validates() {
        assert!(build_im_net(3).infer_shapes().is_ok());
        assert!(build_nm_net(3).infer_shapes().is_ok());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = build_nm_net(4);
        let a = ModelParams::init_msra(&spec, 9);
        let b = ModelParams::init_msra(&spec, 9);
        assert_eq!(a, b);
        let c = ModelParams::init_msra(&spec, 10);
        assert_ne!(a, c);
        a.validate(&spec).unwrap();
    }
}
