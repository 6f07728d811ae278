//! Declarative network descriptions.
//!
//! A [`NetSpec`] is a list of nodes in topological order. Node 0 is the
//! input; every other node names its inputs by index, all of which precede
//! it. The last node is the single output head.

use crate::error::{Error, Result};
use crate::tensor::{Padding, Shape};

/// Which part of the architecture a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Deep,
    FullRes,
    Fusion,
    Head,
}

impl Stream {
    pub fn code(self) -> u8 {
        match self {
            Stream::Deep => 0,
            Stream::FullRes => 1,
            Stream::Fusion => 2,
            Stream::Head => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Stream::Deep,
            1 => Stream::FullRes,
            2 => Stream::Fusion,
            3 => Stream::Head,
            _ => return Err(Error::Malformed(format!("unknown stream code {code}"))),
        })
    }
}

/// Order of the non-linearity and normalisation after a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum NormOrder {
    /// conv -> ReLU -> BatchNorm
    ReluThenNorm,
    /// conv -> BatchNorm -> ReLU
    NormThenRelu,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input {
        channels: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    CrossConv {
        in_channels: usize,
        out_channels: usize,
        len: usize,
        bias: bool,
    },
    /// Stride-2, `k = 2` transposed convolution.
    UpConv {
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    Sigmoid,
    MaxPool {
        window: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Elementwise sum of two equally shaped inputs (residual connection).
    Add,
    /// Channel concatenation of two or more inputs.
    Concat,
}

impl LayerKind {
    pub fn code(&self) -> u8 {
        match self {
            LayerKind::Input { .. } => 0,
            LayerKind::Conv { .. } => 1,
            LayerKind::CrossConv { .. } => 2,
            LayerKind::UpConv { .. } => 3,
            LayerKind::BatchNorm { .. } => 4,
            LayerKind::Relu => 5,
            LayerKind::Sigmoid => 6,
            LayerKind::MaxPool { .. } => 7,
            LayerKind::Dropout { .. } => 8,
            LayerKind::Flatten => 9,
            LayerKind::Linear { .. } => 10,
            LayerKind::Add => 11,
            LayerKind::Concat => 12,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::CrossConv { .. } => "cross_conv",
            LayerKind::UpConv { .. } => "up_conv",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    /// Weight layers (convolutions and fully connected layers).
    pub fn is_weight_layer(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. }
                | LayerKind::CrossConv { .. }
                | LayerKind::UpConv { .. }
                | LayerKind::Linear { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub stream: Stream,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    /// Declared input extent `[depth, height, width]`.
    pub input_spatial: [usize; 3],
    pub nodes: Vec<Node>,
}

impl NetSpec {
    pub fn input_channels(&self) -> usize {
        match self.nodes.first().map(|n| &n.kind) {
            Some(LayerKind::Input { channels }) => *channels,
            _ => 0,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        let [d, h, w] = self.input_spatial;
        Shape::new(batch, self.input_channels(), d, h, w)
    }

    pub fn output(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Structural validation plus shape inference for a batch of one.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("empty network"));
        }
        if !matches!(self.nodes[0].kind, LayerKind::Input { .. }) || !self.nodes[0].inputs.is_empty() {
            return Err(Error::invalid("node 0 must be the input"));
        }
        let mut consumed = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            if matches!(node.kind, LayerKind::Input { .. }) {
                return Err(Error::invalid(format!("node {i}: only node 0 may be an input")));
            }
            let arity_ok = match node.kind {
                LayerKind::Add => node.inputs.len() == 2,
                LayerKind::Concat => node.inputs.len() >= 2,
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::invalid(format!(
                    "node {i} ({}) has {} inputs",
                    node.kind.name(),
                    node.inputs.len()
                )));
            }
            for &src in &node.inputs {
                if src >= i {
                    return Err(Error::invalid(format!(
                        "node {i} reads node {src}: wiring must be acyclic and ordered"
                    )));
                }
                consumed[src] = true;
            }
        }
        if let Some(dangling) = consumed[..self.nodes.len() - 1].iter().position(|c| !c) {
            return Err(Error::invalid(format!(
                "node {dangling} is never consumed; a net has exactly one output head"
            )));
        }
        self.infer_shapes(self.input_shape(1))
    }

    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let ins: Vec<Shape> = node.inputs.iter().map(|&s| shapes[s]).collect();
            let err = |msg: String| Error::shape(format!("node {i} ({}): {msg}", node.kind.name()));
            let shape = match &node.kind {
                LayerKind::Input { channels } => {
                    if input.channels != *channels {
                        return Err(err(format!("input has {} channels, expected {channels}", input.channels)));
                    }
                    input
                }
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    size,
                    stride,
                    padding,
                    ..
                } => {
                    let s = ins[0];
                    if s.channels != *in_channels {
                        return Err(err(format!("{} channels in, expected {in_channels}", s.channels)));
                    }
                    let pad = padding.amount(*size);
                    let mut sp = [0; 3];
                    for (a, v) in s.spatial().iter().enumerate() {
                        if v + 2 * pad < *size {
                            return Err(err(format!("extent {v} smaller than kernel {size}")));
                        }
                        sp[a] = (v + 2 * pad - size) / stride + 1;
                    }
                    s.with_channels(*out_channels).with_spatial(sp)
                }
                LayerKind::CrossConv {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    if ins[0].channels != *in_channels {
                        return Err(err(format!("{} channels in, expected {in_channels}", ins[0].channels)));
                    }
                    ins[0].with_channels(*out_channels)
                }
                LayerKind::UpConv {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let s = ins[0];
                    if s.channels != *in_channels {
                        return Err(err(format!("{} channels in, expected {in_channels}", s.channels)));
                    }
                    let [d, h, w] = s.spatial();
                    s.with_channels(*out_channels).with_spatial([2 * d, 2 * h, 2 * w])
                }
                LayerKind::BatchNorm { channels } => {
                    if ins[0].channels != *channels {
                        return Err(err(format!("{} channels in, expected {channels}", ins[0].channels)));
                    }
                    ins[0]
                }
                LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Dropout { .. } => ins[0],
                LayerKind::MaxPool { window } => {
                    let s = ins[0];
                    if s.spatial().iter().any(|v| v % window != 0) {
                        return Err(err(format!("extent {:?} not divisible by {window}", s.spatial())));
                    }
                    s.with_spatial(s.spatial().map(|v| v / window))
                }
                LayerKind::Flatten => {
                    let s = ins[0];
                    Shape::new(s.batch, s.channels * s.spatial_len(), 1, 1, 1)
                }
                LayerKind::Linear {
                    in_features,
                    out_features,
                    ..
                } => {
                    let s = ins[0];
                    if s.channels * s.spatial_len() != *in_features {
                        return Err(err(format!(
                            "{} features in, expected {in_features}",
                            s.channels * s.spatial_len()
                        )));
                    }
                    Shape::new(s.batch, *out_features, 1, 1, 1)
                }
                LayerKind::Add => {
                    if ins[0] != ins[1] {
                        return Err(err(format!("operands {} and {} differ", ins[0], ins[1])));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    let first = ins[0];
                    if ins.iter().any(|s| s.spatial() != first.spatial() || s.batch != first.batch) {
                        return Err(err("operands differ in spatial extent".into()));
                    }
                    first.with_channels(ins.iter().map(|s| s.channels).sum())
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }
}

/// Incremental construction of a [`NetSpec`].
pub(crate) struct SpecBuilder {
    nodes: Vec<Node>,
    order: NormOrder,
    pub stream: Stream,
}

impl SpecBuilder {
    pub fn new(input_channels: usize, order: NormOrder) -> Self {
        SpecBuilder {
            nodes: vec![Node {
                kind: LayerKind::Input {
                    channels: input_channels,
                },
                inputs: Vec::new(),
                stream: Stream::Deep,
            }],
            order,
            stream: Stream::Deep,
        }
    }

    pub fn push(&mut self, kind: LayerKind, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node {
            kind,
            inputs,
            stream: self.stream,
        });
        self.nodes.len() - 1
    }

    /// A weight layer followed by ReLU and batch normalisation in the
    /// configured order.
    pub fn block(&mut self, from: usize, layer: LayerKind, channels: usize) -> usize {
        let w = self.push(layer, vec![from]);
        match self.order {
            NormOrder::ReluThenNorm => {
                let r = self.push(LayerKind::Relu, vec![w]);
                self.push(LayerKind::BatchNorm { channels }, vec![r])
            }
            NormOrder::NormThenRelu => {
                let b = self.push(LayerKind::BatchNorm { channels }, vec![w]);
                self.push(LayerKind::Relu, vec![b])
            }
        }
    }

    pub fn finish(self, input_spatial: [usize; 3]) -> NetSpec {
        NetSpec {
            input_spatial,
            nodes: self.nodes,
        }
    }
}
