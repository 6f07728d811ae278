//! Analytic parameter counts and receptive field.

use serde::Serialize;

use super::net::Net;
use super::spec::{LayerKind, NetSpec};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    Actual,
    /// Every cross-constrained kernel counted as a dense `len³` kernel.
    DenseEquivalent,
}

impl std::str::FromStr for CountMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actual" => Ok(CountMode::Actual),
            "dense-equivalent" | "dense_equivalent" => Ok(CountMode::DenseEquivalent),
            _ => Err(Error::invalid(format!("unknown count mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub node: usize,
    pub kind: &'static str,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub mode: CountMode,
    pub layers: Vec<LayerCount>,
    pub total: usize,
}

/// Learnable scalars per node, derived from the spec alone (batch-norm
/// scale and shift count; running statistics do not).
pub fn count_spec_parameters(spec: &NetSpec, mode: CountMode) -> ParameterCount {
    let mut layers = Vec::new();
    for (node, n) in spec.nodes.iter().enumerate() {
        let bias = |b: bool, c: usize| if b { c } else { 0 };
        let count = match n.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                size,
                bias: b,
                ..
            } => in_channels * out_channels * size.pow(3) + bias(b, out_channels),
            LayerKind::CrossConv {
                in_channels,
                out_channels,
                len,
                bias: b,
            } => {
                let per_pair = match mode {
                    CountMode::Actual => 3 * len,
                    CountMode::DenseEquivalent => len.pow(3),
                };
                in_channels * out_channels * per_pair + bias(b, out_channels)
            }
            LayerKind::UpConv {
                in_channels,
                out_channels,
                bias: b,
            } => in_channels * out_channels * 8 + bias(b, out_channels),
            LayerKind::BatchNorm { channels } => 2 * channels,
            LayerKind::Linear {
                in_features,
                out_features,
                bias: b,
            } => in_features * out_features + bias(b, out_features),
            _ => continue,
        };
        layers.push(LayerCount {
            node,
            kind: n.kind.name(),
            count,
        });
    }
    let total = layers.iter().map(|l| l.count).sum();
    ParameterCount { mode, layers, total }
}

pub fn count_parameters<T: Real>(net: &Net<T>, mode: CountMode) -> ParameterCount {
    let analytic = count_spec_parameters(net.spec(), mode);
    debug_assert!(
        mode == CountMode::DenseEquivalent || analytic.total == allocated_parameters(net),
        "analytic count disagrees with allocated parameters"
    );
    analytic
}

/// Number of learnable scalars actually allocated in `net`.
pub fn allocated_parameters<T: Real>(net: &Net<T>) -> usize {
    net.learnable().iter().map(|g| g.len()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReceptiveField {
    /// Extent per axis `[depth, height, width]`.
    pub size: [usize; 3],
    /// Cumulative stride (jump) per axis.
    pub jump: [usize; 3],
}

/// Receptive field at the output head via `rf += (k - 1) * jump`,
/// `jump *= stride`. Where branches merge the larger field wins, which
/// follows the deep stream. A stride-2 transposed convolution halves the
/// jump and leaves the field unchanged.
pub fn receptive_field(spec: &NetSpec) -> ReceptiveField {
    let mut rf = vec![(1usize, 1usize); spec.nodes.len()];
    for (i, node) in spec.nodes.iter().enumerate().skip(1) {
        let (r, j) = node
            .inputs
            .iter()
            .map(|&s| rf[s])
            .max_by_key(|&(r, _)| r)
            .expect("validated node has inputs");
        rf[i] = match node.kind {
            LayerKind::Conv { size, stride, .. } => (r + (size - 1) * j, j * stride),
            LayerKind::CrossConv { len, .. } => (r + (len - 1) * j, j),
            LayerKind::MaxPool { window } => (r + (window - 1) * j, j * window),
            LayerKind::UpConv { .. } => (r, (j / 2).max(1)),
            _ => (r, j),
        };
    }
    let (r, j) = rf[spec.output()];
    ReceptiveField {
        size: [r; 3],
        jump: [j; 3],
    }
}
