//! Graph executor: a [`NetSpec`] plus its parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerKind, NetSpec};
use crate::error::{Error, Result};
use crate::tensor::activation::activation_in_place;
use crate::tensor::norm::{batchnorm_eval, batchnorm_eval_in_place};
use crate::tensor::{
    activation, activation_backward, batchnorm, batchnorm_backward, conv3d_cross, conv3d_cross_backward,
    conv3d_dense, conv3d_dense_backward, dropout, dropout::dropout_backward, linear, linear_backward,
    maxpool3d, maxpool3d_backward, transpose_conv3d, transpose_conv3d_backward, Activation, BatchNormCache,
    BatchNormState, CrossKernel3D, DenseKernel3D, LinearParams, MaxPoolIndices, Mode, Real, Tensor,
};

/// Learned state attached to one node.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeParams<T = f32> {
    None,
    Conv(DenseKernel3D<T>),
    Cross(CrossKernel3D<T>),
    /// Transposed convolution; `in_channels` is the consumed width.
    Up(DenseKernel3D<T>),
    Norm(BatchNormState<T>),
    Linear(LinearParams<T>),
}

/// Gradients aligned with [`Net::learnable`].
pub type Gradients<T> = Vec<Vec<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Net<T = f32> {
    spec: NetSpec,
    params: Vec<NodeParams<T>>,
}

enum Cache<T> {
    None,
    Pool(MaxPoolIndices),
    Norm(BatchNormCache<T>),
    Drop(Option<Vec<T>>),
}

/// Everything a training forward pass keeps for the backward pass.
pub struct Tape<T> {
    outputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().expect("tape of an empty net")
    }
}

/// Per-node dropout seed.
pub(crate) fn node_seed(seed: u64, node: usize) -> u64 {
    let mut z = seed ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn zero_params<T: Real>(kind: &LayerKind) -> NodeParams<T> {
    match *kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            size,
            bias,
            ..
        } => NodeParams::Conv(DenseKernel3D::zeros(out_channels, in_channels, size, bias)),
        LayerKind::CrossConv {
            in_channels,
            out_channels,
            len,
            bias,
        } => NodeParams::Cross(CrossKernel3D::zeros(out_channels, in_channels, len, bias)),
        LayerKind::UpConv {
            in_channels,
            out_channels,
            bias,
        } => NodeParams::Up(DenseKernel3D::zeros(out_channels, in_channels, 2, bias)),
        LayerKind::BatchNorm { channels } => NodeParams::Norm(BatchNormState::new(channels)),
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => NodeParams::Linear(LinearParams::zeros(in_features, out_features, bias)),
        _ => NodeParams::None,
    }
}

impl<T: Real> NodeParams<T> {
    fn groups(&self) -> Vec<(&'static str, &[T])> {
        match self {
            NodeParams::None => vec![],
            NodeParams::Conv(k) | NodeParams::Up(k) => {
                let mut v = vec![("weights", k.weights.as_slice())];
                v.extend(k.bias.as_deref().map(|b| ("bias", b)));
                v
            }
            NodeParams::Cross(k) => {
                let mut v = vec![("fx", k.fx.as_slice()), ("fy", k.fy.as_slice()), ("fz", k.fz.as_slice())];
                v.extend(k.bias.as_deref().map(|b| ("bias", b)));
                v
            }
            NodeParams::Norm(s) => vec![("scale", s.scale.as_slice()), ("shift", s.shift.as_slice())],
            NodeParams::Linear(p) => {
                let mut v = vec![("weights", p.weights.as_slice())];
                v.extend(p.bias.as_deref().map(|b| ("bias", b)));
                v
            }
        }
    }

    fn groups_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            NodeParams::None => vec![],
            NodeParams::Conv(k) | NodeParams::Up(k) => {
                let mut v = vec![k.weights.as_mut_slice()];
                v.extend(k.bias.as_deref_mut());
                v
            }
            NodeParams::Cross(k) => {
                let mut v = vec![k.fx.as_mut_slice(), k.fy.as_mut_slice(), k.fz.as_mut_slice()];
                v.extend(k.bias.as_deref_mut());
                v
            }
            NodeParams::Norm(s) => vec![s.scale.as_mut_slice(), s.shift.as_mut_slice()],
            NodeParams::Linear(p) => {
                let mut v = vec![p.weights.as_mut_slice()];
                v.extend(p.bias.as_deref_mut());
                v
            }
        }
    }

    fn cast<U: Real>(&self) -> NodeParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        match self {
            NodeParams::None => NodeParams::None,
            NodeParams::Conv(k) | NodeParams::Up(k) => {
                let out = DenseKernel3D {
                    out_channels: k.out_channels,
                    in_channels: k.in_channels,
                    size: k.size,
                    weights: c(&k.weights),
                    bias: k.bias.as_deref().map(c),
                };
                if matches!(self, NodeParams::Conv(_)) {
                    NodeParams::Conv(out)
                } else {
                    NodeParams::Up(out)
                }
            }
            NodeParams::Cross(k) => NodeParams::Cross(CrossKernel3D {
                out_channels: k.out_channels,
                in_channels: k.in_channels,
                len: k.len,
                fx: c(&k.fx),
                fy: c(&k.fy),
                fz: c(&k.fz),
                bias: k.bias.as_deref().map(c),
            }),
            NodeParams::Norm(s) => NodeParams::Norm(BatchNormState {
                scale: c(&s.scale),
                shift: c(&s.shift),
                running_mean: c(&s.running_mean),
                running_var: c(&s.running_var),
                momentum: s.momentum,
                eps: s.eps,
            }),
            NodeParams::Linear(p) => NodeParams::Linear(LinearParams {
                in_features: p.in_features,
                out_features: p.out_features,
                weights: c(&p.weights),
                bias: p.bias.as_deref().map(c),
            }),
        }
    }
}

impl<T: Real> Net<T> {
    /// Validates `spec` and allocates zeroed parameters (BN at identity).
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.nodes.iter().map(|n| zero_params(&n.kind)).collect();
        Ok(Net { spec, params })
    }

    /// Fan-in scaled zero-mean normal initialisation (He); biases start at 0.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut net.params {
            let (fan_in, tensors): (usize, Vec<&mut Vec<T>>) = match p {
                NodeParams::Conv(k) => (k.in_channels * k.taps(), vec![&mut k.weights]),
                NodeParams::Up(k) => (k.in_channels, vec![&mut k.weights]),
                NodeParams::Cross(k) => (k.in_channels * (3 * k.len - 2), vec![&mut k.fx, &mut k.fy, &mut k.fz]),
                NodeParams::Linear(l) => (l.in_features, vec![&mut l.weights]),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt())
                .map_err(|e| Error::invalid(e.to_string()))?;
            for t in tensors {
                for v in t.iter_mut() {
                    *v = T::lit(normal.sample(&mut rng));
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[NodeParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NodeParams<T>] {
        &mut self.params
    }

    /// Learnable parameter tensors in a fixed order (node order, then the
    /// node's groups).
    pub fn learnable(&self) -> Vec<&[T]> {
        self.params.iter().flat_map(|p| p.groups().into_iter().map(|(_, g)| g)).collect()
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut [T]> {
        self.params.iter_mut().flat_map(|p| p.groups_mut()).collect()
    }

    pub fn learnable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let kind = self.spec.nodes[i].kind.name();
                p.groups().into_iter().map(move |(g, _)| format!("{i}.{kind}.{g}"))
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            spec: self.spec.clone(),
            params: self.params.iter().map(NodeParams::cast).collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let expected = self.spec.input_shape(x.shape().batch);
        if x.shape() != expected {
            return Err(Error::shape(format!("net expects input {expected}, got {}", x.shape())));
        }
        Ok(())
    }

    /// Spec-level forward: eval mode uses running statistics and no
    /// dropout; train mode updates the running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => Ok(self.forward_train(x, seed)?.0),
        }
    }

    /// Eval-mode forward that frees intermediates as soon as their last
    /// consumer has run.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let n = self.spec.nodes.len();
        let mut last_use = vec![0usize; n];
        for (i, node) in self.spec.nodes.iter().enumerate() {
            for &s in &node.inputs {
                last_use[s] = i;
            }
        }
        let mut outs: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        outs[0] = Some(x.clone());
        for i in 1..n {
            let node = &self.spec.nodes[i];
            let src = node.inputs[0];
            let elementwise = matches!(
                node.kind,
                LayerKind::BatchNorm { .. } | LayerKind::Dropout { .. } | LayerKind::Relu | LayerKind::Sigmoid
            );
            if elementwise && last_use[src] == i && src != 0 {
                // sole remaining consumer: overwrite the input
                let mut y = outs[src].take().expect("input freed too early");
                match (&node.kind, &self.params[i]) {
                    (LayerKind::BatchNorm { .. }, NodeParams::Norm(s)) => batchnorm_eval_in_place(&mut y, s)?,
                    (LayerKind::Relu, _) => activation_in_place(&mut y, Activation::Relu)?,
                    (LayerKind::Sigmoid, _) => activation_in_place(&mut y, Activation::Sigmoid)?,
                    _ => {}
                }
                outs[i] = Some(y);
                continue;
            }
            let ins: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&s| outs[s].as_ref().expect("input freed too early"))
                .collect();
            let y = match (&node.kind, &self.params[i]) {
                (LayerKind::BatchNorm { .. }, NodeParams::Norm(s)) => batchnorm_eval(ins[0], s)?,
                (LayerKind::Dropout { .. }, _) => ins[0].clone(),
                _ => self.apply(i, &ins, Mode::Eval, 0)?.0,
            };
            for &s in &node.inputs {
                if last_use[s] == i {
                    outs[s] = None;
                }
            }
            outs[i] = Some(y);
        }
        Ok(outs.pop().flatten().expect("output"))
    }

    /// Stateless node evaluation (everything except train-mode BN).
    fn apply(&self, i: usize, ins: &[&Tensor<T>], mode: Mode, seed: u64) -> Result<(Tensor<T>, Cache<T>)> {
        let node = &self.spec.nodes[i];
        let x = ins[0];
        Ok(match (&node.kind, &self.params[i]) {
            (LayerKind::Conv { stride, padding, .. }, NodeParams::Conv(k)) => {
                (conv3d_dense(x, k, *stride, *padding)?, Cache::None)
            }
            (LayerKind::CrossConv { .. }, NodeParams::Cross(k)) => (conv3d_cross(x, k)?, Cache::None),
            (LayerKind::UpConv { .. }, NodeParams::Up(k)) => (transpose_conv3d(x, k)?, Cache::None),
            (LayerKind::BatchNorm { .. }, NodeParams::Norm(s)) => (batchnorm_eval(x, s)?, Cache::None),
            (LayerKind::Relu, _) => (activation(x, Activation::Relu)?, Cache::None),
            (LayerKind::Sigmoid, _) => (activation(x, Activation::Sigmoid)?, Cache::None),
            (LayerKind::MaxPool { window }, _) => {
                let (y, idx) = maxpool3d(x, *window)?;
                (y, Cache::Pool(idx))
            }
            (LayerKind::Dropout { rate }, _) => {
                let (y, mask) = dropout(x, *rate, mode, node_seed(seed, i))?;
                (y, Cache::Drop(mask))
            }
            (LayerKind::Flatten, _) => {
                let s = x.shape();
                (
                    x.clone().reshape(crate::tensor::Shape::new(s.batch, s.channels * s.spatial_len(), 1, 1, 1))?,
                    Cache::None,
                )
            }
            (LayerKind::Linear { .. }, NodeParams::Linear(p)) => (linear(x, p)?, Cache::None),
            (LayerKind::Add, _) => {
                let mut y = ins[0].clone();
                y.add_assign(ins[1])?;
                (y, Cache::None)
            }
            (LayerKind::Concat, _) => (Tensor::concat_channels(ins)?, Cache::None),
            (kind, _) => {
                return Err(Error::Malformed(format!("node {i}: {} has mismatched parameters", kind.name())))
            }
        })
    }

    /// Train-mode forward keeping every activation for [`Net::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>, seed: u64) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let n = self.spec.nodes.len();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        outputs.push(x.clone());
        caches.push(Cache::None);
        for i in 1..n {
            let (y, cache) = if let NodeParams::Norm(state) = &mut self.params[i] {
                let src = self.spec.nodes[i].inputs[0];
                let (y, c) = batchnorm(&outputs[src], state, Mode::Train)?;
                (y, Cache::Norm(c))
            } else {
                let ins: Vec<&Tensor<T>> = self.spec.nodes[i].inputs.iter().map(|&s| &outputs[s]).collect();
                self.apply(i, &ins, Mode::Train, seed)?
            };
            outputs.push(y);
            caches.push(cache);
        }
        let y = outputs.last().expect("output").clone();
        Ok((y, Tape { outputs, caches }))
    }

    /// Backpropagates `gy` (gradient of the loss with respect to the net
    /// output) through the recorded tape. Returns parameter gradients in
    /// [`Net::learnable`] order and the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape<T>, gy: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)> {
        let n = self.spec.nodes.len();
        if tape.outputs.len() != n {
            return Err(Error::invalid("tape was recorded on a different net"));
        }
        if gy.shape() != tape.output().shape() {
            return Err(Error::shape(format!(
                "output gradient {} does not match output {}",
                gy.shape(),
                tape.output().shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[n - 1] = Some(gy.clone());
        let mut pgrads: Vec<Vec<Vec<T>>> = self
            .params
            .iter()
            .map(|p| p.groups().iter().map(|(_, g)| vec![T::zero(); g.len()]).collect())
            .collect();

        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.spec.nodes[i];
            let x = &tape.outputs[node.inputs[0]];
            let input_grads: Vec<Tensor<T>> = match (&node.kind, &self.params[i], &tape.caches[i]) {
                (LayerKind::Conv { stride, padding, .. }, NodeParams::Conv(k), _) => {
                    let r = conv3d_dense_backward(x, k, *stride, *padding, &g)?;
                    pgrads[i] = std::iter::once(r.weights).chain(r.bias).collect();
                    vec![r.input]
                }
                (LayerKind::CrossConv { .. }, NodeParams::Cross(k), _) => {
                    let r = conv3d_cross_backward(x, k, &g)?;
                    pgrads[i] = [r.fx, r.fy, r.fz].into_iter().chain(r.bias).collect();
                    vec![r.input]
                }
                (LayerKind::UpConv { .. }, NodeParams::Up(k), _) => {
                    let r = transpose_conv3d_backward(x, k, &g)?;
                    pgrads[i] = std::iter::once(r.weights).chain(r.bias).collect();
                    vec![r.input]
                }
                (LayerKind::BatchNorm { .. }, NodeParams::Norm(s), Cache::Norm(c)) => {
                    let r = batchnorm_backward(c, s, &g)?;
                    pgrads[i] = vec![r.scale, r.shift];
                    vec![r.input]
                }
                (LayerKind::Relu, _, _) => vec![activation_backward(Activation::Relu, &tape.outputs[i], &g)?],
                (LayerKind::Sigmoid, _, _) => {
                    vec![activation_backward(Activation::Sigmoid, &tape.outputs[i], &g)?]
                }
                (LayerKind::MaxPool { .. }, _, Cache::Pool(idx)) => vec![maxpool3d_backward(idx, &g)?],
                (LayerKind::Dropout { .. }, _, Cache::Drop(mask)) => vec![dropout_backward(mask.as_deref(), &g)?],
                (LayerKind::Flatten, _, _) => vec![g.reshape(x.shape())?],
                (LayerKind::Linear { .. }, NodeParams::Linear(p), _) => {
                    let r = linear_backward(x, p, &g)?;
                    pgrads[i] = std::iter::once(r.weights).chain(r.bias).collect();
                    vec![r.input]
                }
                (LayerKind::Add, _, _) => vec![g.clone(), g],
                (LayerKind::Concat, _, _) => {
                    let widths: Vec<usize> = node.inputs.iter().map(|&s| tape.outputs[s].shape().channels).collect();
                    g.split_channels(&widths)?
                }
                (kind, _, _) => {
                    return Err(Error::Malformed(format!("node {i}: cannot differentiate {}", kind.name())))
                }
            };
            for (&src, gi) in node.inputs.iter().zip(input_grads) {
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let gx = grads[0].take().unwrap_or_else(|| Tensor::zeros(tape.outputs[0].shape()));
        Ok((pgrads.into_iter().flatten().collect(), gx))
    }
}

/// Finite-difference adapter: train-mode forward with a fixed dropout seed.
pub struct NetLayer {
    pub net: Net<f64>,
    pub seed: u64,
}

impl crate::tensor::gradcheck::Layer for NetLayer {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.net.forward_train(x, self.seed)?.0)
    }

    fn backward(&mut self, x: &Tensor<f64>, gy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>)> {
        let (_, tape) = self.net.forward_train(x, self.seed)?;
        let (g, gx) = self.net.backward(&tape, gy)?;
        Ok((gx, g))
    }

    fn groups(&self) -> Vec<String> {
        self.net.learnable_names()
    }

    fn group_len(&self, group: usize) -> usize {
        self.net.learnable()[group].len()
    }

    fn param_mut(&mut self, group: usize, index: usize) -> &mut f64 {
        &mut self.net.learnable_mut().into_iter().nth(group).expect("group")[index]
    }
}
