//! The localization classifier and the segmentation network.

use serde::{Deserialize, Serialize};

use super::net::Net;
use super::spec::{LayerKind, NetSpec, NormOrder, SpecBuilder, Stream};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Real};

/// VGG-style window classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocNetConfig {
    pub input_side: usize,
    /// Channel width of each two-conv stage; every stage ends in a 2³ pool.
    pub stage_widths: Vec<usize>,
    pub kernel: usize,
    pub conv_dropout: f64,
    pub hidden: usize,
    pub hidden_dropout: f64,
    pub classes: usize,
    pub order: NormOrder,
}

impl LocNetConfig {
    pub fn full() -> Self {
        LocNetConfig {
            input_side: 64,
            stage_widths: vec![16, 32, 64, 64],
            kernel: 3,
            conv_dropout: 0.15,
            hidden: 256,
            hidden_dropout: 0.4,
            classes: 2,
            order: NormOrder::ReluThenNorm,
        }
    }

    pub fn desk() -> Self {
        LocNetConfig {
            input_side: 24,
            stage_widths: vec![4, 8, 16],
            hidden: 32,
            ..Self::full()
        }
    }

    pub fn spec(&self) -> Result<NetSpec> {
        let pool = 1usize << self.stage_widths.len();
        if self.stage_widths.is_empty() || !self.input_side.is_multiple_of(pool) {
            return Err(Error::invalid(format!(
                "input side {} must be divisible by {pool}",
                self.input_side
            )));
        }
        let mut b = SpecBuilder::new(1, self.order);
        let mut cur = 0;
        let mut width = 1;
        for &w in &self.stage_widths {
            for _ in 0..2 {
                cur = b.block(cur, conv(width, w, self.kernel, 1, Padding::Same), w);
                width = w;
            }
            cur = b.push(LayerKind::MaxPool { window: 2 }, vec![cur]);
            cur = b.push(LayerKind::Dropout { rate: self.conv_dropout }, vec![cur]);
        }
        let side = self.input_side / pool;
        cur = b.push(LayerKind::Flatten, vec![cur]);
        let features = side * side * side * width;
        cur = b.block(
            cur,
            LayerKind::Linear {
                in_features: features,
                out_features: self.hidden,
                bias: true,
            },
            self.hidden,
        );
        cur = b.push(LayerKind::Dropout { rate: self.hidden_dropout }, vec![cur]);
        b.stream = Stream::Head;
        b.push(
            LayerKind::Linear {
                in_features: self.hidden,
                out_features: self.classes,
                bias: true,
            },
            vec![cur],
        );
        let s = self.input_side;
        let spec = b.finish([s, s, s]);
        spec.validate()?;
        Ok(spec)
    }
}

/// Encoder-decoder with a parallel full-resolution stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub input_side: usize,
    pub full_res_width: usize,
    pub full_res_layers: usize,
    /// Kernel of every resolution-preserving dense conv.
    pub kernel: usize,
    pub deep_width: usize,
    /// Output width of each stride-2 down conv; the decoder mirrors them.
    pub down_widths: Vec<usize>,
    pub lrp_layers: usize,
    pub cross_len: usize,
    pub fusion_layers: usize,
    pub order: NormOrder,
}

impl SegNetConfig {
    pub fn full() -> Self {
        SegNetConfig {
            input_side: 128,
            full_res_width: 8,
            full_res_layers: 3,
            kernel: 7,
            deep_width: 8,
            down_widths: vec![16, 32, 64, 96],
            lrp_layers: 7,
            cross_len: 7,
            fusion_layers: 2,
            order: NormOrder::ReluThenNorm,
        }
    }

    pub fn desk() -> Self {
        SegNetConfig {
            input_side: 48,
            full_res_width: 4,
            kernel: 3,
            deep_width: 4,
            down_widths: vec![8, 16, 24, 32],
            ..Self::full()
        }
    }

    pub fn spec(&self) -> Result<NetSpec> {
        let downs = self.down_widths.len();
        if !self.input_side.is_multiple_of(1 << downs) {
            return Err(Error::invalid(format!(
                "input side {} must be divisible by {}",
                self.input_side,
                1 << downs
            )));
        }
        let k = self.kernel;
        let mut b = SpecBuilder::new(1, self.order);

        b.stream = Stream::FullRes;
        let fr = self.full_res_width;
        let mut full = b.block(0, conv(1, fr, k, 1, Padding::Same), fr);
        for _ in 1..self.full_res_layers {
            let inner = b.block(full, conv(fr, fr, k, 1, Padding::Same), fr);
            full = b.push(LayerKind::Add, vec![full, inner]);
        }

        b.stream = Stream::Deep;
        let mut cur = b.block(0, conv(1, self.deep_width, k, 1, Padding::Same), self.deep_width);
        let mut skips = vec![(cur, self.deep_width)];
        let mut width = self.deep_width;
        for &w in &self.down_widths {
            cur = b.block(cur, conv(width, w, 2, 2, Padding::Valid), w);
            width = w;
            skips.push((cur, w));
        }
        skips.pop();
        for _ in 0..self.lrp_layers {
            let inner = b.block(
                cur,
                LayerKind::CrossConv {
                    in_channels: width,
                    out_channels: width,
                    len: self.cross_len,
                    bias: true,
                },
                width,
            );
            cur = b.push(LayerKind::Add, vec![cur, inner]);
        }
        for (skip, sw) in skips.into_iter().rev() {
            cur = b.block(
                cur,
                LayerKind::UpConv {
                    in_channels: width,
                    out_channels: sw,
                    bias: true,
                },
                sw,
            );
            cur = b.push(LayerKind::Concat, vec![cur, skip]);
            cur = b.block(cur, conv(2 * sw, sw, 1, 1, Padding::Same), sw);
            width = sw;
        }

        b.stream = Stream::Fusion;
        let fw = fr + width;
        cur = b.push(LayerKind::Concat, vec![full, cur]);
        for _ in 0..self.fusion_layers {
            cur = b.block(cur, conv(fw, fw, k, 1, Padding::Same), fw);
        }
        b.stream = Stream::Head;
        cur = b.push(conv(fw, 1, 1, 1, Padding::Same), vec![cur]);
        b.push(LayerKind::Sigmoid, vec![cur]);
        let s = self.input_side;
        let spec = b.finish([s, s, s]);
        spec.validate()?;
        Ok(spec)
    }
}

fn conv(in_channels: usize, out_channels: usize, size: usize, stride: usize, padding: Padding) -> LayerKind {
    LayerKind::Conv {
        in_channels,
        out_channels,
        size,
        stride,
        padding,
        bias: true,
    }
}

/// Full-scale localization classifier (64³ input, two logits).
pub fn build_localization_net<T: Real>(seed: u64) -> Result<Net<T>> {
    Net::new(LocNetConfig::full().spec()?, seed)
}

/// Full-scale segmentation network (128³ input, sigmoid probabilities).
pub fn build_segmentation_net<T: Real>(seed: u64) -> Result<Net<T>> {
    Net::new(SegNetConfig::full().spec()?, seed)
}
