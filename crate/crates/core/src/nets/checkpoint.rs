//! DBVW checkpoint container.
//!
//! ```text
//! "DBVW"  u16 version  u32 table_bytes  table  payload
//! table:   u32 depth, height, width  u32 node_count
//!          per node: u8 kind  u8 stream  u8 n_inputs  u32 inputs..
//!                    u8 n_attrs  u32 attrs..
//! payload: f32 LE parameter groups in node order; batch-norm nodes store
//!          scale, shift, running mean, running variance
//! ```
//!
//! All integers are little-endian. f64 attributes (dropout rate, batch-norm
//! momentum and epsilon) are stored as their bit pattern in two u32 words.

use std::path::Path;

use super::net::{Net, NodeParams};
use super::spec::{LayerKind, NetSpec, Node, Stream};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Padding};

pub const MAGIC: [u8; 4] = *b"DBVW";
pub const VERSION: u16 = 1;

fn f64_words(v: f64) -> [u32; 2] {
    let b = v.to_bits();
    [b as u32, (b >> 32) as u32]
}

fn words_f64(lo: u32, hi: u32) -> f64 {
    f64::from_bits(lo as u64 | ((hi as u64) << 32))
}

fn attrs(kind: &LayerKind, params: &NodeParams<f32>) -> Vec<u32> {
    let u = |v: usize| v as u32;
    match *kind {
        LayerKind::Input { channels } => vec![u(channels)],
        LayerKind::Conv {
            in_channels,
            out_channels,
            size,
            stride,
            padding,
            bias,
        } => vec![
            u(in_channels),
            u(out_channels),
            u(size),
            u(stride),
            matches!(padding, Padding::Valid) as u32,
            bias as u32,
        ],
        LayerKind::CrossConv {
            in_channels,
            out_channels,
            len,
            bias,
        } => vec![u(in_channels), u(out_channels), u(len), bias as u32],
        LayerKind::UpConv {
            in_channels,
            out_channels,
            bias,
        } => vec![u(in_channels), u(out_channels), bias as u32],
        LayerKind::BatchNorm { channels } => {
            let (m, e) = match params {
                NodeParams::Norm(s) => (s.momentum, s.eps),
                _ => unreachable!("batchnorm node without state"),
            };
            let [m0, m1] = f64_words(m);
            let [e0, e1] = f64_words(e);
            vec![u(channels), m0, m1, e0, e1]
        }
        LayerKind::MaxPool { window } => vec![u(window)],
        LayerKind::Dropout { rate } => f64_words(rate).to_vec(),
        LayerKind::Linear {
            in_features,
            out_features,
            bias,
        } => vec![u(in_features), u(out_features), bias as u32],
        LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Flatten | LayerKind::Add | LayerKind::Concat => vec![],
    }
}

pub fn encode_checkpoint(net: &Net<f32>) -> Vec<u8> {
    let spec = net.spec();
    let mut table = Vec::new();
    for v in spec.input_spatial {
        table.extend((v as u32).to_le_bytes());
    }
    table.extend((spec.nodes.len() as u32).to_le_bytes());
    for (node, params) in spec.nodes.iter().zip(net.params()) {
        table.push(node.kind.code());
        table.push(node.stream.code());
        table.push(node.inputs.len() as u8);
        for &s in &node.inputs {
            table.extend((s as u32).to_le_bytes());
        }
        let a = attrs(&node.kind, params);
        table.push(a.len() as u8);
        for w in a {
            table.extend(w.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(table.len() + 4 * net.learnable().iter().map(|g| g.len()).sum::<usize>());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((table.len() as u32).to_le_bytes());
    out.extend(table);
    for p in net.params() {
        for g in payload_groups(p) {
            for v in g {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

fn payload_groups(p: &NodeParams<f32>) -> Vec<&[f32]> {
    match p {
        NodeParams::Norm(s) => vec![&s.scale, &s.shift, &s.running_mean, &s.running_var],
        NodeParams::Conv(k) | NodeParams::Up(k) => std::iter::once(k.weights.as_slice()).chain(k.bias.as_deref()).collect(),
        NodeParams::Cross(k) => [k.fx.as_slice(), &k.fy, &k.fz].into_iter().chain(k.bias.as_deref()).collect(),
        NodeParams::Linear(l) => std::iter::once(l.weights.as_slice()).chain(l.bias.as_deref()).collect(),
        NodeParams::None => vec![],
    }
}

fn payload_groups_mut(p: &mut NodeParams<f32>) -> Vec<&mut Vec<f32>> {
    match p {
        NodeParams::Norm(s) => vec![&mut s.scale, &mut s.shift, &mut s.running_mean, &mut s.running_var],
        NodeParams::Conv(k) | NodeParams::Up(k) => std::iter::once(&mut k.weights).chain(k.bias.as_mut()).collect(),
        NodeParams::Cross(k) => [&mut k.fx, &mut k.fy, &mut k.fz].into_iter().chain(k.bias.as_mut()).collect(),
        NodeParams::Linear(l) => std::iter::once(&mut l.weights).chain(l.bias.as_mut()).collect(),
        NodeParams::None => vec![],
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode_kind(code: u8, a: &[u32]) -> Result<LayerKind> {
    let need = |n: usize| -> Result<()> {
        if a.len() == n {
            Ok(())
        } else {
            Err(Error::Malformed(format!("layer code {code} carries {} attributes, expected {n}", a.len())))
        }
    };
    let z = |i: usize| a[i] as usize;
    let flag = |i: usize| -> Result<bool> {
        match a[i] {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Malformed(format!("flag value {v}"))),
        }
    };
    Ok(match code {
        0 => {
            need(1)?;
            LayerKind::Input { channels: z(0) }
        }
        1 => {
            need(6)?;
            LayerKind::Conv {
                in_channels: z(0),
                out_channels: z(1),
                size: z(2),
                stride: z(3),
                padding: if flag(4)? { Padding::Valid } else { Padding::Same },
                bias: flag(5)?,
            }
        }
        2 => {
            need(4)?;
            LayerKind::CrossConv {
                in_channels: z(0),
                out_channels: z(1),
                len: z(2),
                bias: flag(3)?,
            }
        }
        3 => {
            need(3)?;
            LayerKind::UpConv {
                in_channels: z(0),
                out_channels: z(1),
                bias: flag(2)?,
            }
        }
        4 => {
            need(5)?;
            LayerKind::BatchNorm { channels: z(0) }
        }
        5 => {
            need(0)?;
            LayerKind::Relu
        }
        6 => {
            need(0)?;
            LayerKind::Sigmoid
        }
        7 => {
            need(1)?;
            LayerKind::MaxPool { window: z(0) }
        }
        8 => {
            need(2)?;
            LayerKind::Dropout {
                rate: words_f64(a[0], a[1]),
            }
        }
        9 => {
            need(0)?;
            LayerKind::Flatten
        }
        10 => {
            need(3)?;
            LayerKind::Linear {
                in_features: z(0),
                out_features: z(1),
                bias: flag(2)?,
            }
        }
        11 => {
            need(0)?;
            LayerKind::Add
        }
        12 => {
            need(0)?;
            LayerKind::Concat
        }
        _ => return Err(Error::Malformed(format!("unknown layer code {code}"))),
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Net<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let table_len = r.u32()? as usize;
    let table_end = r.pos + table_len;
    if table_end > bytes.len() {
        return Err(Error::Truncated {
            expected: table_end,
            found: bytes.len(),
        });
    }
    let mut t = Reader {
        buf: &bytes[..table_end],
        pos: r.pos,
    };
    let input_spatial = [t.u32()? as usize, t.u32()? as usize, t.u32()? as usize];
    let count = t.u32()? as usize;
    let mut nodes = Vec::with_capacity(count.min(1 << 16));
    let mut extras = Vec::new();
    for _ in 0..count {
        let code = t.u8()?;
        let stream = Stream::from_code(t.u8()?)?;
        let n_in = t.u8()? as usize;
        let inputs = (0..n_in).map(|_| t.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n_attr = t.u8()? as usize;
        let a = (0..n_attr).map(|_| t.u32()).collect::<Result<Vec<_>>>()?;
        let kind = decode_kind(code, &a)?;
        if code == 4 {
            extras.push((nodes.len(), words_f64(a[1], a[2]), words_f64(a[3], a[4])));
        }
        nodes.push(Node { kind, inputs, stream });
    }
    if t.pos != table_end {
        return Err(Error::Malformed("layer table length disagrees with its contents".into()));
    }
    r.pos = table_end;

    let spec = NetSpec { input_spatial, nodes };
    let mut net = Net::<f32>::zeros(spec)?;
    for (i, momentum, eps) in extras {
        if let NodeParams::Norm(s) = &mut net.params_mut()[i] {
            *s = BatchNormState { momentum, eps, ..s.clone() };
        }
    }
    let needed: usize = net.params().iter().flat_map(payload_groups).map(|g| 4 * g.len()).sum();
    if bytes.len() - r.pos < needed {
        return Err(Error::Truncated {
            expected: r.pos + needed,
            found: bytes.len(),
        });
    }
    if bytes.len() - r.pos > needed {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the payload",
            bytes.len() - r.pos - needed
        )));
    }
    for p in net.params_mut() {
        for g in payload_groups_mut(p) {
            for v in g.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            }
        }
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Net<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Net<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
