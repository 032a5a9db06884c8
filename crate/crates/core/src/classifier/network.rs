//! Sequential convolutional network: layer specs, forward and backward
//! passes, and the binary model format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const MAGIC: &[u8; 5] = b"TRJC1";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub size: usize,
    pub channels: usize,
}

/// One layer. Convolutions use stride 1 and same padding; pooling uses
/// stride equal to its window; a dense layer flattens its input first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub(crate) fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Relu | LayerSpec::MaxPool { .. } => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Number of weights before the biases in this layer's parameter block.
    pub(crate) fn weight_count(&self) -> usize {
        self.param_count()
            - match *self {
                LayerSpec::Conv { out_channels, .. } => out_channels,
                LayerSpec::Dense { outputs, .. } => outputs,
                _ => 0,
            }
    }
}

/// Activation shape as (channels, height, width).
type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    /// All parameters, layer by layer, weights before biases.
    pub weights: Vec<f32>,
    pub seed: u64,
}

/// The reference stack for a given input.
pub fn reference_layers(input: InputSpec) -> Vec<LayerSpec> {
    let flat = 16 * (input.size / 4) * (input.size / 4);
    vec![
        LayerSpec::Conv {
            in_channels: input.channels,
            out_channels: 8,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        LayerSpec::Conv {
            in_channels: 8,
            out_channels: 16,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
        LayerSpec::Dense {
            inputs: flat,
            outputs: 2,
        },
    ]
}

/// Activation shapes after every layer, checking that the stack chains from
/// the input to two outputs.
fn layer_shapes(input: InputSpec, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    let bad = |msg: String| Err(Error::Format(msg));
    if input.size == 0 || !(input.channels == 1 || input.channels == 3) {
        return bad(format!(
            "unsupported input {}x{}x{}",
            input.size, input.size, input.channels
        ));
    }
    let mut shape = (input.channels, input.size, input.size);
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        shape = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels != shape.0 || stride != 1 || kernel % 2 == 0 || out_channels == 0 {
                    return bad(format!("layer {i}: convolution does not fit {shape:?}"));
                }
                (out_channels, shape.1, shape.2)
            }
            LayerSpec::Relu => shape,
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride != size || shape.1 < size || shape.2 < size {
                    return bad(format!("layer {i}: pooling does not fit {shape:?}"));
                }
                (shape.0, shape.1 / size, shape.2 / size)
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != shape.0 * shape.1 * shape.2 || outputs == 0 {
                    return bad(format!("layer {i}: dense layer does not fit {shape:?}"));
                }
                (outputs, 1, 1)
            }
        };
        shapes.push(shape);
    }
    if shape != (Label::ALL.len(), 1, 1) || !matches!(layers.last(), Some(LayerSpec::Dense { .. })) {
        return bad("network must end in a 2-way dense layer".into());
    }
    Ok(shapes)
}

impl Model {
    /// Reference architecture with variance-scaled normal weights and zero
    /// biases drawn from `seed`.
    pub fn new(input: InputSpec, seed: u64) -> Result<Self> {
        Self::with_layers(input, reference_layers(input), seed)
    }

    pub fn with_layers(input: InputSpec, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        layer_shapes(input, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let mut weights = Vec::new();
        for layer in &layers {
            let n = layer.weight_count();
            if n > 0 {
                let normal =
                    Normal::new(0.0, (2.0 / layer.fan_in() as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
                weights.extend((0..n).map(|_| normal.sample(&mut rng) as f32));
            }
            weights.extend(std::iter::repeat_n(0.0, layer.param_count() - n));
        }
        Ok(Self {
            input,
            layers,
            weights,
            seed,
        })
    }

    /// Reference architecture with every parameter zero.
    pub fn zeros(input: InputSpec) -> Result<Self> {
        let mut m = Self::new(input, 0)?;
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn params_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }

    pub(crate) fn net(&self) -> Net<'_> {
        let shapes = layer_shapes(self.input, &self.layers).expect("model validated on construction");
        Net {
            input: self.input,
            layers: &self.layers,
            shapes,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend(Label::ALL.iter().map(|l| l.index() as u8));
        out.push(self.input.channels as u8);
        out.extend_from_slice(&(self.input.size as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            let (kind, fields) = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => (0u8, [in_channels, out_channels, kernel, stride]),
                LayerSpec::Relu => (1, [0; 4]),
                LayerSpec::MaxPool { size, stride } => (2, [size, stride, 0, 0]),
                LayerSpec::Dense { inputs, outputs } => (3, [inputs, outputs, 0, 0]),
            };
            out.push(kind);
            for f in fields {
                out.extend_from_slice(&(f as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        let magic: [u8; 5] = r.take(5, "magic")?.try_into().expect("5 bytes");
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u8("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let classes = r.take(2, "class order")?;
        if classes != [0, 1] {
            return Err(Error::Format(format!("unsupported class order {classes:?}")));
        }
        let channels = r.u8("input channels")? as usize;
        let size = r.u32("input size")? as usize;
        let seed = r.u64("seed")?;
        let n_layers = r.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let kind = r.u8("layer kind")?;
            let mut f = [0usize; 4];
            for v in &mut f {
                *v = r.u32("layer shape")? as usize;
            }
            layers.push(match kind {
                0 => LayerSpec::Conv {
                    in_channels: f[0],
                    out_channels: f[1],
                    kernel: f[2],
                    stride: f[3],
                },
                1 => LayerSpec::Relu,
                2 => LayerSpec::MaxPool {
                    size: f[0],
                    stride: f[1],
                },
                3 => LayerSpec::Dense {
                    inputs: f[0],
                    outputs: f[1],
                },
                k => return Err(Error::Format(format!("unknown layer kind {k}"))),
            });
        }
        let input = InputSpec { size, channels };
        layer_shapes(input, &layers)?;
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        let n = r.u64("weight count")? as usize;
        if n != expected {
            return Err(Error::Format(format!("{n} weights stored, layers need {expected}")));
        }
        let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated("weights"))?, "weights")?;
        let weights = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if !r.0.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after model", r.0.len())));
        }
        Ok(Self {
            input,
            layers,
            weights,
            seed,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Truncated(what));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// A validated layer stack evaluated against an external parameter slice,
/// so training and finite differences can work in double precision.
pub(crate) struct Net<'a> {
    pub input: InputSpec,
    layers: &'a [LayerSpec],
    shapes: Vec<Shape>,
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    /// Input to each layer, plus the final logits.
    acts: Vec<Vec<f64>>,
    /// Winning input index per pooled output, for pooling layers.
    argmax: Vec<Vec<usize>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

impl Net<'_> {
    fn in_shape(&self, i: usize) -> Shape {
        if i == 0 {
            (self.input.channels, self.input.size, self.input.size)
        } else {
            self.shapes[i - 1]
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.param_count();
                o
            })
            .collect()
    }

    /// Forward pass over a CHW input.
    pub fn forward(&self, params: &[f64], input: Vec<f64>) -> Trace {
        let offsets = self.offsets();
        let mut acts = vec![input];
        let mut argmax = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("input present");
            let (c, h, w) = self.in_shape(i);
            let p = &params[offsets[i]..offsets[i] + layer.param_count()];
            let mut winners = Vec::new();
            let y = match *layer {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => {
                    let (wts, bias) = p.split_at(layer.weight_count());
                    conv_forward(x, (c, h, w), wts, bias, out_channels, kernel)
                }
                LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool { size, .. } => {
                    let (y, idx) = pool_forward(x, (c, h, w), size);
                    winners = idx;
                    y
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let (wts, bias) = p.split_at(layer.weight_count());
                    (0..outputs)
                        .map(|o| bias[o] + dot(&wts[o * inputs..(o + 1) * inputs], x))
                        .collect()
                }
            };
            argmax.push(winners);
            acts.push(y);
        }
        Trace { acts, argmax }
    }

    /// Accumulates parameter gradients for upstream gradient `grad` at the
    /// logits into `out`.
    pub fn backward(&self, params: &[f64], trace: &Trace, grad: Vec<f64>, out: &mut [f64]) {
        let offsets = self.offsets();
        let mut g = grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let (c, h, w) = self.in_shape(i);
            let range = offsets[i]..offsets[i] + layer.param_count();
            let need_input_grad = i > 0;
            g = match *layer {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => {
                    let nw = layer.weight_count();
                    let (gw, gb) = out[range.clone()].split_at_mut(nw);
                    conv_backward(
                        x,
                        (c, h, w),
                        &params[range.start..range.start + nw],
                        out_channels,
                        kernel,
                        &g,
                        gw,
                        gb,
                        need_input_grad,
                    )
                }
                LayerSpec::Relu => g.iter().zip(x).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
                LayerSpec::MaxPool { .. } => {
                    let mut dx = vec![0.0; x.len()];
                    for (o, &src) in trace.argmax[i].iter().enumerate() {
                        dx[src] += g[o];
                    }
                    dx
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let nw = layer.weight_count();
                    let (gw, gb) = out[range.clone()].split_at_mut(nw);
                    let wts = &params[range.start..range.start + nw];
                    let mut dx = vec![0.0; if need_input_grad { inputs } else { 0 }];
                    for o in 0..outputs {
                        gb[o] += g[o];
                        for (gw, &xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                            *gw += g[o] * xv;
                        }
                        if need_input_grad {
                            for (d, &wv) in dx.iter_mut().zip(&wts[o * inputs..(o + 1) * inputs]) {
                                *d += g[o] * wv;
                            }
                        }
                    }
                    dx
                }
            };
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row and column ranges of output pixels whose kernel tap at offset `d`
/// lands inside an axis of length `n`.
fn tap_range(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(lo as isize) as usize;
    lo..hi
}

fn conv_forward(x: &[f64], (c, h, w): Shape, wts: &[f64], bias: &[f64], out_c: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut y = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let yo = &mut y[o * plane..(o + 1) * plane];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c {
            let xi = &x[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = wts[((o * c + i) * k + ky) * k + kx];
                    let cols = tap_range(w, dx);
                    for row in tap_range(h, dy) {
                        let src = (row as isize + dy) as usize * w;
                        let dst = &mut yo[row * w + cols.start..row * w + cols.end];
                        let s0 = (src as isize + cols.start as isize + dx) as usize;
                        for (a, &b) in dst.iter_mut().zip(&xi[s0..s0 + cols.len()]) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    (c, h, w): Shape,
    wts: &[f64],
    out_c: usize,
    k: usize,
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut dx = vec![0.0; if need_input_grad { x.len() } else { 0 }];
    for o in 0..out_c {
        let go = &g[o * plane..(o + 1) * plane];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..c {
            let xi = &x[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dxo = kx as isize - pad;
                    let wi = ((o * c + i) * k + ky) * k + kx;
                    let cols = tap_range(w, dxo);
                    let mut acc = 0.0;
                    for row in tap_range(h, dy) {
                        let src = (row as isize + dy) as usize * w;
                        let s0 = (src as isize + cols.start as isize + dxo) as usize;
                        let grow = &go[row * w + cols.start..row * w + cols.end];
                        acc += dot(grow, &xi[s0..s0 + cols.len()]);
                        if need_input_grad {
                            let wv = wts[wi];
                            for (d, &gv) in dx[i * plane + s0..i * plane + s0 + cols.len()].iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], (c, h, w): Shape, s: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / s, w / s);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = ch * h * w + r * s * w + col * s;
                for dy in 0..s {
                    for dx in 0..s {
                        let j = ch * h * w + (r * s + dy) * w + col * s + dx;
                        // first maximum wins ties
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(size: usize, channels: usize) -> InputSpec {
        InputSpec { size, channels }
    }

    #[test]
    fn reference_parameter_count() {
        let m = Model::new(spec(64, 3), 1).unwrap();
        assert_eq!(m.param_count(), (8 * 27 + 8) + (16 * 72 + 16) + (4096 * 2 + 2));
        assert!(m.weights[..216].iter().any(|&w| w != 0.0));
        assert!(m.weights[216..224].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn initialization_is_seeded() {
        assert_eq!(Model::new(spec(16, 1), 5).unwrap(), Model::new(spec(16, 1), 5).unwrap());
        assert_ne!(
            Model::new(spec(16, 1), 5).unwrap().weights,
            Model::new(spec(16, 1), 6).unwrap().weights
        );
    }

    #[test]
    fn rejects_incompatible_stacks() {
        let input = spec(8, 1);
        let bad = vec![LayerSpec::Dense { inputs: 63, outputs: 2 }];
        assert!(matches!(Model::with_layers(input, bad, 0), Err(Error::Format(_))));
        let three_way = vec![LayerSpec::Dense { inputs: 64, outputs: 3 }];
        assert!(Model::with_layers(input, three_way, 0).is_err());
        assert!(Model::new(spec(8, 2), 0).is_err());
    }

    #[test]
    fn conv_of_identity_kernel_copies_input() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(
            conv_forward(&x, (1, 4, 4), &k, &[0.5], 1, 3),
            x.iter().map(|v| v + 0.5).collect::<Vec<_>>()
        );
        // a right-shift tap reads the left neighbour and pads with zero
        let mut left = vec![0.0; 9];
        left[3] = 1.0;
        let y = conv_forward(&x, (1, 4, 4), &left, &[0.0], 1, 3);
        assert_eq!(&y[..4], &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn pooling_takes_block_maxima() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0];
        let (y, idx) = pool_forward(&x, (1, 2, 4), 2);
        assert_eq!(y, vec![5.0, 7.0]);
        assert_eq!(idx, vec![1, 6]);
    }

    #[test]
    fn bytes_round_trip() {
        let m = Model::new(spec(16, 3), 9).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..5], b"TRJC1");
        assert_eq!(bytes[5], FORMAT_VERSION);
        assert_eq!(Model::from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn load_errors_are_distinct() {
        let bytes = Model::new(spec(16, 1), 9).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Model::from_bytes(&bad), Err(Error::BadMagic(m)) if &m == b"XXXX1"));
        let mut newer = bytes.clone();
        newer[5] = 2;
        assert!(matches!(
            Model::from_bytes(&newer),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(Model::from_bytes(cut), Err(Error::Truncated("weights"))));
        assert!(matches!(Model::from_bytes(&bytes[..3]), Err(Error::Truncated("magic"))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Model::from_bytes(&long), Err(Error::Format(_))));
    }
}
