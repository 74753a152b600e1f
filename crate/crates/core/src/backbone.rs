//! Config-driven fully convolutional backbone and its receptive-field geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::{Blob, Checkpoint};
use crate::numerics::layers::{conv_out_len, Conv2d, Layer, LayerContext};
use crate::numerics::tensor::{Dims, Tensor4};
use crate::scalar::Scalar;

pub const DEFAULT_LEAKY_ALPHA: f64 = 0.01;

fn default_stride() -> usize {
    1
}

fn default_alpha() -> f64 {
    DEFAULT_LEAKY_ALPHA
}

fn default_in_channels() -> usize {
    3
}

/// One entry of a backbone config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    LeakyRelu {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn leaky() -> Self {
        LayerSpec::LeakyRelu {
            alpha: DEFAULT_LEAKY_ALPHA,
        }
    }

    pub fn pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::MaxPool2d { kernel, stride }
    }

    /// (kernel, stride, padding) as seen by receptive-field arithmetic.
    fn window(&self) -> (usize, usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => (kernel, stride, padding),
            LayerSpec::LeakyRelu { .. } => (1, 1, 0),
            LayerSpec::MaxPool2d { kernel, stride } => (kernel, stride, 0),
        }
    }
}

/// An ordered layer stack whose last entry is the 1×1 score projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// (height, width)
    pub input_size: [usize; 2],
    pub layers: Vec<LayerSpec>,
    pub out_channels: usize,
}

impl BackboneSpec {
    /// `cnn-desk`: three conv/leaky/pool blocks (16, 32, 64 channels) and a
    /// 1×1 projection. 224×224 input gives a 28×28 map with jump 8.
    pub fn cnn_desk(out_channels: usize) -> Self {
        Self::three_block("cnn-desk", [224, 224], [16, 32, 64], out_channels)
    }

    /// `cnn-desk-small`: the same topology and widths at 64×64, producing an
    /// 8×8 map. Used by the desk-scale profile.
    pub fn cnn_desk_small(out_channels: usize) -> Self {
        Self::three_block("cnn-desk-small", [64, 64], [16, 32, 64], out_channels)
    }

    pub fn three_block(name: &str, input_size: [usize; 2], widths: [usize; 3], out_channels: usize) -> Self {
        let mut layers = Vec::new();
        for w in widths {
            layers.push(LayerSpec::conv(w, 3, 1, 1));
            layers.push(LayerSpec::leaky());
            layers.push(LayerSpec::pool(2, 2));
        }
        layers.push(LayerSpec::conv(out_channels, 1, 1, 0));
        BackboneSpec {
            name: name.to_string(),
            in_channels: 3,
            input_size,
            layers,
            out_channels,
        }
    }

    pub fn named(name: &str, out_channels: usize) -> Option<Self> {
        match name {
            "cnn-desk" => Some(Self::cnn_desk(out_channels)),
            "cnn-desk-small" => Some(Self::cnn_desk_small(out_channels)),
            _ => None,
        }
    }

    pub fn with_input_size(mut self, input_size: [usize; 2]) -> Self {
        self.input_size = input_size;
        self
    }

    /// Symbolically runs the chain and returns the per-layer output dims
    /// (batch 1).
    pub fn validate(&self) -> Result<Vec<Dims>> {
        let spec_err = |layer: usize, reason: String| Error::Spec { layer, reason };
        if self.layers.is_empty() {
            return Err(spec_err(0, "no layers".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(spec_err(0, "channel counts must be >= 1".into()));
        }
        let mut d = Dims::new(1, self.in_channels, self.input_size[0], self.input_size[1]);
        if d.h == 0 || d.w == 0 {
            return Err(spec_err(0, format!("input size {:?} is empty", self.input_size)));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            d = match *l {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(spec_err(i, "conv needs kernel, stride, out_channels >= 1".into()));
                    }
                    match (
                        conv_out_len(d.h, kernel, stride, padding),
                        conv_out_len(d.w, kernel, stride, padding),
                    ) {
                        (Some(h), Some(w)) => Dims::new(1, out_channels, h, w),
                        _ => {
                            return Err(spec_err(
                                i,
                                format!("conv k={kernel} p={padding} does not fit {}x{}", d.h, d.w),
                            ))
                        }
                    }
                }
                LayerSpec::LeakyRelu { alpha } => {
                    if !(0.0..1.0).contains(&alpha) {
                        return Err(spec_err(i, format!("leaky_relu alpha {alpha} outside [0, 1)")));
                    }
                    d
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    if kernel == 0 || stride == 0 {
                        return Err(spec_err(i, "pool needs kernel, stride >= 1".into()));
                    }
                    if d.h < kernel || d.w < kernel {
                        return Err(spec_err(i, format!("pool window {kernel} larger than {}x{}", d.h, d.w)));
                    }
                    Dims::new(1, d.c, (d.h - kernel) / stride + 1, (d.w - kernel) / stride + 1)
                }
            };
            out.push(d);
        }
        let last = self.layers.len() - 1;
        match self.layers[last] {
            LayerSpec::Conv2d {
                out_channels,
                kernel: 1,
                ..
            } if out_channels == self.out_channels => {}
            _ => {
                return Err(spec_err(
                    last,
                    format!(
                        "final layer must be a 1x1 conv with {} output channels",
                        self.out_channels
                    ),
                ))
            }
        }
        let geom = self.receptive_field_unchecked(d.h, d.w);
        let (h, w) = (self.input_size[0] as f64, self.input_size[1] as f64);
        let (r0, c0) = geom.center(0, 0);
        let (r1, c1) = geom.center(geom.out_dims.0 - 1, geom.out_dims.1 - 1);
        if r0 < 0.0 || c0 < 0.0 || r1 >= h || c1 >= w {
            return Err(spec_err(
                last,
                format!("output field centers span [{r0}, {r1}]x[{c0}, {c1}], outside the {h}x{w} input"),
            ));
        }
        Ok(out)
    }

    pub fn receptive_field(&self) -> Result<FieldGeometry> {
        let dims = self.validate()?;
        let last = dims.last().expect("validated spec has layers");
        Ok(self.receptive_field_unchecked(last.h, last.w))
    }

    fn receptive_field_unchecked(&self, u: usize, v: usize) -> FieldGeometry {
        let mut jump = 1usize;
        let mut extent = 1usize;
        let mut start = 0.0f64;
        for l in &self.layers {
            let (k, s, p) = l.window();
            extent += (k - 1) * jump;
            start += ((k as f64 - 1.0) / 2.0 - p as f64) * jump as f64;
            jump *= s;
        }
        FieldGeometry {
            jump,
            extent,
            start,
            out_dims: (u, v),
        }
    }
}

/// Receptive-field geometry of the output map, identical on both axes since
/// all kernels are square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGeometry {
    /// Input pixels per output-cell step (product of strides).
    pub jump: usize,
    /// Receptive-field size in input pixels.
    pub extent: usize,
    /// Input coordinate of output cell (0, 0)'s field center. Half-integer for
    /// even kernels.
    pub start: f64,
    /// (u, v)
    pub out_dims: (usize, usize),
}

impl FieldGeometry {
    /// Input-space (row, col) of the field center of output cell (row, col).
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let j = self.jump as f64;
        (self.start + row as f64 * j, self.start + col as f64 * j)
    }
}

/// Forward contexts for one traced pass, one per layer.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    contexts: Vec<LayerContext<T>>,
}

/// A built network with owned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    spec: BackboneSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Backbone<T> {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases, drawn in
    /// layer order from a ChaCha8 stream seeded by `seed`.
    pub fn build(spec: BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = spec.in_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            layers.push(match *l {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let fan_in = (in_c * kernel * kernel) as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    let dims = Dims::new(out_channels, in_c, kernel, kernel);
                    let w: Vec<T> = (0..dims.len()).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
                    in_c = out_channels;
                    Layer::Conv2d(Conv2d::new(
                        Tensor4::from_vec(dims, w)?,
                        vec![T::zero(); out_channels],
                        stride,
                        padding,
                    )?)
                }
                LayerSpec::LeakyRelu { alpha } => Layer::LeakyRelu { alpha: T::of(alpha) },
                LayerSpec::MaxPool2d { kernel, stride } => Layer::MaxPool2d { kernel, stride },
            });
        }
        Ok(Backbone { spec, layers })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn geometry(&self) -> FieldGeometry {
        self.spec.receptive_field().expect("spec validated at build")
    }

    fn check_input(&self, batch: &Tensor4<T>) -> Result<()> {
        let d = batch.dims();
        let [h, w] = self.spec.input_size;
        if d.c != self.spec.in_channels || d.h != h || d.w != w {
            return Err(Error::rejected(format!(
                "backbone {} expects Nx{}x{h}x{w} input, got {d}",
                self.spec.name, self.spec.in_channels
            )));
        }
        Ok(())
    }

    /// Score map `n × C × u × v`.
    pub fn forward(&self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for l in &self.layers {
            x = l.apply(&x)?;
        }
        Ok(x)
    }

    /// Forward pass that also records what `backward` needs.
    pub fn forward_traced(&self, batch: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut contexts = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, ctx) = l.forward(&x)?;
            contexts.push(ctx);
            x = y;
        }
        Ok((x, Trace { contexts }))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the score map). Returns the
    /// input gradient and parameter gradients in `param_names` order.
    pub fn backward(&self, trace: &Trace<T>, upstream: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<Vec<T>>)> {
        if trace.contexts.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "trace has {} contexts for {} layers",
                trace.contexts.len(),
                self.layers.len()
            )));
        }
        let mut grads_rev = Vec::new();
        let mut g = upstream.clone();
        for (l, ctx) in self.layers.iter().zip(&trace.contexts).rev() {
            let (gi, pg) = l.backward(Some(ctx), &g)?;
            if let Some(pg) = pg {
                grads_rev.push(pg.bias);
                grads_rev.push(pg.weight.into_vec());
            }
            g = gi;
        }
        grads_rev.reverse();
        Ok((g, grads_rev))
    }

    /// `layer{i}.weight`, `layer{i}.bias` for each conv layer, in order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Layer::Conv2d(_) = l {
                names.push(format!("layer{i}.weight"));
                names.push(format!("layer{i}.bias"));
            }
        }
        names
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Conv2d(c) = l {
                out.push(c.weight.as_slice());
                out.push(&c.bias[..]);
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::Conv2d(c) = l {
                out.push(c.weight.as_mut_slice());
                out.push(&mut c.bias[..]);
            }
        }
        out
    }

    fn param_dims(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Conv2d(c) = l {
                out.push(c.weight.dims().as_array().to_vec());
                out.push(vec![c.bias.len()]);
            }
        }
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// All parameters concatenated in `param_names` order.
    pub fn flat_params(&self) -> Vec<T> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::rejected(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn export_params(&self) -> Vec<Blob> {
        self.param_names()
            .into_iter()
            .zip(self.param_dims())
            .zip(self.param_slices())
            .map(|((name, dims), vals)| Blob {
                name,
                dims,
                values: vals.iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect()
    }

    /// Replaces parameters with the matching blobs of `ck`. Names and dims must
    /// agree with this backbone's spec.
    pub fn import_params(&mut self, ck: &Checkpoint) -> Result<()> {
        let names = self.param_names();
        let dims = self.param_dims();
        for (name, d) in names.iter().zip(&dims) {
            let b = ck.require(name)?;
            if &b.dims != d {
                return Err(Error::Checkpoint(format!(
                    "blob {name} has dims {:?}, backbone {} expects {d:?}",
                    b.dims, self.spec.name
                )));
            }
        }
        for (name, slot) in names.iter().zip(self.param_slices_mut()) {
            let b = ck.require(name)?;
            for (dst, &src) in slot.iter_mut().zip(&b.values) {
                *dst = T::of(src);
            }
        }
        Ok(())
    }
}
