//! The three layer kinds the backbone is built from, with forward passes and
//! exact vector-Jacobian products.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Dims, Tensor4};
use crate::scalar::Scalar;

/// 2-D cross-correlation with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `out_c × in_c × k × k`
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        let d = weight.dims();
        if d.h != d.w || d.h == 0 {
            return Err(Error::rejected(format!(
                "conv kernel must be square and non-empty, got {d}"
            )));
        }
        if stride == 0 {
            return Err(Error::rejected("conv stride must be >= 1"));
        }
        if bias.len() != d.n {
            return Err(Error::rejected(format!(
                "conv bias has {} entries for {} output channels",
                bias.len(),
                d.n
            )));
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims().h
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        if input.c != self.in_channels() {
            return Err(Error::rejected(format!(
                "conv expects {} input channels, input is {input}",
                self.in_channels()
            )));
        }
        let h = conv_out_len(input.h, self.kernel(), self.stride, self.padding);
        let w = conv_out_len(input.w, self.kernel(), self.stride, self.padding);
        match (h, w) {
            (Some(h), Some(w)) => Ok(Dims::new(input.n, self.out_channels(), h, w)),
            _ => Err(Error::rejected(format!(
                "conv k={} s={} p={} does not fit input {input}",
                self.kernel(),
                self.stride,
                self.padding
            ))),
        }
    }
}

/// `floor((len + 2p − k)/s) + 1`, or `None` when the window does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input index `o·s + off − p` lies in
/// `[0, in_len)`.
#[inline]
fn valid_range(off: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    if in_len + pad <= off {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - off) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor4<T>, conv: &Conv2d<T>) -> Result<Tensor4<T>> {
    let id = input.dims();
    let od = conv.output_dims(id)?;
    let k = conv.kernel();
    let (s, p) = (conv.stride, conv.padding);
    let mut out = Tensor4::zeros(od);
    let w = conv.weight.as_slice();
    let x = input.as_slice();
    let plane_in = id.plane_len();
    let plane_out = od.plane_len();
    let out_data = out.as_mut_slice();
    for n in 0..id.n {
        for oc in 0..od.c {
            let obase = (n * od.c + oc) * plane_out;
            let oplane = &mut out_data[obase..obase + plane_out];
            oplane.fill(conv.bias[oc]);
            for ic in 0..id.c {
                let ibase = (n * id.c + ic) * plane_in;
                let iplane = &x[ibase..ibase + plane_in];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, id.h, od.h);
                    for kx in 0..k {
                        let wv = w[((oc * id.c + ic) * k + ky) * k + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, id.w, od.w);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let orow = &mut oplane[oy * od.w..(oy + 1) * od.w];
                            let irow = &iplane[iy * id.w..(iy + 1) * id.w];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let src = &irow[ix0..ix0 + (ox_hi - ox_lo)];
                                for (o, &i) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * irow[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer with respect to its input, weight and bias.
fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    conv: &Conv2d<T>,
    upstream: &Tensor4<T>,
) -> Result<(Tensor4<T>, ParamGrads<T>)> {
    let id = input.dims();
    let od = conv.output_dims(id)?;
    check_upstream(od, upstream)?;
    let k = conv.kernel();
    let (s, p) = (conv.stride, conv.padding);
    let mut grad_in = Tensor4::zeros(id);
    let mut grad_w = Tensor4::zeros(conv.weight.dims());
    let mut grad_b = vec![T::zero(); od.c];
    let w = conv.weight.as_slice();
    let x = input.as_slice();
    let g = upstream.as_slice();
    let plane_in = id.plane_len();
    let plane_out = od.plane_len();
    {
        let gi = grad_in.as_mut_slice();
        let gw = grad_w.as_mut_slice();
        for n in 0..id.n {
            for oc in 0..od.c {
                let obase = (n * od.c + oc) * plane_out;
                let gplane = &g[obase..obase + plane_out];
                let mut b = T::zero();
                for &v in gplane {
                    b += v;
                }
                grad_b[oc] += b;
                for ic in 0..id.c {
                    let ibase = (n * id.c + ic) * plane_in;
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = valid_range(ky, p, s, id.h, od.h);
                        for kx in 0..k {
                            let widx = ((oc * id.c + ic) * k + ky) * k + kx;
                            let wv = w[widx];
                            let (ox_lo, ox_hi) = valid_range(kx, p, s, id.w, od.w);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let grow = &gplane[oy * od.w..(oy + 1) * od.w];
                                let row_start = ibase + iy * id.w;
                                for ox in ox_lo..ox_hi {
                                    let xi = row_start + ox * s + kx - p;
                                    let gv = grow[ox];
                                    acc += gv * x[xi];
                                    gi[xi] += wv * gv;
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((
        grad_in,
        ParamGrads {
            weight: grad_w,
            bias: grad_b,
        },
    ))
}

pub fn leaky_relu_forward<T: Scalar>(input: &Tensor4<T>, alpha: T) -> Tensor4<T> {
    input.map(|v| if v >= T::zero() { v } else { alpha * v })
}

fn leaky_relu_backward<T: Scalar>(input: &Tensor4<T>, alpha: T, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_upstream(input.dims(), upstream)?;
    let data = input
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(&x, &g)| if x >= T::zero() { g } else { alpha * g })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

pub fn pool_output_dims(input: Dims, kernel: usize, stride: usize) -> Result<Dims> {
    if kernel == 0 || stride == 0 {
        return Err(Error::rejected("pool kernel and stride must be >= 1"));
    }
    if input.h < kernel || input.w < kernel {
        return Err(Error::rejected(format!(
            "pool window {kernel}x{kernel} larger than input {input}"
        )));
    }
    Ok(Dims::new(
        input.n,
        input.c,
        (input.h - kernel) / stride + 1,
        (input.w - kernel) / stride + 1,
    ))
}

/// Max pooling without padding. Returns the pooled tensor and, per output
/// element, the flat input index of the selected maximum. Ties resolve to the
/// lowest flat index.
pub fn max_pool2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor4<T>, Vec<usize>)> {
    let id = input.dims();
    let od = pool_output_dims(id, kernel, stride)?;
    let x = input.as_slice();
    let mut out = Vec::with_capacity(od.len());
    let mut argmax = Vec::with_capacity(od.len());
    for n in 0..id.n {
        for c in 0..id.c {
            let base = (n * id.c + c) * id.plane_len();
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut best_i = base + (oy * stride) * id.w + ox * stride;
                    let mut best = x[best_i];
                    for ky in 0..kernel {
                        let row = base + (oy * stride + ky) * id.w + ox * stride;
                        for kx in 0..kernel {
                            let v = x[row + kx];
                            if v > best {
                                best = v;
                                best_i = row + kx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(od, out)?, argmax))
}

fn max_pool2d_backward<T: Scalar>(input_dims: Dims, argmax: &[usize], upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    if upstream.as_slice().len() != argmax.len() {
        return Err(Error::rejected(format!(
            "pool upstream gradient {} does not match {} recorded outputs",
            upstream.dims(),
            argmax.len()
        )));
    }
    let mut grad = Tensor4::zeros(input_dims);
    let gs = grad.as_mut_slice();
    for (&i, &g) in argmax.iter().zip(upstream.as_slice()) {
        gs[i] += g;
    }
    Ok(grad)
}

fn check_upstream<T: Scalar>(expected: Dims, upstream: &Tensor4<T>) -> Result<()> {
    if upstream.dims() != expected {
        return Err(Error::rejected(format!(
            "upstream gradient is {}, layer output is {expected}",
            upstream.dims()
        )));
    }
    Ok(())
}

/// A parameterized or parameter-free layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    LeakyRelu { alpha: T },
    MaxPool2d { kernel: usize, stride: usize },
}

/// What a forward pass keeps for the matching backward pass.
#[derive(Debug, Clone)]
pub enum LayerContext<T> {
    Conv2d { input: Tensor4<T> },
    LeakyRelu { input: Tensor4<T> },
    MaxPool2d { input_dims: Dims, argmax: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::MaxPool2d { .. } => "max_pool2d",
        }
    }

    pub fn output_dims(&self, input: Dims) -> Result<Dims> {
        match self {
            Layer::Conv2d(c) => c.output_dims(input),
            Layer::LeakyRelu { .. } => Ok(input),
            Layer::MaxPool2d { kernel, stride } => pool_output_dims(input, *kernel, *stride),
        }
    }

    /// Inference-only forward pass.
    pub fn apply(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Layer::Conv2d(c) => conv2d_forward(input, c),
            Layer::LeakyRelu { alpha } => Ok(leaky_relu_forward(input, *alpha)),
            Layer::MaxPool2d { kernel, stride } => Ok(max_pool2d_forward(input, *kernel, *stride)?.0),
        }
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, LayerContext<T>)> {
        match self {
            Layer::Conv2d(c) => Ok((conv2d_forward(input, c)?, LayerContext::Conv2d { input: input.clone() })),
            Layer::LeakyRelu { alpha } => Ok((
                leaky_relu_forward(input, *alpha),
                LayerContext::LeakyRelu { input: input.clone() },
            )),
            Layer::MaxPool2d { kernel, stride } => {
                let (out, argmax) = max_pool2d_forward(input, *kernel, *stride)?;
                Ok((
                    out,
                    LayerContext::MaxPool2d {
                        input_dims: input.dims(),
                        argmax,
                    },
                ))
            }
        }
    }

    /// Vector-Jacobian product. `ctx` must come from this layer's `forward`.
    pub fn backward(
        &self,
        ctx: Option<&LayerContext<T>>,
        upstream: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Option<ParamGrads<T>>)> {
        let ctx =
            ctx.ok_or_else(|| Error::Contract(format!("backward through {} without a forward context", self.kind())))?;
        match (self, ctx) {
            (Layer::Conv2d(c), LayerContext::Conv2d { input }) => {
                let (gi, pg) = conv2d_backward(input, c, upstream)?;
                Ok((gi, Some(pg)))
            }
            (Layer::LeakyRelu { alpha }, LayerContext::LeakyRelu { input }) => {
                Ok((leaky_relu_backward(input, *alpha, upstream)?, None))
            }
            (Layer::MaxPool2d { .. }, LayerContext::MaxPool2d { input_dims, argmax }) => {
                Ok((max_pool2d_backward(*input_dims, argmax, upstream)?, None))
            }
            _ => Err(Error::Contract(format!(
                "{} layer received a context recorded by a different layer kind",
                self.kind()
            ))),
        }
    }
}
