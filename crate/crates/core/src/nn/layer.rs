use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One stage of a strict layer chain. Image tensors are `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) 2-D convolution.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    /// Fully connected; flattens its input.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output shape for `input`, or a message describing why the input is unusable.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                    return Err("conv2d parameters must be positive".into());
                }
                let [c, h, w] = three(input)?;
                if c != in_channels {
                    return Err(format!("expected {in_channels} input channels, got {c}"));
                }
                if h < kernel || w < kernel {
                    return Err(format!("{h}x{w} input smaller than {kernel}x{kernel} kernel"));
                }
                Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err("maxpool parameters must be positive".into());
                }
                let [c, h, w] = three(input)?;
                if h < size || w < size {
                    return Err(format!("{h}x{w} input smaller than {size}x{size} pool"));
                }
                Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense parameters must be positive".into());
                }
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(format!("expected {inputs} inputs, got {n}"));
                }
                Ok(vec![outputs])
            }
        }
    }

    /// Shapes of the trainable tensors: `[weights, bias]` or nothing.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    /// `(fan_in, fan_out)` used by the uniform Glorot initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }
    }
}

fn three(shape: &[usize]) -> Result<[usize; 3], String> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expected a [channels, height, width] input, got {shape:?}")),
    }
}

/// Side information a layer keeps from the forward pass for its backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Saved {
    None,
    /// Flat input index of the selected maximum for every pooled output.
    ArgMax(Vec<usize>),
}

pub(crate) fn forward<T: Scalar>(
    spec: &LayerSpec,
    params: &[Tensor<T>],
    input: &Tensor<T>,
    out_shape: &[usize],
) -> (Tensor<T>, Saved) {
    let x = input.values();
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let wt = params[0].values();
            let bias = params[1].values();
            let mut out = vec![T::zero(); out_channels * oh * ow];
            for oc in 0..out_channels {
                let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                plane.iter_mut().for_each(|v| *v = bias[oc]);
                for ic in 0..in_channels {
                    let src = &x[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let k = wt[((oc * in_channels + ic) * kernel + ky) * kernel + kx];
                            for oy in 0..oh {
                                let row = &src[(oy * stride + ky) * w + kx..];
                                let dst = &mut plane[oy * ow..(oy + 1) * ow];
                                if stride == 1 {
                                    for (d, s) in dst.iter_mut().zip(&row[..ow]) {
                                        *d += k * *s;
                                    }
                                } else {
                                    for (ox, d) in dst.iter_mut().enumerate() {
                                        *d += k * row[ox * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (tensor(out_shape, out), Saved::None)
        }
        LayerSpec::MaxPool { size, stride } => {
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = Vec::with_capacity(c * oh * ow);
            let mut arg = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        // Row-major scan with strict `>` keeps the lowest flat index on ties.
                        let mut best = (ch * h + oy * stride) * w + ox * stride;
                        for ky in 0..size {
                            for kx in 0..size {
                                let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(x[best]);
                        arg.push(best);
                    }
                }
            }
            (tensor(out_shape, out), Saved::ArgMax(arg))
        }
        LayerSpec::Relu => {
            let out = x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
            (tensor(out_shape, out), Saved::None)
        }
        LayerSpec::Dense { inputs, outputs } => {
            let wt = params[0].values();
            let bias = params[1].values();
            let out = (0..outputs)
                .map(|o| {
                    let row = &wt[o * inputs..(o + 1) * inputs];
                    row.iter().zip(x).fold(bias[o], |acc, (&a, &b)| acc + a * b)
                })
                .collect();
            (tensor(out_shape, out), Saved::None)
        }
        LayerSpec::Softmax => (tensor(out_shape, crate::nn::softmax(x)), Saved::None),
    }
}

/// Returns the gradient w.r.t. the layer input and its parameter gradients.
pub(crate) fn backward<T: Scalar>(
    spec: &LayerSpec,
    params: &[Tensor<T>],
    input: &Tensor<T>,
    output: &Tensor<T>,
    saved: &Saved,
    grad_out: &[T],
) -> (Vec<T>, Vec<Tensor<T>>) {
    let x = input.values();
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (output.shape()[1], output.shape()[2]);
            let wt = params[0].values();
            let mut dx = vec![T::zero(); x.len()];
            let mut dw = vec![T::zero(); wt.len()];
            let mut db = vec![T::zero(); out_channels];
            for oc in 0..out_channels {
                let g = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
                db[oc] = g.iter().copied().sum();
                for ic in 0..in_channels {
                    let src = &x[ic * h * w..(ic + 1) * h * w];
                    let dsrc = &mut dx[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let wi = ((oc * in_channels + ic) * kernel + ky) * kernel + kx;
                            let k = wt[wi];
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let base = (oy * stride + ky) * w + kx;
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                if stride == 1 {
                                    for (ox, &go) in grow.iter().enumerate() {
                                        acc += go * src[base + ox];
                                        dsrc[base + ox] += k * go;
                                    }
                                } else {
                                    for (ox, &go) in grow.iter().enumerate() {
                                        acc += go * src[base + ox * stride];
                                        dsrc[base + ox * stride] += k * go;
                                    }
                                }
                            }
                            dw[wi] = acc;
                        }
                    }
                }
            }
            (
                dx,
                vec![tensor(params[0].shape(), dw), tensor(params[1].shape(), db)],
            )
        }
        LayerSpec::MaxPool { .. } => {
            let mut dx = vec![T::zero(); x.len()];
            if let Saved::ArgMax(arg) = saved {
                for (&i, &g) in arg.iter().zip(grad_out) {
                    dx[i] += g;
                }
            }
            (dx, Vec::new())
        }
        LayerSpec::Relu => {
            let dx = x
                .iter()
                .zip(grad_out)
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect();
            (dx, Vec::new())
        }
        LayerSpec::Dense { inputs, outputs } => {
            let wt = params[0].values();
            let mut dx = vec![T::zero(); inputs];
            let mut dw = vec![T::zero(); inputs * outputs];
            for o in 0..outputs {
                let g = grad_out[o];
                let row = &wt[o * inputs..(o + 1) * inputs];
                let drow = &mut dw[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    dx[i] += row[i] * g;
                    drow[i] = g * x[i];
                }
            }
            (
                dx,
                vec![
                    tensor(params[0].shape(), dw),
                    tensor(params[1].shape(), grad_out.to_vec()),
                ],
            )
        }
        LayerSpec::Softmax => {
            let y = output.values();
            let dot: T = y.iter().zip(grad_out).map(|(&a, &b)| a * b).sum();
            let dx = y.iter().zip(grad_out).map(|(&p, &g)| p * (g - dot)).collect();
            (dx, Vec::new())
        }
    }
}

fn tensor<T: Scalar>(shape: &[usize], values: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), values).expect("layer kernels produce consistent shapes")
}
