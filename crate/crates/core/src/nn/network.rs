use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{self, LayerSpec, Saved};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<T>>,
}

/// A validated layer chain: every layer's output shape is the next layer's input.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a chain with zero-filled parameters.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|spec| {
                let params = spec.param_shapes().into_iter().map(Tensor::zeros).collect();
                Layer { spec, params }
            })
            .collect();
        Self::from_layers(input_shape, layers)
    }

    /// Builds a chain from layers that already carry parameters.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let expected = layer.spec.param_shapes();
            if expected.len() != layer.params.len()
                || expected.iter().zip(&layer.params).any(|(s, p)| s.as_slice() != p.shape())
            {
                return Err(Error::InvalidLayer {
                    layer: i,
                    reason: format!("parameter shapes do not match {:?}", expected),
                });
            }
            let next = layer
                .spec
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|reason| Error::InvalidLayer { layer: i, reason })?;
            shapes.push(next);
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Uniform Glorot init, `U[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`; biases zero.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if let Some((fan_in, fan_out)) = layer.spec.fans() {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in layer.params[0].values_mut() {
                    *v = T::lit(rng.random_range(-a..=a));
                }
                layer.params[1].values_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(self);
        tape.forward(input)?;
        Ok(tape.into_output().expect("forward recorded"))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: self.layers[0].spec.kind(),
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Applies `params -= step * grads` layer by layer.
    pub fn apply_update(&mut self, grads: &[Vec<Tensor<T>>], step: T) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (p, gp) in layer.params.iter_mut().zip(g) {
                for (v, &d) in p.values_mut().iter_mut().zip(gp.values()) {
                    *v -= step * d;
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                })
                .collect(),
            shapes: self.shapes.clone(),
        }
    }
}

/// Gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// Per layer, in the same order as [`Layer::params`].
    pub params: Vec<Vec<Tensor<T>>>,
    /// The recorded input tensor, carrying its gradient in `grad`.
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (ta, tb) in a.iter_mut().zip(b) {
                for (x, &y) in ta.values_mut().iter_mut().zip(tb.values()) {
                    *x += y;
                }
            }
        }
        if let (Some(a), Some(b)) = (self.input.grad.as_mut(), other.input.grad.as_ref()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn input_grad(&self) -> &[T] {
        self.input.grad.as_deref().expect("backward always fills the input gradient")
    }
}

#[derive(Clone, Debug)]
pub struct LossBackward<T> {
    pub loss: T,
    pub scores: Vec<T>,
    pub probs: Vec<T>,
    pub grads: Gradients<T>,
}

struct Record<T> {
    /// `activations[i]` is the input to layer `i`; the last one is the output.
    activations: Vec<Tensor<T>>,
    saved: Vec<Saved>,
}

/// Records one forward pass over a network and differentiates it.
pub struct Tape<'n, T> {
    net: &'n Network<T>,
    record: Option<Record<T>>,
}

impl<'n, T: Scalar> Tape<'n, T> {
    pub fn new(net: &'n Network<T>) -> Self {
        Tape { net, record: None }
    }

    /// Runs the chain, replacing any previous record.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<&Tensor<T>> {
        self.net.check_input(input)?;
        let n = self.net.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut saved = Vec::with_capacity(n);
        activations.push(Tensor::new(input.shape().to_vec(), input.values().to_vec())?);
        for (i, l) in self.net.layers.iter().enumerate() {
            let (out, s) =
                layer::forward(&l.spec, &l.params, &activations[i], &self.net.shapes[i + 1]);
            activations.push(out);
            saved.push(s);
        }
        self.record = Some(Record { activations, saved });
        Ok(self.output().expect("just recorded"))
    }

    pub fn output(&self) -> Option<&Tensor<T>> {
        self.record.as_ref().and_then(|r| r.activations.last())
    }

    fn into_output(self) -> Option<Tensor<T>> {
        self.record.and_then(|mut r| r.activations.pop())
    }

    /// Propagates `grad_output` (gradient w.r.t. the network output) to every
    /// parameter and to the input. Each call starts from zero.
    pub fn backward(&self, grad_output: &[T]) -> Result<Gradients<T>> {
        let record = self.record.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let out = record.activations.last().expect("non-empty");
        if grad_output.len() != out.len() {
            return Err(Error::LengthMismatch {
                what: "output gradient",
                expected: out.len(),
                actual: grad_output.len(),
            });
        }
        let n = self.net.layers.len();
        let mut params = vec![Vec::new(); n];
        let mut grad = grad_output.to_vec();
        for i in (0..n).rev() {
            let l = &self.net.layers[i];
            let (dx, dp) = layer::backward(
                &l.spec,
                &l.params,
                &record.activations[i],
                &record.activations[i + 1],
                &record.saved[i],
                &grad,
            );
            params[i] = dp;
            grad = dx;
        }
        let mut input = record.activations[0].clone();
        input.grad = Some(grad);
        Ok(Gradients { params, input })
    }

    /// Backward from the softmax loss of `class` on the recorded output scores.
    pub fn backward_loss(&self, class: usize) -> Result<LossBackward<T>> {
        let scores = self.output().ok_or(Error::BackwardBeforeForward)?.values().to_vec();
        let (loss, probs, g) = super::softmax_loss_grad(&scores, class)?;
        let grads = self.backward(&g)?;
        Ok(LossBackward {
            loss,
            scores,
            probs,
            grads,
        })
    }
}
