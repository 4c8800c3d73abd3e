//! The differentiable-scorer abstraction shared by discovery and the baselines.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, Network, Tape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalar function of the class scores that is differentiated w.r.t. the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Raw class score `S_c`.
    Score(usize),
    /// Softmax loss `l_c`.
    Loss(usize),
}

#[derive(Clone, Debug)]
pub struct InputGradient<T> {
    pub scores: Vec<T>,
    pub probs: Vec<T>,
    /// Value of the differentiated objective.
    pub value: T,
    /// Gradient of the objective, laid out like the input image.
    pub grad: Image<T>,
}

/// A classifier whose scores can be differentiated w.r.t. its input image.
pub trait Classifier<T: Scalar>: Sync {
    fn num_classes(&self) -> usize;

    fn scores(&self, image: &Image<T>) -> Result<Vec<T>>;

    /// One forward and one backward pass.
    fn input_gradient(&self, image: &Image<T>, objective: Objective) -> Result<InputGradient<T>>;

    fn predict_proba(&self, image: &Image<T>) -> Result<Vec<T>> {
        Ok(nn::softmax(&self.scores(image)?))
    }

    /// Argmax of the probabilities, lowest class index on ties.
    fn predict(&self, image: &Image<T>) -> Result<usize> {
        Ok(nn::argmax(&self.predict_proba(image)?))
    }
}

/// `d l_c / d I` evaluated at `image`.
pub fn input_gradient<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    class: usize,
) -> Result<Image<T>> {
    Ok(model.input_gradient(image, Objective::Loss(class))?.grad)
}

fn image_tensor<T: Scalar>(net: &Network<T>, image: &Image<T>) -> Result<Tensor<T>> {
    let want = net.input_shape();
    let t = image.to_tensor();
    if t.shape() == want {
        return Ok(t);
    }
    if want.iter().product::<usize>() == t.len() && want.len() == 1 {
        return t.reshaped(want.to_vec());
    }
    Err(Error::ShapeMismatch {
        layer: 0,
        kind: net.layers()[0].spec.kind(),
        expected: want.to_vec(),
        actual: t.shape().to_vec(),
    })
}

pub(crate) fn network_input_gradient<T: Scalar>(
    net: &Network<T>,
    image: &Image<T>,
    objective: Objective,
) -> Result<InputGradient<T>> {
    let input = image_tensor(net, image)?;
    let mut tape = Tape::new(net);
    let scores = tape.forward(&input)?.values().to_vec();
    let (value, probs, seed) = match objective {
        Objective::Loss(c) => nn::softmax_loss_grad(&scores, c)?,
        Objective::Score(c) => {
            if c >= scores.len() {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: scores.len(),
                });
            }
            let mut seed = vec![T::zero(); scores.len()];
            seed[c] = T::one();
            (scores[c], nn::softmax(&scores), seed)
        }
    };
    let grads = tape.backward(&seed)?;
    let (w, h, ch) = image.dims();
    let grad = Image::new_unit_unchecked(w, h, ch, grads.input_grad().to_vec())?;
    Ok(InputGradient {
        scores,
        probs,
        value,
        grad,
    })
}

/// A bare network scores images whose size matches its input exactly.
impl<T: Scalar> Classifier<T> for Network<T> {
    fn num_classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    fn scores(&self, image: &Image<T>) -> Result<Vec<T>> {
        Ok(self.forward(&image_tensor(self, image)?)?.into_values())
    }

    fn input_gradient(&self, image: &Image<T>, objective: Objective) -> Result<InputGradient<T>> {
        network_input_gradient(self, image, objective)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    /// Two-class linear scorer over a 2x2 image.
    fn linear(weights: &[f64]) -> Network<f64> {
        let mut net =
            Network::new(vec![4], vec![LayerSpec::Dense { inputs: 4, outputs: 2 }]).unwrap();
        net.layers_mut()[0].params[0].values_mut().copy_from_slice(weights);
        net
    }

    #[test]
    fn zero_weight_model_has_zero_gradient() {
        let net = linear(&[0.0; 8]);
        let img = Image::new(2, 2, 1, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let g = input_gradient(&net, &img, 1).unwrap();
        assert!(g.pixels().iter().all(|&v| v == 0.0));
        let p = net.predict_proba(&img).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn linear_scorer_gradient_matches_closed_form_and_differences() {
        let w = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, -0.6];
        let net = linear(&w);
        let img = Image::new(2, 2, 1, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let c = 0;
        let out = net.input_gradient(&img, Objective::Loss(c)).unwrap();
        // grad = sum_c' p_c' row_c' - row_c
        let p = &out.probs;
        for i in 0..4 {
            let closed = p[0] * w[i] + p[1] * w[4 + i] - w[i];
            assert!((out.grad.pixels()[i] - closed).abs() < 1e-15);
        }
        let h = 1e-5;
        for i in 0..4 {
            let mut a = img.clone();
            let mut b = img.clone();
            a.pixels_mut()[i] += h;
            b.pixels_mut()[i] -= h;
            let la = nn::softmax_loss(&net.scores(&a).unwrap(), c).unwrap();
            let lb = nn::softmax_loss(&net.scores(&b).unwrap(), c).unwrap();
            let fd = (la - lb) / (2.0 * h);
            assert!((fd - out.grad.pixels()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn score_objective_gradient_is_weight_row() {
        let w = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, -0.6];
        let net = linear(&w);
        let img = Image::new(2, 2, 1, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let out = net.input_gradient(&img, Objective::Score(1)).unwrap();
        assert_eq!(out.grad.pixels(), &w[4..]);
        assert!(net.input_gradient(&img, Objective::Score(2)).is_err());
    }
}
