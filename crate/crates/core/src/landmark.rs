//! Characteristic-landmark discovery: the sparsest region mask that keeps the
//! target-class probability within `epsilon` of the full image.
//!
//! Minimizes `l_c(f_I(x)) + lambda * |x|_1` over `x ∈ [0,1]^K` subject to
//! `p(c | f_I(x)) > p(c | I) - epsilon`, by projected subgradient descent
//! starting from the full image `x = 1`. Whenever an iterate violates the
//! constraint, steps use the loss gradient alone (backprojection) until the
//! constraint holds again.

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Objective};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::regions::{apply_mask, mask_gradient, RegionSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Allowed drop of the target-class probability, in `(0, 1]`.
    pub epsilon: f64,
    pub lambda: f64,
    /// Initial step size; halved whenever a regularized step increases the
    /// objective or breaks the constraint.
    pub step: f64,
    pub max_iterations: usize,
    /// Convergence threshold on `max_k |x_k(t+1) - x_k(t)|`.
    pub tolerance: f64,
    /// Maximum consecutive loss-only steps before giving up.
    pub backprojection_budget: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            epsilon: 0.5,
            lambda: 1.0,
            step: 0.05,
            max_iterations: 200,
            tolerance: 1e-3,
            backprojection_budget: 50,
        }
    }
}

impl DiscoveryConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        DiscoveryConfig {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::invalid(format!("epsilon {} not in (0, 1]", self.epsilon)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(format!("step {} must be > 0", self.step)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be > 0"));
        }
        Ok(())
    }

    /// `epsilon >= 1` admits every probability.
    pub fn is_vacuous(&self) -> bool {
        self.epsilon >= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Loss plus L1 subgradient.
    Regularized,
    /// Loss gradient only, taken while the constraint is violated.
    Backprojection,
}

/// State at one evaluated iterate and the kind of step taken from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub prob: f64,
    pub l1: f64,
    pub mode: Mode,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct LandmarkResult<T> {
    pub x_star: Vec<T>,
    /// `p(c | I)`, fixed for the whole run.
    pub p0: T,
    pub p_final: T,
    pub loss_final: T,
    /// Gradient evaluations performed (one forward and backward pass each).
    pub iterations: usize,
    /// `iterations + 1`: the extra pass computes `p0`.
    pub model_evaluations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub masked: Image<T>,
}

impl<T: Scalar> LandmarkResult<T> {
    pub fn l1(&self) -> T {
        self.x_star.iter().copied().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue<T> {
    pub total: T,
    pub loss: T,
    pub regularizer: T,
}

/// `l_c(f_I(x)) + lambda * sum_k x_k` (the L1 norm on the nonnegative box).
pub fn objective<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    regions: &RegionSet,
    class: usize,
    x: &[T],
    lambda: T,
) -> Result<ObjectiveValue<T>> {
    let masked = apply_mask(image, regions, x)?;
    let loss = crate::nn::softmax_loss(&model.scores(&masked)?, class)?;
    let regularizer: T = x.iter().copied().sum();
    Ok(ObjectiveValue {
        total: loss + lambda * regularizer,
        loss,
        regularizer,
    })
}

/// The confidence constraint `p > p0 - epsilon`, strict; vacuous for `epsilon >= 1`.
pub fn constraint_satisfied<T: Scalar>(p: T, p0: T, epsilon: f64) -> bool {
    epsilon >= 1.0 || p > p0 - T::lit(epsilon)
}

/// Evaluates the model on `f_I(x)` and checks the constraint against the cached `p0`.
#[allow(clippy::too_many_arguments)]
pub fn constraint_ok<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    regions: &RegionSet,
    class: usize,
    x: &[T],
    epsilon: f64,
    p0: T,
) -> Result<bool> {
    let masked = apply_mask(image, regions, x)?;
    let p = model.predict_proba(&masked)?[class];
    Ok(constraint_satisfied(p, p0, epsilon))
}

pub fn discover<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Image<T>,
    regions: &RegionSet,
    class: usize,
    config: &DiscoveryConfig,
) -> Result<LandmarkResult<T>> {
    config.validate()?;
    if class >= model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: model.num_classes(),
        });
    }
    let k = regions.len();
    let lambda = T::lit(config.lambda);
    let p0 = model.predict_proba(image)?[class];

    let mut x = vec![T::one(); k];
    let mut eta = config.step;
    let mut trace = Vec::new();
    let mut previous: Option<(Mode, T)> = None;
    let mut last_delta = f64::INFINITY;
    let mut backprojection_run = 0usize;
    let mut best: Option<(Vec<T>, T, T, Image<T>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let masked = apply_mask(image, regions, &x)?;
        let eval = model.input_gradient(&masked, Objective::Loss(class))?;
        iterations += 1;
        let loss = eval.value;
        let p = eval.probs[class];
        let l1: T = x.iter().copied().sum();
        let total = loss + lambda * l1;
        if !total.is_finite() {
            return Err(Error::NonFinite("discovery objective"));
        }
        let feasible = constraint_satisfied(p, p0, config.epsilon);

        if let Some((Mode::Regularized, prev_total)) = previous {
            if !feasible || total > prev_total {
                eta *= 0.5;
            }
        }
        if feasible {
            best = Some((x.clone(), p, loss, masked));
            if last_delta < config.tolerance {
                converged = true;
                trace.push(entry(iterations - 1, loss, p, l1, Mode::Regularized, eta));
                break;
            }
        }

        let mode = if feasible {
            backprojection_run = 0;
            Mode::Regularized
        } else {
            backprojection_run += 1;
            Mode::Backprojection
        };
        trace.push(entry(iterations - 1, loss, p, l1, mode, eta));
        if backprojection_run > config.backprojection_budget {
            return Err(Error::BackprojectionFailed {
                budget: config.backprojection_budget,
                iteration: iterations - 1,
                trace,
            });
        }
        if iterations == config.max_iterations {
            break;
        }

        let mut grad = mask_gradient(image, regions, &eval.grad)?;
        if mode == Mode::Regularized {
            // d|x|_1 = 1 on the nonnegative box, including at x_k = 0.
            grad.iter_mut().for_each(|g| *g += lambda);
        }
        let step = T::lit(eta);
        let mut delta = T::zero();
        for (xk, g) in x.iter_mut().zip(&grad) {
            let next = (*xk - step * *g).max(T::zero()).min(T::one());
            delta = delta.max((next - *xk).abs());
            *xk = next;
        }
        last_delta = delta.to_f64_lossy();
        previous = Some((mode, total));
    }

    let (x_star, p_final, loss_final, masked) =
        best.expect("the first iterate x = 1 always satisfies the constraint");
    Ok(LandmarkResult {
        x_star,
        p0,
        p_final,
        loss_final,
        iterations,
        model_evaluations: iterations + 1,
        converged,
        trace,
        masked,
    })
}

fn entry<T: Scalar>(iteration: usize, loss: T, p: T, l1: T, mode: Mode, step: f64) -> TraceEntry {
    TraceEntry {
        iteration,
        loss: loss.to_f64_lossy(),
        prob: p.to_f64_lossy(),
        l1: l1.to_f64_lossy(),
        mode,
        step,
    }
}

/// Structured-text report of one discovery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub config: DiscoveryConfig,
    pub class: usize,
    pub label: Option<String>,
    pub regions: usize,
    pub p0: f64,
    pub p_final: f64,
    pub iterations: usize,
    pub model_evaluations: usize,
    pub converged: bool,
    pub l1: f64,
    pub x_star: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

impl DiscoveryReport {
    pub fn new<T: Scalar>(
        result: &LandmarkResult<T>,
        config: &DiscoveryConfig,
        class: usize,
        label: Option<String>,
    ) -> Self {
        DiscoveryReport {
            config: config.clone(),
            class,
            label,
            regions: result.x_star.len(),
            p0: result.p0.to_f64_lossy(),
            p_final: result.p_final.to_f64_lossy(),
            iterations: result.iterations,
            model_evaluations: result.model_evaluations,
            converged: result.converged,
            l1: result.l1().to_f64_lossy(),
            x_star: result.x_star.iter().map(|v| v.to_f64_lossy()).collect(),
            trace: result.trace.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
