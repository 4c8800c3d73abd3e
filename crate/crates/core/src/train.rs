//! Mini-batch SGD with random-crop augmentation and step learning-rate decay.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::CoinModel;
use crate::nn::Tape;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::invalid("batch_size and decay_every must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::invalid("learning rate and decay must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's random crops.
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Labelled images at storage size.
#[derive(Clone, Copy, Debug)]
pub struct Split<'a, T> {
    pub images: &'a [Image<T>],
    pub labels: &'a [usize],
}

impl<'a, T> Split<'a, T> {
    pub fn new(images: &'a [Image<T>], labels: &'a [usize]) -> Self {
        Split { images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn train<T: Scalar>(
    model: &mut CoinModel<T>,
    data: Split<'_, T>,
    validation: Option<Split<'_, T>>,
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if data.images.len() != data.labels.len() {
        return Err(Error::LengthMismatch {
            what: "training labels",
            expected: data.images.len(),
            actual: data.labels.len(),
        });
    }
    let classes = model.labels.len();
    for split in std::iter::once(&data).chain(validation.as_ref()) {
        if let Some(&label) = split.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let g = model.geometry;
    if let Some(img) = data
        .images
        .iter()
        .find(|im| (im.width(), im.height(), im.channels()) != (g.storage_width, g.storage_height, g.channels))
    {
        return Err(Error::invalid(format!(
            "training image is {}x{}x{}, expected storage size {}x{}x{}",
            img.width(),
            img.height(),
            img.channels(),
            g.storage_width,
            g.storage_height,
            g.channels
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let (slack_x, slack_y) = (g.storage_width - g.crop_width, g.storage_height - g.crop_height);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let crops: Vec<(usize, usize, usize)> = batch
                .iter()
                .map(|&i| (i, rng.random_range(0..=slack_x), rng.random_range(0..=slack_y)))
                .collect();
            let net = &model.network;
            let results = crops
                .par_iter()
                .map(|&(i, x0, y0)| {
                    let view = data.images[i].crop(x0, y0, g.crop_width, g.crop_height)?;
                    let mut tape = Tape::new(net);
                    tape.forward(&view.to_tensor())?;
                    tape.backward_loss(data.labels[i])
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        batch: batch_idx,
                    },
                    e => e,
                })?;
            // Summed in batch order so the update does not depend on thread scheduling.
            let mut iter = results.into_iter().zip(batch);
            let (first, &first_idx) = iter.next().expect("chunks are non-empty");
            let mut total = first.grads;
            let mut batch_loss = first.loss.to_f64_lossy();
            correct += usize::from(crate::nn::argmax(&first.scores) == data.labels[first_idx]);
            for (r, &i) in iter {
                total.accumulate(&r.grads);
                batch_loss += r.loss.to_f64_lossy();
                correct += usize::from(crate::nn::argmax(&r.scores) == data.labels[i]);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += batch_loss;
            model
                .network
                .apply_update(&total.params, T::lit(lr / batch.len() as f64));
        }
        let val_accuracy = match validation {
            Some(v) if !v.is_empty() => Some(accuracy(model, v)?),
            _ => None,
        };
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Fraction of center-cropped images classified correctly.
pub fn accuracy<T: Scalar, M: Classifier<T>>(model: &M, data: Split<'_, T>) -> Result<f64> {
    let preds = predict_all(model, data.images)?;
    let hits = preds.iter().zip(data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

pub fn predict_all<T: Scalar, M: Classifier<T>>(model: &M, images: &[Image<T>]) -> Result<Vec<usize>> {
    images.par_iter().map(|im| model.predict(im)).collect()
}

pub fn predict_proba_all<T: Scalar, M: Classifier<T>>(
    model: &M,
    images: &[Image<T>],
) -> Result<Vec<Vec<T>>> {
    images.par_iter().map(|im| model.predict_proba(im)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Geometry;

    fn toy_data() -> (Vec<Image<f64>>, Vec<usize>) {
        // Two classes: bright square top-left vs bottom-right.
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..24 {
            let class = k % 2;
            let mut img = Image::filled(16, 16, 1, 0.1);
            let (cx, cy) = if class == 0 { (4, 4) } else { (10, 10) };
            for y in cy..cy + 3 {
                for x in cx..cx + 3 {
                    let i = img.index(0, y, x);
                    img.pixels_mut()[i] = 0.9;
                }
            }
            images.push(img);
            labels.push(class);
        }
        (images, labels)
    }

    fn toy_model(seed: u64) -> CoinModel<f64> {
        CoinModel::build(vec!["a".into(), "b".into()], Geometry::new(1, 16, 14), seed).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (images, labels) = toy_data();
        let mut model = toy_model(1);
        let before = model.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let h = train(&mut model, Split::new(&images, &labels), None, &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let (images, labels) = toy_data();
        let cfg = TrainConfig { epochs: 15, batch_size: 4, learning_rate: 0.1, seed: 5, ..TrainConfig::default() };
        let mut a = toy_model(1);
        let mut b = toy_model(1);
        let ha = train(&mut a, Split::new(&images, &labels), Some(Split::new(&images, &labels)), &cfg).unwrap();
        let hb = train(&mut b, Split::new(&images, &labels), Some(Split::new(&images, &labels)), &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.len(), 15);
        assert_eq!(ha.last().unwrap().val_accuracy, Some(1.0));
    }

    #[test]
    fn rejects_bad_labels_and_sizes() {
        let (images, mut labels) = toy_data();
        let mut model = toy_model(1);
        labels[3] = 2;
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(
            train(&mut model, Split::new(&images, &labels), None, &cfg),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        let small = vec![Image::filled(14, 14, 1, 0.0)];
        assert!(train(&mut model, Split::new(&small, &[0]), None, &cfg).is_err());
        assert!(train(&mut model, Split::new(&[], &[]), None, &cfg).is_err());
    }

    #[test]
    fn diverging_run_reports_epoch_and_batch() {
        let (images, labels) = toy_data();
        let mut model = toy_model(1);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 1e300, seed: 1, ..TrainConfig::default() };
        match train(&mut model, Split::new(&images, &labels), None, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
