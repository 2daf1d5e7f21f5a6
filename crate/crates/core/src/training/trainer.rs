use rand::seq::SliceRandom;

use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interflow::InterflowModel;
use crate::layers::{softmax_cross_entropy, Mode};
use crate::params::{accumulate_grads, Binder};
use crate::rng::{stream, TAG_AUGMENT, TAG_SHUFFLE};
use crate::tensor::Tensor;
use crate::training::augment::augment_slice;
use crate::training::optim::Sgd;
use crate::training::schedule::{lr_schedule, TrainConfig};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean fused-output loss over the epoch's training samples.
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes, before each update.
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,test_acc,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.test_acc, self.lr
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub per_epoch: Vec<EpochMetrics>,
    /// Attention weights after the last epoch, row-major; empty without attention.
    pub final_attention_weights: Vec<f64>,
    /// `[n]` or `[n, C]`; empty without attention.
    pub attention_shape: Vec<usize>,
    pub seed: u64,
    pub method: String,
}

impl RunRecord {
    pub fn final_test_acc(&self) -> f64 {
        self.per_epoch.last().map_or(0.0, |m| m.test_acc)
    }
}

/// Fraction of samples whose arg-max fused logit is the label, with BN in
/// eval mode.
pub fn evaluate(model: &mut InterflowModel, ds: &Dataset) -> Result<f64> {
    Ok(correct_count(model, ds)? as f64 / ds.len() as f64)
}

pub fn correct_count(model: &mut InterflowModel, ds: &Dataset) -> Result<usize> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    check_compatible(model, ds)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = ds.batch(chunk);
        let logits = model.predict(&x)?;
        correct += logits.argmax_rows().iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct)
}

fn check_compatible(model: &InterflowModel, ds: &Dataset) -> Result<()> {
    if ds.num_classes != model.num_classes() {
        return Err(Error::invalid(format!(
            "{} split has {} classes but the model predicts {}",
            ds.split,
            ds.num_classes,
            model.num_classes()
        )));
    }
    let channels = ds.image_shape().0;
    if channels != model.spec().backbone.input_channels {
        return Err(Error::invalid(format!(
            "{} split has {channels} channels but the model expects {}",
            ds.split,
            model.spec().backbone.input_channels
        )));
    }
    Ok(())
}

/// Splits a permutation into batches. A trailing batch of one sample is
/// folded into the previous batch, since train-mode batch normalization
/// needs at least two samples.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() >= 2 && batches[batches.len() - 1].len() == 1 {
        let start = order.len() - batches[batches.len() - 2].len() - 1;
        batches.truncate(batches.len() - 2);
        batches.push(&order[start..]);
    }
    batches
}

pub fn train_epochs(model: &mut InterflowModel, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    train_epochs_with(model, train, test, cfg, |_| {})
}

/// As [`train_epochs`], calling `on_epoch` after each epoch's evaluation.
pub fn train_epochs_with(
    model: &mut InterflowModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunRecord> {
    cfg.validate()?;
    check_compatible(model, train)?;
    check_compatible(model, test)?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let (c, h, w) = train.image_shape();
    let mut sgd = Sgd::new(&model.params, cfg.momentum, cfg.weight_decay);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(&[cfg.seed, TAG_SHUFFLE, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, batch) in make_batches(&order, cfg.batch_size).into_iter().enumerate() {
            let (mut x, y) = train.batch(batch);
            if cfg.augment {
                let len = c * h * w;
                for (slot, &i) in batch.iter().enumerate() {
                    let mut rng = stream(&[cfg.seed, TAG_AUGMENT, epoch as u64, i as u64]);
                    let img = augment_slice(train.image(i), c, h, w, &mut rng);
                    x.data_mut()[slot * len..(slot + 1) * len].copy_from_slice(&img);
                }
            }

            let mut tape = Tape::new();
            let mut binder = Binder::new();
            let xv = tape.constant(x);
            let out = model.forward(&mut tape, &mut binder, xv, Mode::Train)?;
            let loss = softmax_cross_entropy(&mut tape, out.logits, &y)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::TrainingAborted {
                    epoch: epoch + 1,
                    batch: b + 1,
                    reason: format!("loss is {lv}"),
                });
            }
            loss_sum += lv * batch.len() as f64;
            correct += tape
                .value(out.logits)
                .argmax_rows()
                .iter()
                .zip(&y)
                .filter(|(p, l)| p == l)
                .count();

            tape.backward(loss)?;
            model.params.zero_grad();
            accumulate_grads(&mut model.params, binder.gradients(&tape));
            sgd.step(&mut model.params, lr)?;
        }

        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc: evaluate(model, test)?,
            lr,
        };
        on_epoch(&metrics);
        per_epoch.push(metrics);
    }

    let (final_attention_weights, attention_shape) = match model.attention_weights() {
        Some(t) => (t.data().to_vec(), t.shape().to_vec()),
        None => (Vec::new(), Vec::new()),
    };
    Ok(RunRecord {
        per_epoch,
        final_attention_weights,
        attention_shape,
        seed: cfg.seed,
        method: String::new(),
    })
}

/// Logits of every sample, in dataset order.
pub fn predict_all(model: &mut InterflowModel, ds: &Dataset) -> Result<Tensor> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut data = Vec::with_capacity(ds.len() * model.num_classes());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = ds.batch(chunk);
        data.extend(model.predict(&x)?.into_data());
    }
    Tensor::new(vec![ds.len(), model.num_classes()], data)
}
