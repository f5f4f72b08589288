//! Surrogate-gradient BPTT training, evaluation and 8-bit quantization.

mod bptt;
mod quant;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bptt::{
    bptt_grads, bptt_grads_raw, cross_entropy, sample_loss, surrogate_gate, surrogate_grad,
    BpttConfig, Gate, Gradients,
};
pub use quant::{
    fake_quantize, quantize_matrix, quantize_weights, QuantizedMatrix, QuantizedNetwork,
    QuantizedWeights,
};

use crate::encoder::{encode_multichannel, EncoderConfig, SpikeRaster};
use crate::error::{Error, Result};
use crate::rsnn::{classify, ClassifyRule, Network, Weights};
use crate::signal::{Dataset, NUM_CLASSES};

/// An encoded window and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raster: SpikeRaster,
    pub label: usize,
}

/// Encodes every window of `ds`.
pub fn encode_dataset(ds: &Dataset, cfg: &EncoderConfig) -> Result<Vec<Sample>> {
    ds.windows()
        .par_iter()
        .map(|w| {
            Ok(Sample {
                raster: encode_multichannel(w, cfg)?,
                label: w.label.ok_or(Error::EmptyDataset)?.index(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub grad_clip_norm: f64,
    pub surrogate_dampening: f64,
    pub quant_aware: bool,
    pub quant_bits: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 450,
            learning_rate: 1e-2,
            batch_size: 16,
            adam: AdamConfig::default(),
            grad_clip_norm: 10.0,
            surrogate_dampening: 0.3,
            quant_aware: false,
            quant_bits: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate must be >= 0 and grad_clip_norm > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn bptt(&self) -> BpttConfig {
        BpttConfig {
            surrogate_dampening: self.surrogate_dampening,
            grad_clip_norm: self.grad_clip_norm,
            gate: Gate::Heaviside,
        }
    }
}

/// Adam moment buffers for every weight tensor.
struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(w: &Weights, cfg: AdamConfig, lr: f64) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            m: Gradients::zeros_like(w),
            v: Gradients::zeros_like(w),
        }
    }

    fn update(&mut self, w: &mut Weights, g: &Gradients) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        let lr = self.lr;
        let apply = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        let (m, v) = (&mut self.m.0, &mut self.v.0);
        apply(
            w.w_in.as_slice_mut().expect("contiguous"),
            g.0.w_in.as_slice().expect("contiguous"),
            m.w_in.as_slice_mut().expect("contiguous"),
            v.w_in.as_slice_mut().expect("contiguous"),
        );
        apply(
            w.w_rec.as_slice_mut().expect("contiguous"),
            g.0.w_rec.as_slice().expect("contiguous"),
            m.w_rec.as_slice_mut().expect("contiguous"),
            v.w_rec.as_slice_mut().expect("contiguous"),
        );
        apply(
            w.w_out.as_slice_mut().expect("contiguous"),
            g.0.w_out.as_slice().expect("contiguous"),
            m.w_out.as_slice_mut().expect("contiguous"),
            v.w_out.as_slice_mut().expect("contiguous"),
        );
        apply(&mut w.b_out, &g.0.b_out, &mut m.b_out, &mut v.b_out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV with columns `epoch,train_acc,test_acc,loss`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_acc,test_acc,loss")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_acc, r.test_acc, r.loss)?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.test_acc >= r.test_acc => Some(b),
                _ => Some(r),
            })
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Float (shadow) weights after the last epoch.
    pub network: Network,
    /// Snapshot from the first epoch reaching the best test accuracy.
    pub best_network: Network,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// The network whose forward pass training actually optimizes: weights are
/// fake-quantized when training is quantization-aware.
pub fn deployed_view(net: &Network, cfg: &TrainConfig) -> Network {
    if cfg.quant_aware {
        Network {
            weights: fake_quantize(&net.weights, cfg.quant_bits),
            ..net.clone()
        }
    } else {
        net.clone()
    }
}

/// Mini-batch Adam over shuffled training samples.
///
/// Training accuracy is measured on the forward passes of each epoch's
/// batches (before the corresponding update); test accuracy is evaluated on
/// the deployed view after the epoch. `on_epoch` sees every record as it is
/// produced.
pub fn train(
    net: &Network,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shadow = net.clone();
    let mut adam = Adam::new(&shadow.weights, cfg.adam.clone(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&SpikeRaster, usize)> = chunk
                .iter()
                .map(|&i| (&train_set[i].raster, train_set[i].label))
                .collect();
            let view = deployed_view(&shadow, cfg);
            let (mut grads, loss, ok) = bptt::batch_gradients(
                &view,
                &batch,
                cfg.surrogate_dampening,
                Gate::Heaviside,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            grads.clip_norm(cfg.grad_clip_norm);
            adam.update(&mut shadow.weights, &grads);
            loss_sum += loss * batch.len() as f64;
            correct += ok;
        }
        let view = deployed_view(&shadow, cfg);
        let test_acc = evaluate(&view, test_set)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc,
            loss: loss_sum / train_set.len() as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| test_acc > *acc) {
            best = Some((test_acc, epoch, shadow.clone()));
        }
    }
    let (_, best_epoch, best_network) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network: shadow,
        best_network,
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub predictions: Vec<usize>,
}

/// Scores every sample with `predict`, in parallel, keeping sample order.
pub fn evaluate_with<F>(samples: &[Sample], predict: F) -> Result<Evaluation>
where
    F: Fn(&SpikeRaster) -> Result<usize> + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictions = samples
        .par_iter()
        .map(|s| predict(&s.raster))
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (s, &p) in samples.iter().zip(&predictions) {
        confusion[s.label][p] += 1;
    }
    let hits: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: hits as f64 / samples.len() as f64,
        confusion,
        predictions,
    })
}

pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<Evaluation> {
    evaluate_with(samples, |raster| {
        Ok(classify(&net.forward(raster, false)?, ClassifyRule::MeanReadout).class)
    })
}
