//! Mini-batch training loop and mask prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::layers::Tensor;
use super::net::{forward, loss_and_gradient, mse_loss, ModelWeights, NetConfig};
use crate::error::{Error, Result};
use crate::maskgen::BinaryMask;
use crate::metrics::pixel_accuracy_at_truth;
use crate::sequence_io::{resize_bilinear, Frame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epsilon: f64,
    /// Return the weights with the lowest validation loss seen at an
    /// evaluation point instead of the final ones.
    pub best_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 8,
            validation_fraction: 0.2,
            epochs: 100,
            eval_every: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epsilon: 1e-8,
            best_validation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must lie in (0, 1)"));
        }
        if self.eval_every == 0 || self.batch_size == 0 {
            return Err(Error::invalid("eval_every and batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn last_accuracy(&self) -> Option<f64> {
        self.points.iter().rev().find_map(|p| p.test_accuracy)
    }

    /// `epoch,train_loss,val_loss,test_acc` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,test_acc\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for p in &self.points {
            s.push_str(&format!(
                "{},{:.16e},{},{}\n",
                p.epoch,
                p.train_loss,
                opt(p.val_loss),
                opt(p.test_accuracy)
            ));
        }
        s
    }
}

/// Resizes to the network input and scales to [0, 1].
pub fn prepare_input(frame: &Frame, size: usize) -> Result<Tensor> {
    let resized = resize_bilinear(frame, size, size)?.normalized();
    Ok(Tensor::from_vec(1, size, size, resized.pixels().to_vec()))
}

/// One training example at network resolution.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: Tensor,
    pub target: Vec<f64>,
}

impl TrainingPair {
    pub fn new(frame: &Frame, mask: &BinaryMask, size: usize) -> Result<Self> {
        if frame.dims() != mask.dims() {
            return Err(Error::dims(frame.dims(), mask.dims()));
        }
        let target = mask
            .resize_nearest(size, size)
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Ok(TrainingPair {
            input: prepare_input(frame, size)?,
            target,
        })
    }
}

/// Network input plus truth at native resolution.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub input: Tensor,
    pub truth: BinaryMask,
}

impl EvalSample {
    pub fn new(frame: &Frame, truth: &BinaryMask, size: usize) -> Result<Self> {
        Ok(EvalSample {
            input: prepare_input(frame, size)?,
            truth: truth.clone(),
        })
    }
}

/// Thresholds a probability map at 0.5, ties going to foreground.
pub fn threshold_output(probs: &[f64], size: usize) -> BinaryMask {
    BinaryMask::new(size, size, probs.iter().map(|&p| p >= 0.5).collect()).expect("square output")
}

pub fn predict_tensor(weights: &ModelWeights, input: &Tensor) -> Result<BinaryMask> {
    let out = forward(weights, input)?.output;
    Ok(threshold_output(&out.data, weights.config().input_size))
}

/// Mask for `frame`; resized back to `native` (nearest neighbour) when
/// given.
pub fn predict_mask(weights: &ModelWeights, frame: &Frame, native: Option<(usize, usize)>) -> Result<BinaryMask> {
    let input = prepare_input(frame, weights.config().input_size)?;
    let mask = predict_tensor(weights, &input)?;
    Ok(match native {
        Some((w, h)) => mask.resize_nearest(w, h),
        None => mask,
    })
}

/// Mean per-image pixel accuracy at truth resolution.
pub fn evaluate_accuracy(weights: &ModelWeights, samples: &[EvalSample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let accs: Vec<f64> = samples
        .par_iter()
        .map(|s| predict_tensor(weights, &s.input).map(|m| pixel_accuracy_at_truth(&m, &s.truth)))
        .collect::<Result<_>>()?;
    Ok(Some(accs.iter().sum::<f64>() / accs.len() as f64))
}

fn batch_gradient(weights: &ModelWeights, batch: &[&TrainingPair]) -> Result<(f64, Vec<f64>)> {
    // Per-image gradients are summed in batch order so the result does not
    // depend on the thread count.
    let per_image: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|p| loss_and_gradient(weights, &[&p.input], &[&p.target]))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    for (l, g) in per_image {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for a in &mut grad {
        *a /= n;
    }
    Ok((loss / n, grad))
}

fn mean_loss(weights: &ModelWeights, pairs: &[&TrainingPair]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| forward(weights, &p.input).and_then(|c| mse_loss(&c.output.data, &p.target)))
        .collect::<Result<_>>()?;
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Index split: `(train, validation)`.
pub fn validation_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains from `initial` (or a seeded He-uniform init) and returns the
/// final weights with the learning curve. Curve points are recorded every
/// `eval_every` epochs and at the last epoch.
pub fn train(
    train_set: &[TrainingPair],
    test_set: &[EvalSample],
    net: &NetConfig,
    config: &TrainConfig,
    initial: Option<&ModelWeights>,
) -> Result<(ModelWeights, LearningCurve)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut weights = match initial {
        Some(w) => {
            if w.config() != net {
                return Err(Error::invalid("initial weights were built for a different network"));
            }
            w.clone()
        }
        None => ModelWeights::he_uniform(*net, &mut stream_rng(config.seed, 1))?,
    };
    let mut curve = LearningCurve::default();
    if config.epochs == 0 {
        return Ok((weights, curve));
    }
    let (mut train_idx, val_idx) =
        validation_split(train_set.len(), config.validation_fraction, &mut stream_rng(config.seed, 2));
    let val: Vec<&TrainingPair> = val_idx.iter().map(|&i| &train_set[i]).collect();
    let mut shuffle_rng = stream_rng(config.seed, 3);
    let mut state = AdamState::new(weights.len());
    let adam = config.adam();
    let mut best: Option<(f64, ModelWeights)> = None;

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(&weights, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(weights.params_mut(), &grad, &mut state, &adam)?;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let val_loss = mean_loss(&weights, &val)?;
            let test_accuracy = evaluate_accuracy(&weights, test_set)?;
            log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?} test acc {test_accuracy:?}");
            curve.points.push(CurvePoint {
                epoch,
                train_loss,
                val_loss,
                test_accuracy,
            });
            if config.best_validation {
                if let Some(v) = val_loss {
                    if best.as_ref().map_or(true, |(b, _)| v < *b) {
                        best = Some((v, weights.clone()));
                    }
                }
            }
        }
    }
    if let Some((_, w)) = best {
        weights = w;
    }
    Ok((weights, curve))
}
