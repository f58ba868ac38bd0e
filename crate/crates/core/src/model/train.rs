//! Mini-batch training over a fixed pool of cropped samples.
//!
//! Each epoch draws `samples_per_epoch` samples from the pool (shuffled
//! passes, with random W flips) using a generator keyed by `(seed, epoch)`,
//! so resuming from the checkpoint of epoch `k` replays epoch `k + 1` exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, CheckpointManifest};
use super::loss::{dice_loss_with_grad, LossValue, DEFAULT_LOSS_EPS};
use super::net::{backward, forward, Mode, ModelConfig, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tiler::{Sample, AUX_CHANNELS};
use crate::voxel::CHANNELS;

/// Windowed intensities live in `[0, 255]`; the network sees `[0, 1]`.
pub const INTENSITY_SCALE: f32 = 1.0 / 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub adam: AdamConfig,
    pub loss_eps: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 4,
            samples_per_epoch: 500,
            adam: AdamConfig::default(),
            loss_eps: DEFAULT_LOSS_EPS,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::invalid("batch size and samples per epoch must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        self.adam.validate()
    }
}

/// Network inputs and targets for a batch.
pub struct Batch {
    pub image: Tensor<f32>,
    pub aux: Tensor<f32>,
    pub target: Tensor<f32>,
}

/// Stacks samples; 26-channel models train on connectivity labels, 1-channel
/// models on the plain mask.
pub fn make_batch(samples: &[Sample], out_channels: usize) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let s = first.image.shape();
    let n = samples.len();
    let mut image = Vec::with_capacity(n * s.len());
    let mut aux = Vec::with_capacity(n * AUX_CHANNELS * s.len());
    let mut target = Vec::with_capacity(n * out_channels * s.len());
    for smp in samples {
        if smp.image.shape() != s {
            return Err(Error::invalid("batch samples differ in size"));
        }
        image.extend(smp.image.data().iter().map(|v| v * INTENSITY_SCALE));
        aux.extend_from_slice(&smp.aux);
        match out_channels {
            CHANNELS => target.extend_from_slice(smp.label.data()),
            1 => target.extend(smp.mask.data().iter().map(|b| *b as u8 as f32)),
            c => return Err(Error::invalid(format!("no training target for {c} output channels"))),
        }
    }
    Ok(Batch {
        image: Tensor::from_vec(n, 1, s, image)?,
        aux: Tensor::from_vec(n, AUX_CHANNELS, s, aux)?,
        target: Tensor::from_vec(n, out_channels, s, target)?,
    })
}

/// Pool indices and flip flags for one epoch.
pub fn epoch_plan(seed: u64, epoch: usize, pool: usize, count: usize, flip_prob: f64) -> Vec<(usize, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut out = Vec::with_capacity(count);
    let mut order: Vec<usize> = (0..pool).collect();
    while out.len() < count && pool > 0 {
        order.shuffle(&mut rng);
        for &i in order.iter().take(count - out.len()) {
            out.push((i, false));
        }
    }
    for item in &mut out {
        item.1 = rng.random_bool(flip_prob);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

pub struct Trainer {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(model, config.seed)?;
        let adam = AdamState::new(&params);
        Ok(Self {
            params,
            adam,
            config,
            epoch: 0,
            step: 0,
        })
    }

    /// Continues from a checkpoint; optimizer hyperparameters and seed come
    /// from `config`, weights and moments from the checkpoint.
    pub fn resume(ck: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ck.params,
            adam: ck.adam,
            epoch: ck.manifest.epoch,
            step: ck.manifest.step,
            config,
        })
    }

    pub fn checkpoint(&self, training: serde_json::Value) -> Checkpoint {
        Checkpoint {
            manifest: CheckpointManifest {
                format: String::new(),
                config: self.params.config.clone(),
                seed: self.config.seed,
                epoch: self.epoch,
                step: self.step,
                adam: self.config.adam,
                adam_t: self.adam.t,
                tensors: Vec::new(),
                training,
            },
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Forward, loss, backward and one Adam update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossValue> {
        let (tape, updates) = forward(&self.params, &batch.image, &batch.aux, Mode::Train)?;
        let (loss, dp) = dice_loss_with_grad(&tape.probs, &batch.target, self.config.loss_eps)?;
        self.params.zero_grad();
        backward(&mut self.params, &tape, &dp)?;
        adam_step(&mut self.params, &mut self.adam, &self.config.adam)?;
        self.params.apply_bn_updates(&updates);
        self.step += 1;
        Ok(loss)
    }

    /// Runs the next epoch over `pool`; `on_step` sees every batch loss.
    pub fn run_epoch(&mut self, pool: &[Sample], mut on_step: impl FnMut(u64, &LossValue)) -> Result<EpochStats> {
        if pool.is_empty() {
            return Err(Error::invalid("no training samples"));
        }
        let plan = epoch_plan(
            self.config.seed,
            self.epoch,
            pool.len(),
            self.config.samples_per_epoch,
            self.config.flip_prob,
        );
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in plan.chunks(self.config.batch_size) {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&(i, flip)| if flip { pool[i].flipped_w() } else { pool[i].clone() })
                .collect();
            let batch = make_batch(&samples, self.params.config.out_channels)?;
            let loss = self.train_step(&batch)?;
            on_step(self.step, &loss);
            total += loss.loss;
            steps += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: total / steps as f64,
            steps,
        })
    }
}
