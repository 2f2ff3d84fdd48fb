use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::{LmExample, TargetKind};
use crate::error::{Error, Result};

/// Which prediction targets contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMaskMode {
    /// Every target, context and padding included.
    AllTokens,
    /// Only content tokens of the original sentence (the part after SEP).
    PostSeparatorOnly,
}

impl LossMaskMode {
    pub fn includes(self, kind: TargetKind) -> bool {
        match self {
            LossMaskMode::AllTokens => true,
            LossMaskMode::PostSeparatorOnly => kind == TargetKind::Content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the data order.
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            learning_rate,
            seed,
            beta1: default_beta1(),
            beta2: default_beta2(),
            clip_norm: default_clip(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean batch loss (nats per contributing target) at every step.
    pub loss_curve: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new<M: Model>(model: &M) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, v, _)| v.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step<M: Model>(&mut self, model: &mut M, grads: &M, cfg: &TrainConfig) {
        self.t += 1;
        let grads = grads.tensors();
        let scale = match cfg.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|(_, g, _)| g.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate;
        for (((p, (_, g, _)), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(&grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Minimizes cross-entropy with Adam at a fixed learning rate.
///
/// Examples are visited in epochs, each a fresh permutation drawn from
/// `cfg.seed`; the same model, data and config always give the same curve.
pub fn train_lm<M: Model>(
    model: M,
    examples: &[LmExample],
    mode: LossMaskMode,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("batch_size and learning_rate must be positive".into()));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let (loss, _, grads) = model.loss_and_grad(&batch, mode)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam.step(&mut model, &grads, cfg);
        curve.push(loss);
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
    })
}
