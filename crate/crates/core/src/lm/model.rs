use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::{LossRow, LossTable};
use super::tower::{Head, Tower};
use super::train::LossMaskMode;
use super::{LmConfig, LmExample, TargetKind};
use crate::corpus::{Corpus, TokenId, BOS};
use crate::error::{Error, Result};

/// Examples evaluated per forward pass when computing loss tables.
const EVAL_CHUNK: usize = 32;

/// A differentiable model trained by [`train_lm`](super::train_lm).
pub trait Model: Clone {
    fn config(&self) -> &LmConfig;

    /// Every parameter tensor as `(name, values, shape)`, in a fixed order.
    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)>;

    /// Mutable views in the same order as [`Model::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// A model of identical shape with every parameter zero; used to hold gradients.
    fn zeros_like(&self) -> Self;

    /// Mean NLL over the targets of `batch` selected by `mode`, the number of
    /// such targets, and the gradient of that mean.
    fn loss_and_grad(&self, batch: &[&LmExample], mode: LossMaskMode) -> Result<(f64, usize, Self)>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, v, _)| v.len()).sum()
    }
}

/// Models that assign a per-target NLL to plain sentences.
pub trait ScoringModel {
    fn forward_nll_batch(&self, examples: &[&LmExample]) -> Result<Vec<LossRow>>;

    /// One loss row per sentence of `corpus`.
    fn per_token_losses(&self, corpus: &Corpus) -> Result<LossTable> {
        let examples: Vec<LmExample> = corpus.sentences.iter().map(LmExample::from_sentence).collect();
        let refs: Vec<&LmExample> = examples.iter().collect();
        Ok(LossTable {
            rows: self.forward_nll_batch(&refs)?,
        })
    }
}

/// Unidirectional (causal) language model.
#[derive(Debug, Clone, PartialEq)]
pub struct Lm {
    pub(crate) config: LmConfig,
    pub(crate) tower: Tower,
    pub(crate) head: Head,
}

impl Lm {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tower = Tower::init(&mut rng, config);
        let head = Head::init(&mut rng, config.model_dim, config.vocab_size);
        Ok(Lm {
            config: config.clone(),
            tower,
            head,
        })
    }

    /// Zeroes the output head so every prediction is the uniform distribution.
    pub fn make_output_uniform(&mut self) {
        self.head.w.fill(0.0);
        self.head.b.fill(0.0);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.context_window {
            return Err(Error::SequenceTooLong {
                len,
                window: self.config.context_window,
            });
        }
        Ok(())
    }

    /// Log-probabilities over the vocabulary after each prefix of `input`:
    /// row `t` is the prediction for the token following `input[..=t]`.
    pub fn log_probs(&self, input: &[TokenId]) -> Result<Array2<f64>> {
        self.check_len(input.len())?;
        let (h, _) = self.tower.forward(&[input]);
        Ok(self.head.log_probs(h.view()))
    }

    /// Per-target NLL of one example. Targets keep their kinds, so context
    /// and padding entries stay identifiable.
    pub fn forward_nll(&self, example: &LmExample) -> Result<LossRow> {
        Ok(self.forward_nll_batch(&[example])?.remove(0))
    }
}

impl ScoringModel for Lm {
    fn forward_nll_batch(&self, examples: &[&LmExample]) -> Result<Vec<LossRow>> {
        let mut rows = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let inputs: Vec<&[TokenId]> = chunk.iter().map(|e| &e.ids[..e.ids.len() - 1]).collect();
            for inp in &inputs {
                self.check_len(inp.len())?;
            }
            let (h, _) = self.tower.forward(&inputs);
            let lp = self.head.log_probs(h.view());
            let mut off = 0;
            for e in chunk {
                let nll = e.ids[1..]
                    .iter()
                    .enumerate()
                    .map(|(t, &target)| -lp[[off + t, target as usize]])
                    .collect();
                off += e.ids.len() - 1;
                rows.push(LossRow {
                    nll,
                    kinds: e.kinds.clone(),
                });
            }
        }
        Ok(rows)
    }
}

impl Model for Lm {
    fn config(&self) -> &LmConfig {
        &self.config
    }

    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out = Vec::new();
        self.tower.tensors("tower.", &mut out);
        self.head.tensors("head.", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.tower.tensors_mut(&mut out);
        self.head.tensors_mut(&mut out);
        out
    }

    fn zeros_like(&self) -> Self {
        Lm {
            config: self.config.clone(),
            tower: self.tower.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    fn loss_and_grad(&self, batch: &[&LmExample], mode: LossMaskMode) -> Result<(f64, usize, Self)> {
        let mut grads = self.zeros_like();
        // Inputs are cut after the last contributing target; causality makes
        // the later positions irrelevant.
        let mut inputs: Vec<&[TokenId]> = Vec::with_capacity(batch.len());
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut off = 0;
        for e in batch {
            let Some(last) = e.kinds.iter().rposition(|&k| mode.includes(k)) else {
                continue;
            };
            let input = &e.ids[..=last];
            self.check_len(input.len())?;
            for (t, &k) in e.kinds[..=last].iter().enumerate() {
                if mode.includes(k) {
                    rows.push(off + t);
                    targets.push(e.ids[t + 1]);
                }
            }
            off += input.len();
            inputs.push(input);
        }
        if targets.is_empty() {
            return Ok((0.0, 0, grads));
        }
        let (h, cache) = self.tower.forward(&inputs);
        let h_sel = h.select(ndarray::Axis(0), &rows);
        let (loss, dh_sel) = self.head.nll_backward(&h_sel, &targets, &mut grads.head);
        let mut dh = Array2::zeros(h.raw_dim());
        for (r, src) in rows.iter().zip(dh_sel.rows()) {
            dh.row_mut(*r).assign(&src);
        }
        self.tower.backward(&dh, &cache, &mut grads.tower);
        Ok((loss, targets.len(), grads))
    }
}

/// Two independent causal towers whose final hidden states are concatenated
/// before one shared output head.
///
/// For content token `j` of a sentence `BOS x1 .. xn EOS`, the forward tower
/// reads `BOS x1 .. x(j-1)` and the backward tower reads `EOS xn .. x(j+1)`;
/// `xj` itself is never an input to its own prediction. Only content targets
/// are scored; other entries of a loss row are zero and keep their kind flag.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLm {
    pub(crate) config: LmConfig,
    pub(crate) forward: Tower,
    pub(crate) backward: Tower,
    pub(crate) head: Head,
}

/// Inputs of both towers for one sentence example.
struct BiInputs<'a> {
    fwd: &'a [TokenId],
    bwd: Vec<TokenId>,
    targets: &'a [TokenId],
}

impl BiLm {
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let forward = Tower::init(&mut rng, config);
        let backward = Tower::init(&mut rng, config);
        let head = Head::init(&mut rng, 2 * config.model_dim, config.vocab_size);
        Ok(BiLm {
            config: config.clone(),
            forward,
            backward,
            head,
        })
    }

    fn inputs<'a>(&self, e: &'a LmExample) -> Result<BiInputs<'a>> {
        if e.ids[0] != BOS {
            return Err(Error::Misaligned("bidirectional scoring needs a plain sentence starting with BOS".into()));
        }
        let n = e.kinds.iter().take_while(|&&k| k == TargetKind::Content).count();
        if e.kinds[n..].contains(&TargetKind::Content) || e.ids.len() < n + 2 {
            return Err(Error::Misaligned("content targets must directly follow BOS".into()));
        }
        if n > self.config.context_window {
            return Err(Error::SequenceTooLong {
                len: n,
                window: self.config.context_window,
            });
        }
        Ok(BiInputs {
            fwd: &e.ids[..n],
            bwd: e.ids[2..n + 2].iter().rev().copied().collect(),
            targets: &e.ids[1..n + 1],
        })
    }

    /// Concatenated hidden states, one row per content target of every input.
    fn joint_hidden(
        &self,
        inputs: &[BiInputs<'_>],
    ) -> (Array2<f64>, super::tower::TowerCache, super::tower::TowerCache) {
        let fwd: Vec<&[TokenId]> = inputs.iter().map(|b| b.fwd).collect();
        let bwd: Vec<&[TokenId]> = inputs.iter().map(|b| b.bwd.as_slice()).collect();
        let (hf, cf) = self.forward.forward(&fwd);
        let (hb, cb) = self.backward.forward(&bwd);
        let d = self.config.model_dim;
        let mut joint = Array2::zeros((hf.nrows(), 2 * d));
        let mut off = 0;
        for b in inputs {
            let n = b.targets.len();
            for j in 0..n {
                // target j+1 (1-based): forward row j, backward row n-1-j
                joint.slice_mut(s![off + j, ..d]).assign(&hf.row(off + j));
                joint.slice_mut(s![off + j, d..]).assign(&hb.row(off + n - 1 - j));
            }
            off += n;
        }
        (joint, cf, cb)
    }

    /// Log-probabilities for each content position of a plain sentence example.
    pub fn log_probs(&self, example: &LmExample) -> Result<Array2<f64>> {
        let inp = self.inputs(example)?;
        let (joint, _, _) = self.joint_hidden(std::slice::from_ref(&inp));
        Ok(self.head.log_probs(joint.view()))
    }

    pub fn forward_nll(&self, example: &LmExample) -> Result<LossRow> {
        Ok(self.forward_nll_batch(&[example])?.remove(0))
    }
}

impl ScoringModel for BiLm {
    fn forward_nll_batch(&self, examples: &[&LmExample]) -> Result<Vec<LossRow>> {
        let mut rows = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let inputs = chunk.iter().map(|e| self.inputs(e)).collect::<Result<Vec<_>>>()?;
            let (joint, _, _) = self.joint_hidden(&inputs);
            let lp = self.head.log_probs(joint.view());
            let mut off = 0;
            for (e, b) in chunk.iter().zip(&inputs) {
                let mut nll = vec![0.0; e.kinds.len()];
                for (j, &t) in b.targets.iter().enumerate() {
                    nll[j] = -lp[[off + j, t as usize]];
                }
                off += b.targets.len();
                rows.push(LossRow {
                    nll,
                    kinds: e.kinds.clone(),
                });
            }
        }
        Ok(rows)
    }
}

impl Model for BiLm {
    fn config(&self) -> &LmConfig {
        &self.config
    }

    fn tensors(&self) -> Vec<(String, &[f64], Vec<usize>)> {
        let mut out = Vec::new();
        self.forward.tensors("forward.", &mut out);
        self.backward.tensors("backward.", &mut out);
        self.head.tensors("head.", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.forward.tensors_mut(&mut out);
        self.backward.tensors_mut(&mut out);
        self.head.tensors_mut(&mut out);
        out
    }

    fn zeros_like(&self) -> Self {
        BiLm {
            config: self.config.clone(),
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Content targets only, whatever the mode: the joint head has no
    /// right-hand context for EOS or padding.
    fn loss_and_grad(&self, batch: &[&LmExample], _mode: LossMaskMode) -> Result<(f64, usize, Self)> {
        let mut grads = self.zeros_like();
        let inputs: Vec<BiInputs<'_>> = batch
            .iter()
            .map(|e| self.inputs(e))
            .filter(|r| !matches!(r, Ok(b) if b.targets.is_empty()))
            .collect::<Result<_>>()?;
        if inputs.is_empty() {
            return Ok((0.0, 0, grads));
        }
        let targets: Vec<TokenId> = inputs.iter().flat_map(|b| b.targets.iter().copied()).collect();
        let (joint, cf, cb) = self.joint_hidden(&inputs);
        let (loss, djoint) = self.head.nll_backward(&joint, &targets, &mut grads.head);
        let d = self.config.model_dim;
        let mut dhf = Array2::zeros((joint.nrows(), d));
        let mut dhb = Array2::zeros((joint.nrows(), d));
        let mut off = 0;
        for b in &inputs {
            let n = b.targets.len();
            for j in 0..n {
                dhf.row_mut(off + j).assign(&djoint.slice(s![off + j, ..d]));
                dhb.row_mut(off + n - 1 - j).assign(&djoint.slice(s![off + j, d..]));
            }
            off += n;
        }
        self.forward.backward(&dhf, &cf, &mut grads.forward);
        self.backward.backward(&dhb, &cb, &mut grads.backward);
        Ok((loss, targets.len(), grads))
    }
}
