//! Feed-forward network predicting per-turn interpolation weights.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{features_from_input, turn_input, ContextSources, FeatureLayout, PassMode, TurnInput};
use super::{component_token_probs, em_on_probs, log_mix, ORACLE_MAX_ITERS, ORACLE_TOL};
use crate::corpus::{Conversation, Vocabulary};
use crate::ngram::NGramModel;
use crate::nn::{
    mean_rows_backward, softmax, softmax_xent, Activation, DenseMatrix, Optimizer, OptimizerKind,
    ParamId, ParamStore,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy)]
struct AdapterIds {
    emb: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct WeightAdapter {
    layout: FeatureLayout,
    n_components: usize,
    hidden: usize,
    vocab: Arc<Vocabulary>,
    params: ParamStore,
    ids: AdapterIds,
}

pub(crate) struct AdapterCache {
    x: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
    pub(crate) weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdapterFile {
    layout: FeatureLayout,
    n_components: usize,
    hidden: usize,
    vocab: Vec<String>,
    params: ParamStore,
}

impl WeightAdapter {
    pub fn new(
        layout: FeatureLayout,
        vocab: Arc<Vocabulary>,
        n_components: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_components < 2 {
            return Err(Error::Config(format!("a mixture needs at least 2 components, got {n_components}")));
        }
        let mut r = rng::substream(seed, &["adapter-init"]);
        let mut params = ParamStore::new();
        let ids = AdapterIds {
            emb: params.add("emb", DenseMatrix::glorot(vocab.len(), layout.embed_dim, &mut r))?,
            w1: params.add("w1", DenseMatrix::glorot(hidden, layout.input_dim(), &mut r))?,
            b1: params.add("b1", DenseMatrix::zeros(1, hidden))?,
            w2: params.add("w2", DenseMatrix::glorot(n_components, hidden, &mut r))?,
            b2: params.add("b2", DenseMatrix::zeros(1, n_components))?,
        };
        Ok(WeightAdapter {
            layout,
            n_components,
            hidden,
            vocab,
            params,
            ids,
        })
    }

    fn from_parts(
        layout: FeatureLayout,
        n_components: usize,
        hidden: usize,
        vocab: Arc<Vocabulary>,
        params: ParamStore,
    ) -> Result<Self> {
        let get = |n: &str| params.id(n).ok_or_else(|| Error::Config(format!("adapter checkpoint lacks {n}")));
        let ids = AdapterIds {
            emb: get("emb")?,
            w1: get("w1")?,
            b1: get("b1")?,
            w2: get("w2")?,
            b2: get("b2")?,
        };
        let expect = [
            (ids.emb, (vocab.len(), layout.embed_dim)),
            (ids.w1, (hidden, layout.input_dim())),
            (ids.b1, (1, hidden)),
            (ids.w2, (n_components, hidden)),
            (ids.b2, (1, n_components)),
        ];
        for (id, s) in expect {
            if params.value(id).shape() != s {
                return Err(Error::Shape(format!(
                    "adapter {} is {:?}, expected {s:?}",
                    params.name(id),
                    params.value(id).shape()
                )));
            }
        }
        Ok(WeightAdapter {
            layout,
            n_components,
            hidden,
            vocab,
            params,
            ids,
        })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        self.params.value(self.ids.emb)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Output-layer bias, e.g. to pin a constant output.
    pub fn output_bias_mut(&mut self) -> &mut DenseMatrix {
        self.params.value_mut(self.ids.b2)
    }

    pub fn output_weights_mut(&mut self) -> &mut DenseMatrix {
        self.params.value_mut(self.ids.w2)
    }

    fn forward_x(&self, x: Vec<f64>) -> AdapterCache {
        let mut z = self.params.value(self.ids.w1).matvec(&x);
        for (zi, b) in z.iter_mut().zip(self.params.value(self.ids.b1).data()) {
            *zi += b;
        }
        let h = Activation::Tanh.forward(&z);
        let mut logits = self.params.value(self.ids.w2).matvec(&h);
        for (l, b) in logits.iter_mut().zip(self.params.value(self.ids.b2).data()) {
            *l += b;
        }
        AdapterCache {
            x,
            h,
            weights: softmax(&logits),
            logits,
        }
    }

    pub(crate) fn forward_input(&self, input: &TurnInput) -> AdapterCache {
        self.forward_x(features_from_input(input, self.embeddings()))
    }

    /// Interpolation weights for a dense feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.layout.input_dim() {
            return Err(Error::Shape(format!(
                "adapter expects {} features, got {}",
                self.layout.input_dim(),
                features.len()
            )));
        }
        Ok(self.forward_x(features.to_vec()).weights)
    }

    pub fn turn_input(
        &self,
        conv: &Conversation,
        index: usize,
        mode: PassMode,
        sources: ContextSources<'_>,
    ) -> Result<TurnInput> {
        turn_input(conv, index, &self.layout, &self.vocab, mode, sources)
    }

    /// Weights for one turn of a conversation.
    pub fn turn_weights(
        &self,
        conv: &Conversation,
        index: usize,
        mode: PassMode,
        sources: ContextSources<'_>,
    ) -> Result<Vec<f64>> {
        Ok(self.forward_input(&self.turn_input(conv, index, mode, sources)?).weights)
    }

    /// Backpropagates `dlogits` (gradient of the loss w.r.t. the output
    /// logits) into the gradient buffers.
    pub(crate) fn backward(&mut self, input: &TurnInput, cache: &AdapterCache, dlogits: &[f64]) {
        let ids = self.ids;
        for (g, d) in self.params.grad_mut(ids.b2).data_mut().iter_mut().zip(dlogits) {
            *g += d;
        }
        self.params.grad_mut(ids.w2).add_outer(dlogits, &cache.h);
        let mut dh = vec![0.0; self.hidden];
        self.params.value(ids.w2).matvec_t_acc(dlogits, &mut dh);
        let dz = Activation::Tanh.backward(&cache.h, &dh);
        for (g, d) in self.params.grad_mut(ids.b1).data_mut().iter_mut().zip(&dz) {
            *g += d;
        }
        self.params.grad_mut(ids.w1).add_outer(&dz, &cache.x);
        if input.text.is_empty() {
            return;
        }
        let mut dx = vec![0.0; cache.x.len()];
        self.params.value(ids.w1).matvec_t_acc(&dz, &mut dx);
        let d = self.layout.embed_dim;
        let g = self.params.grad_mut(ids.emb);
        for (b, tokens) in input.text.iter().enumerate() {
            mean_rows_backward(g, tokens, &dx[b * d..(b + 1) * d]);
        }
    }

    /// Adds the gradient of one example's loss and returns the loss.
    pub(crate) fn accumulate(&mut self, ex: &TurnExample, loss: AdapterLoss) -> Result<f64> {
        let cache = self.forward_input(&ex.input);
        let (value, dlogits) = match loss {
            AdapterLoss::Ppl => ppl_loss_grad(&cache.weights, &ex.token_probs),
            AdapterLoss::Xent => {
                let target = ex
                    .oracle
                    .as_ref()
                    .ok_or_else(|| Error::Config("XENT example without oracle weights".into()))?;
                softmax_xent(&cache.logits, target)?
            }
        };
        self.backward(&ex.input, &cache, &dlogits);
        Ok(value)
    }

    pub fn to_json(&self) -> String {
        let f = AdapterFile {
            layout: self.layout.clone(),
            n_components: self.n_components,
            hidden: self.hidden,
            vocab: self.vocab.tokens().to_vec(),
            params: self.params.clone(),
        };
        serde_json::to_string(&f).expect("adapter serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: AdapterFile = serde_json::from_str(text)?;
        let vocab = Arc::new(Vocabulary::from_words(f.vocab.into_iter().skip(3)));
        Self::from_parts(f.layout, f.n_components, f.hidden, vocab, f.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// softmax(affine(tanh(affine(features)))).
pub fn adapter_forward(adapter: &WeightAdapter, features: &[f64]) -> Result<Vec<f64>> {
    adapter.forward(features)
}

/// Turn-level negative log-likelihood of the mixture and its gradient with
/// respect to the adapter logits: `n * lambda - sum_t r_t`, where `r_t` are
/// the per-token posterior responsibilities.
fn ppl_loss_grad(weights: &[f64], token_probs: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let k = weights.len();
    let mut grad: Vec<f64> = weights.iter().map(|w| w * token_probs.len() as f64).collect();
    let mut loss = 0.0;
    for p in token_probs {
        let mix: f64 = weights.iter().zip(p).map(|(w, q)| w * q).sum();
        loss -= log_mix(mix);
        if mix > 0.0 {
            for j in 0..k {
                grad[j] -= weights[j] * p[j] / mix;
            }
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AdapterLoss {
    /// Cross-entropy against per-turn oracle weights.
    Xent,
    /// Mixture negative log-likelihood of the turn's tokens.
    Ppl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainConfig {
    pub loss: AdapterLoss,
    pub layout: FeatureLayout,
    pub mode: PassMode,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl AdapterTrainConfig {
    pub fn new(loss: AdapterLoss, layout: FeatureLayout, mode: PassMode) -> Self {
        AdapterTrainConfig {
            loss,
            layout,
            mode,
            hidden: 32,
            lr: 0.01,
            batch_size: 16,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainReport {
    pub curve: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub dev_perplexity: f64,
}

/// Precomputed training example: context inputs, per-token component
/// probabilities and (for XENT) oracle weights.
#[derive(Debug, Clone)]
pub(crate) struct TurnExample {
    pub(crate) input: TurnInput,
    pub(crate) token_probs: Vec<Vec<f64>>,
    pub(crate) oracle: Option<Vec<f64>>,
}

pub(crate) fn build_examples(
    adapter: &WeightAdapter,
    components: &[Arc<NGramModel>],
    corpus: &[Conversation],
    mode: PassMode,
    sources: ContextSources<'_>,
    with_oracle: bool,
) -> Result<Vec<TurnExample>> {
    let mut out = Vec::new();
    for conv in corpus {
        for t in &conv.turns {
            let token_probs = component_token_probs(components, &t.user_utterance);
            let oracle = if with_oracle {
                if t.user_utterance.is_empty() {
                    continue;
                }
                let init = vec![1.0 / components.len() as f64; components.len()];
                Some(em_on_probs(&token_probs, &init, ORACLE_TOL, ORACLE_MAX_ITERS)?.weights)
            } else {
                None
            };
            out.push(TurnExample {
                input: adapter.turn_input(conv, t.index, mode, sources)?,
                token_probs,
                oracle,
            });
        }
    }
    Ok(out)
}

pub(crate) fn examples_perplexity(adapter: &WeightAdapter, data: &[TurnExample]) -> f64 {
    let mut ll = 0.0;
    let mut n = 0usize;
    for ex in data {
        let w = adapter.forward_input(&ex.input).weights;
        for p in &ex.token_probs {
            ll += log_mix(w.iter().zip(p).map(|(a, b)| a * b).sum());
        }
        n += ex.token_probs.len();
    }
    (-ll / n.max(1) as f64).exp()
}

/// Trains a weight adapter over frozen components with Adam, early stopping
/// on dev perplexity and keeping the earliest best epoch.
pub fn train_adapter(
    components: &[Arc<NGramModel>],
    train: &[Conversation],
    dev: &[Conversation],
    sources: ContextSources<'_>,
    config: &AdapterTrainConfig,
) -> Result<(WeightAdapter, AdapterTrainReport)> {
    let vocab = components
        .first()
        .ok_or_else(|| Error::Config("no components".into()))?
        .vocab()
        .clone();
    let mut adapter = WeightAdapter::new(
        config.layout.clone(),
        vocab,
        components.len(),
        config.hidden,
        config.seed,
    )?;
    let with_oracle = config.loss == AdapterLoss::Xent;
    let train_ex = build_examples(&adapter, components, train, config.mode, sources, with_oracle)?;
    let dev_ex = build_examples(&adapter, components, dev, config.mode, sources, false)?;
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(Error::Empty("adapter training needs non-empty train and dev turns".into()));
    }
    let mut opt = Optimizer::new(OptimizerKind::adam(config.lr));
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best = (examples_perplexity(&adapter, &dev_ex), 0usize, adapter.params.clone());
    let mut curve = Vec::new();
    let mut bad = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng::substream(config.seed, &["adapter-epoch", &epoch.to_string()]));
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size.max(1)).enumerate() {
            adapter.params.zero_grads();
            let mut batch_loss = 0.0;
            let mut norm = 0usize;
            for &i in batch {
                batch_loss += adapter.accumulate(&train_ex[i], config.loss)?;
                norm += match config.loss {
                    AdapterLoss::Ppl => train_ex[i].token_probs.len(),
                    AdapterLoss::Xent => 1,
                };
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "adapter loss at epoch {epoch}, batch {b}: {batch_loss}; first bad gradient: {}",
                    adapter.params.first_non_finite_grad().unwrap_or("none")
                )));
            }
            total += batch_loss;
            adapter.params.scale_grads(1.0 / norm.max(1) as f64);
            opt.step(&mut adapter.params)?;
        }
        let dev_ppl = examples_perplexity(&adapter, &dev_ex);
        curve.push(EpochMetrics {
            epoch,
            train_loss: total / train_ex.len() as f64,
            dev_perplexity: dev_ppl,
        });
        if dev_ppl < best.0 {
            best = (dev_ppl, epoch, adapter.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    adapter.params = best.2;
    Ok((
        adapter,
        AdapterTrainReport {
            curve,
            best_epoch: best.1,
            dev_perplexity: best.0,
        },
    ))
}
