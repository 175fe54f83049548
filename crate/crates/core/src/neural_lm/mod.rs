//! LSTM language model over user utterances with optional conversational
//! context: the preceding system prompt is either mean-embedded and fed at
//! every step (AVG_CONCAT) or encoded by a second LSTM whose final state
//! seeds the decoder (ENCODER_INIT). A topic posterior of the prompt can be
//! appended to every step's input.

mod lstm;

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Vocabulary};
use crate::labels::NUM_TOPICS;
use crate::nn::{
    log_softmax, mean_rows, mean_rows_backward, DenseMatrix, Optimizer, OptimizerKind, ParamId, ParamStore,
};
use crate::topic::{derived_feature, TopicClassifier};
use crate::{rng, Error, Result};
use lstm::{Lstm, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextMode {
    None,
    AvgConcat,
    EncoderInit,
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(ContextMode::None),
            "AVG_CONCAT" => Ok(ContextMode::AvgConcat),
            "ENCODER_INIT" => Ok(ContextMode::EncoderInit),
            _ => Err(Error::Config(format!("unknown context mode {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlmArch {
    pub mode: ContextMode,
    /// Append the prompt's topic posterior to every decoder input.
    pub derived: bool,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl NlmArch {
    pub fn new(mode: ContextMode, derived: bool) -> Self {
        NlmArch {
            mode,
            derived,
            embed_dim: 32,
            hidden: 64,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.derived && self.mode == ContextMode::None {
            return Err(Error::Config("derived topic features need a context mode other than NONE".into()));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("NLM dimensions must be positive".into()));
        }
        Ok(())
    }

    fn topic_dim(&self) -> usize {
        if self.derived {
            NUM_TOPICS
        } else {
            0
        }
    }

    /// Width of the block appended to each decoder input.
    fn context_dim(&self) -> usize {
        match self.mode {
            ContextMode::None => 0,
            ContextMode::AvgConcat => self.embed_dim + self.topic_dim(),
            ContextMode::EncoderInit => self.topic_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NlmIds {
    emb: ParamId,
    dec: Lstm,
    out_w: ParamId,
    out_b: ParamId,
    enc: Option<Lstm>,
}

#[derive(Debug, Clone)]
pub struct NeuralLM {
    arch: NlmArch,
    vocab: Arc<Vocabulary>,
    params: ParamStore,
    ids: NlmIds,
}

/// Conditioning information for one user utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextInput {
    pub prompt: Vec<u32>,
    pub topic: Option<Vec<f64>>,
}

/// Encoded context: the block concatenated to every decoder input and the
/// decoder's initial hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub concat: Vec<f64>,
    pub init_hidden: Vec<f64>,
}

struct Trace {
    enc: Vec<Step>,
    dec: Vec<Step>,
    logp: Vec<Vec<f64>>,
    targets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NlmFile {
    arch: NlmArch,
    vocab: Vec<String>,
    params: ParamStore,
}

impl NeuralLM {
    pub fn new(arch: NlmArch, vocab: Arc<Vocabulary>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut r = rng::substream(seed, &["nlm-init"]);
        let v_pred = vocab.predictive_size();
        let emb = params.add("emb", DenseMatrix::glorot(vocab.len(), arch.embed_dim, &mut r))?;
        let dec = Lstm::add(&mut params, "dec", arch.embed_dim + arch.context_dim(), arch.hidden, seed)?;
        let out_w = params.add("out.w", DenseMatrix::glorot(v_pred, arch.hidden, &mut r))?;
        let out_b = params.add("out.b", DenseMatrix::zeros(1, v_pred))?;
        let enc = match arch.mode {
            ContextMode::EncoderInit => Some(Lstm::add(&mut params, "enc", arch.embed_dim, arch.hidden, seed)?),
            _ => None,
        };
        Ok(NeuralLM {
            arch,
            vocab,
            params,
            ids: NlmIds {
                emb,
                dec,
                out_w,
                out_b,
                enc,
            },
        })
    }

    fn from_parts(arch: NlmArch, vocab: Arc<Vocabulary>, params: ParamStore) -> Result<Self> {
        arch.validate()?;
        let fresh = NeuralLM::new(arch, vocab, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Shape("NLM checkpoint has the wrong parameter set".into()));
        }
        for id in fresh.params.ids() {
            let name = fresh.params.name(id);
            let other = params
                .id(name)
                .ok_or_else(|| Error::Config(format!("NLM checkpoint lacks {name}")))?;
            if other != id || params.value(other).shape() != fresh.params.value(id).shape() {
                return Err(Error::Shape(format!("NLM checkpoint parameter {name} does not fit")));
            }
        }
        Ok(NeuralLM { params, ..fresh })
    }

    pub fn arch(&self) -> NlmArch {
        self.arch
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Context input for a turn: its system prompt and, for derived models,
    /// the classifier's topic posterior.
    pub fn context_for_turn(
        &self,
        conv: &Conversation,
        index: usize,
        classifier: Option<&TopicClassifier>,
    ) -> Result<ContextInput> {
        let prompt = self.vocab.ids_of(&conv.turns[index].system_prompt);
        let topic = if self.arch.derived {
            let clf = classifier.ok_or_else(|| Error::Config("derived NLM needs a topic classifier".into()))?;
            Some(derived_feature(clf, conv, index))
        } else {
            None
        };
        Ok(ContextInput { prompt, topic })
    }

    fn check_context(&self, ctx: &ContextInput) -> Result<()> {
        match (&ctx.topic, self.arch.derived) {
            (Some(t), true) if t.len() != NUM_TOPICS => Err(Error::Shape(format!(
                "topic posterior has {} entries, expected {NUM_TOPICS}",
                t.len()
            ))),
            (None, true) => Err(Error::Config("derived NLM needs a topic posterior".into())),
            _ => Ok(()),
        }
    }

    fn encode(&self, ctx: &ContextInput) -> (ContextBundle, Vec<Step>) {
        let emb = self.params.value(self.ids.emb);
        let topic = || ctx.topic.iter().flatten().copied().take(self.arch.topic_dim());
        let h = self.arch.hidden;
        match self.arch.mode {
            ContextMode::None => (
                ContextBundle {
                    concat: Vec::new(),
                    init_hidden: vec![0.0; h],
                },
                Vec::new(),
            ),
            ContextMode::AvgConcat => {
                let mut concat = mean_rows(emb, &ctx.prompt);
                concat.extend(topic());
                (
                    ContextBundle {
                        concat,
                        init_hidden: vec![0.0; h],
                    },
                    Vec::new(),
                )
            }
            ContextMode::EncoderInit => {
                let enc = self.ids.enc.expect("encoder present");
                let xs = ctx.prompt.iter().map(|&t| emb.row(t as usize).to_vec()).collect();
                let steps = enc.run(&self.params, xs, &vec![0.0; h], &vec![0.0; h]);
                let init_hidden = steps.last().map_or_else(|| vec![0.0; h], |s| s.h.clone());
                (
                    ContextBundle {
                        concat: topic().collect(),
                        init_hidden,
                    },
                    steps,
                )
            }
        }
    }

    /// Encodes a system prompt (and topic posterior, for derived models).
    pub fn encode_context<S: AsRef<str>>(&self, prompt: &[S], topic: Option<&[f64]>) -> Result<ContextBundle> {
        let ctx = ContextInput {
            prompt: self.vocab.ids_of(prompt),
            topic: topic.map(<[f64]>::to_vec),
        };
        self.check_context(&ctx)?;
        Ok(self.encode(&ctx).0)
    }

    fn run(&self, sentence: &[u32], ctx: &ContextInput) -> Trace {
        let (bundle, enc) = self.encode(ctx);
        let emb = self.params.value(self.ids.emb);
        let mut inputs = Vec::with_capacity(sentence.len() + 1);
        inputs.push(Vocabulary::START_ID);
        inputs.extend_from_slice(sentence);
        let xs = inputs
            .iter()
            .map(|&t| {
                let mut x = emb.row(t as usize).to_vec();
                x.extend_from_slice(&bundle.concat);
                x
            })
            .collect();
        let dec = self
            .ids
            .dec
            .run(&self.params, xs, &bundle.init_hidden, &vec![0.0; self.arch.hidden]);
        let out_w = self.params.value(self.ids.out_w);
        let out_b = self.params.value(self.ids.out_b).data();
        let logp = dec
            .iter()
            .map(|s| {
                let mut z = out_w.matvec(&s.h);
                for (zi, b) in z.iter_mut().zip(out_b) {
                    *zi += b;
                }
                log_softmax(&z)
            })
            .collect();
        let targets = sentence
            .iter()
            .chain(std::iter::once(&Vocabulary::END_ID))
            .map(|&t| t as usize - 1)
            .collect();
        Trace {
            enc,
            dec,
            logp,
            targets,
        }
    }

    /// Natural-log probability of each token and then the end marker.
    pub fn token_logprobs_ids(&self, sentence: &[u32], ctx: &ContextInput) -> Vec<f64> {
        let tr = self.run(sentence, ctx);
        tr.logp.iter().zip(&tr.targets).map(|(lp, &t)| lp[t]).collect()
    }

    /// Full next-token log distributions over the predictive vocabulary
    /// (ids 1..), one per position.
    pub fn step_distributions(&self, sentence: &[u32], ctx: &ContextInput) -> Vec<Vec<f64>> {
        self.run(sentence, ctx).logp
    }

    pub fn sentence_logprob<S: AsRef<str>>(&self, tokens: &[S], ctx: &ContextInput) -> f64 {
        self.token_logprobs_ids(&self.vocab.ids_of(tokens), ctx).iter().sum()
    }

    /// Negative log-likelihood of one sentence; gradients are added to
    /// `grads` (buffers from [`ParamStore::grad_buffers`]).
    pub(crate) fn loss_and_grad(&self, sentence: &[u32], ctx: &ContextInput, grads: &mut [DenseMatrix]) -> f64 {
        let tr = self.run(sentence, ctx);
        let ids = self.ids;
        let p = &self.params;
        let mut loss = 0.0;
        let mut dh_out = Vec::with_capacity(tr.dec.len());
        for ((lp, &t), s) in tr.logp.iter().zip(&tr.targets).zip(&tr.dec) {
            loss -= lp[t];
            let mut dz: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            dz[t] -= 1.0;
            grads[ids.out_w.0].add_outer(&dz, &s.h);
            for (g, d) in grads[ids.out_b.0].data_mut().iter_mut().zip(&dz) {
                *g += d;
            }
            let mut dh = vec![0.0; self.arch.hidden];
            p.value(ids.out_w).matvec_t_acc(&dz, &mut dh);
            dh_out.push(dh);
        }
        let (dxs, dh0) = ids.dec.backward(p, &tr.dec, &dh_out, grads);
        let d = self.arch.embed_dim;
        let mut dctx = vec![0.0; self.arch.context_dim()];
        let inputs = std::iter::once(Vocabulary::START_ID).chain(sentence.iter().copied());
        for (tok, dx) in inputs.zip(&dxs) {
            for (g, v) in grads[ids.emb.0].row_mut(tok as usize).iter_mut().zip(&dx[..d]) {
                *g += v;
            }
            for (a, v) in dctx.iter_mut().zip(&dx[d..]) {
                *a += v;
            }
        }
        match self.arch.mode {
            ContextMode::AvgConcat => mean_rows_backward(&mut grads[ids.emb.0], &ctx.prompt, &dctx[..d]),
            ContextMode::EncoderInit if !tr.enc.is_empty() => {
                let enc = ids.enc.expect("encoder present");
                let mut dh_enc = vec![vec![0.0; self.arch.hidden]; tr.enc.len()];
                *dh_enc.last_mut().expect("non-empty") = dh0;
                let (dxe, _) = enc.backward(p, &tr.enc, &dh_enc, grads);
                for (&tok, dx) in ctx.prompt.iter().zip(&dxe) {
                    for (g, v) in grads[ids.emb.0].row_mut(tok as usize).iter_mut().zip(dx) {
                        *g += v;
                    }
                }
            }
            _ => {}
        }
        loss
    }

    pub fn to_json(&self) -> String {
        let f = NlmFile {
            arch: self.arch,
            vocab: self.vocab.tokens().to_vec(),
            params: self.params.clone(),
        };
        serde_json::to_string(&f).expect("NLM serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: NlmFile = serde_json::from_str(text)?;
        let vocab = Arc::new(Vocabulary::from_words(f.vocab.into_iter().skip(3)));
        Self::from_parts(f.arch, vocab, f.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Encodes a prompt for `nlm`.
pub fn encode_context<S: AsRef<str>>(nlm: &NeuralLM, prompt: &[S], topic: Option<&[f64]>) -> Result<ContextBundle> {
    nlm.encode_context(prompt, topic)
}

/// Teacher-forced per-token log probabilities (end marker last).
pub fn nlm_forward<S: AsRef<str>>(nlm: &NeuralLM, sentence: &[S], ctx: &ContextInput) -> Result<Vec<f64>> {
    nlm.check_context(ctx)?;
    Ok(nlm.token_logprobs_ids(&nlm.vocab.ids_of(sentence), ctx))
}

pub(crate) struct NlmExample {
    sentence: Vec<u32>,
    ctx: ContextInput,
}

fn examples(nlm: &NeuralLM, corpus: &[Conversation], classifier: Option<&TopicClassifier>) -> Result<Vec<NlmExample>> {
    let mut out = Vec::new();
    for conv in corpus {
        for t in &conv.turns {
            out.push(NlmExample {
                sentence: nlm.vocab.ids_of(&t.user_utterance),
                ctx: nlm.context_for_turn(conv, t.index, classifier)?,
            });
        }
    }
    Ok(out)
}

fn examples_nll(nlm: &NeuralLM, data: &[NlmExample]) -> (f64, usize) {
    let parts: Vec<(f64, usize)> = data
        .par_iter()
        .map(|e| {
            let lp = nlm.token_logprobs_ids(&e.sentence, &e.ctx);
            (-lp.iter().sum::<f64>(), lp.len())
        })
        .collect();
    parts.iter().fold((0.0, 0), |(a, n), (b, m)| (a + b, n + m))
}

/// Perplexity over user tokens plus end markers, each utterance
/// conditioned on its turn's system prompt.
pub fn nlm_perplexity(nlm: &NeuralLM, corpus: &[Conversation], classifier: Option<&TopicClassifier>) -> Result<f64> {
    let data = examples(nlm, corpus, classifier)?;
    if data.is_empty() {
        return Err(Error::Empty("perplexity needs at least one turn".into()));
    }
    let (nll, n) = examples_nll(nlm, &data);
    Ok((nll / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmTrainConfig {
    pub arch: NlmArch,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl NlmTrainConfig {
    pub fn new(arch: NlmArch) -> Self {
        NlmTrainConfig {
            arch,
            lr: 0.005,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmEpoch {
    pub epoch: usize,
    pub train_perplexity: f64,
    pub dev_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmTrainReport {
    pub curve: Vec<NlmEpoch>,
    pub best_epoch: usize,
    pub dev_perplexity: f64,
}

/// Sentences per gradient shard. Shards are reduced in index order, so the
/// result does not depend on the thread count.
const SHARD: usize = 8;

/// Trains with Adam, global gradient clipping and early stopping on dev
/// perplexity (earliest best epoch kept).
pub fn train_nlm(
    train: &[Conversation],
    dev: &[Conversation],
    vocab: Arc<Vocabulary>,
    classifier: Option<&TopicClassifier>,
    config: &NlmTrainConfig,
) -> Result<(NeuralLM, NlmTrainReport)> {
    let mut nlm = NeuralLM::new(config.arch, vocab, config.seed)?;
    let train_ex = examples(&nlm, train, classifier)?;
    let dev_ex = examples(&nlm, dev, classifier)?;
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(Error::Empty("NLM training needs non-empty train and dev sets".into()));
    }
    let dev_ppl = |m: &NeuralLM| {
        let (nll, n) = examples_nll(m, &dev_ex);
        (nll / n as f64).exp()
    };
    let mut opt = Optimizer::new(OptimizerKind::adam(config.lr));
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best = (dev_ppl(&nlm), 0usize, nlm.params.clone());
    let mut curve = Vec::new();
    let mut bad = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng::substream(config.seed, &["nlm-epoch", &epoch.to_string()]));
        let mut total = 0.0;
        let mut tokens = 0usize;
        for (b, batch) in order.chunks(config.batch_size.max(1)).enumerate() {
            let shards: Vec<(f64, usize, Vec<DenseMatrix>)> = batch
                .par_chunks(SHARD)
                .map(|idx| {
                    let mut g = nlm.params.grad_buffers();
                    let mut loss = 0.0;
                    let mut n = 0;
                    for &i in idx {
                        let e = &train_ex[i];
                        loss += nlm.loss_and_grad(&e.sentence, &e.ctx, &mut g);
                        n += e.sentence.len() + 1;
                    }
                    (loss, n, g)
                })
                .collect();
            nlm.params.zero_grads();
            let mut batch_loss = 0.0;
            let mut batch_tokens = 0;
            for (l, n, g) in &shards {
                batch_loss += l;
                batch_tokens += n;
                nlm.params.add_grad_buffers(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "NLM loss at epoch {epoch}, batch {b}: {batch_loss}; first bad gradient: {}",
                    nlm.params.first_non_finite_grad().unwrap_or("none")
                )));
            }
            nlm.params.scale_grads(1.0 / batch_tokens as f64);
            nlm.params.clip_grad_norm(config.clip_norm);
            opt.step(&mut nlm.params)?;
            total += batch_loss;
            tokens += batch_tokens;
        }
        let d = dev_ppl(&nlm);
        curve.push(NlmEpoch {
            epoch,
            train_perplexity: (total / tokens as f64).exp(),
            dev_perplexity: d,
        });
        if d < best.0 {
            best = (d, epoch, nlm.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    nlm.params = best.2;
    Ok((
        nlm,
        NlmTrainReport {
            curve,
            best_epoch: best.1,
            dev_perplexity: best.0,
        },
    ))
}
