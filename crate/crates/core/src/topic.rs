//! Deep averaging network (DAN) topic and dialog-act classifiers.
//!
//! The network averages word embeddings of the input utterance, optionally
//! concatenates a second averaged block for the previous exchange, and
//! applies one tanh hidden layer followed by a softmax over the labels.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Vocabulary};
use crate::labels::{LabelInventory, LabelKind};
use crate::nn::{
    mean_rows, mean_rows_backward, softmax, softmax_xent, Activation, DenseMatrix, Optimizer,
    OptimizerKind, ParamId, ParamStore,
};
use crate::{rng, Error, Result};


/// Which side of a turn the classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    UserUtterance,
    SystemPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DanShape {
    pub vocab_size: usize,
    pub n_labels: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub contextual: bool,
}

#[derive(Debug, Clone, Copy)]
struct DanIds {
    emb: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// The raw classifier network, independent of any label inventory.
#[derive(Debug, Clone)]
pub struct DanNetwork {
    shape: DanShape,
    params: ParamStore,
    ids: DanIds,
}

struct DanCache {
    x: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

impl DanNetwork {
    pub fn new(shape: DanShape, seed: u64) -> Self {
        let mut r = rng::substream(seed, &["dan-init"]);
        let in_dim = shape.embed_dim * if shape.contextual { 2 } else { 1 };
        let mut params = ParamStore::new();
        let mut add = |name: &str, m: DenseMatrix| params.add(name, m).expect("unique names");
        let ids = DanIds {
            emb: add("emb", DenseMatrix::glorot(shape.vocab_size, shape.embed_dim, &mut r)),
            w1: add("w1", DenseMatrix::glorot(shape.hidden, in_dim, &mut r)),
            b1: add("b1", DenseMatrix::zeros(1, shape.hidden)),
            w2: add("w2", DenseMatrix::glorot(shape.n_labels, shape.hidden, &mut r)),
            b2: add("b2", DenseMatrix::zeros(1, shape.n_labels)),
        };
        DanNetwork { shape, params, ids }
    }

    fn from_params(shape: DanShape, params: ParamStore) -> Result<Self> {
        let get = |n: &str| {
            params
                .id(n)
                .ok_or_else(|| Error::Config(format!("classifier checkpoint lacks {n}")))
        };
        let ids = DanIds {
            emb: get("emb")?,
            w1: get("w1")?,
            b1: get("b1")?,
            w2: get("w2")?,
            b2: get("b2")?,
        };
        let in_dim = shape.embed_dim * if shape.contextual { 2 } else { 1 };
        let expect = [
            (ids.emb, (shape.vocab_size, shape.embed_dim)),
            (ids.w1, (shape.hidden, in_dim)),
            (ids.b1, (1, shape.hidden)),
            (ids.w2, (shape.n_labels, shape.hidden)),
            (ids.b2, (1, shape.n_labels)),
        ];
        for (id, s) in expect {
            if params.value(id).shape() != s {
                return Err(Error::Shape(format!(
                    "{} is {:?}, expected {s:?}",
                    params.name(id),
                    params.value(id).shape()
                )));
            }
        }
        Ok(DanNetwork { shape, params, ids })
    }

    pub fn shape(&self) -> DanShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, utt: &[u32], ctx: &[u32]) -> DanCache {
        let emb = self.params.value(self.ids.emb);
        let mut x = mean_rows(emb, utt);
        if self.shape.contextual {
            x.extend(mean_rows(emb, ctx));
        }
        let mut z = self.params.value(self.ids.w1).matvec(&x);
        for (zi, b) in z.iter_mut().zip(self.params.value(self.ids.b1).data()) {
            *zi += b;
        }
        let h = Activation::Tanh.forward(&z);
        let mut logits = self.params.value(self.ids.w2).matvec(&h);
        for (l, b) in logits.iter_mut().zip(self.params.value(self.ids.b2).data()) {
            *l += b;
        }
        DanCache { x, h, logits }
    }

    /// Posterior over labels. The context block is ignored by
    /// non-contextual networks.
    pub fn posterior(&self, utt: &[u32], ctx: &[u32]) -> Vec<f64> {
        softmax(&self.forward(utt, ctx).logits)
    }

    /// Adds the gradient of the cross-entropy against `target` into the
    /// gradient buffers and returns the loss.
    pub fn accumulate_grad(&mut self, utt: &[u32], ctx: &[u32], target: &[f64]) -> Result<f64> {
        let cache = self.forward(utt, ctx);
        let (loss, dlogits) = softmax_xent(&cache.logits, target)?;
        let ids = self.ids;
        {
            let (_, g) = self.params.pair_mut(ids.b2);
            for (gi, d) in g.data_mut().iter_mut().zip(&dlogits) {
                *gi += d;
            }
        }
        self.params.grad_mut(ids.w2).add_outer(&dlogits, &cache.h);
        let mut dh = vec![0.0; self.shape.hidden];
        self.params.value(ids.w2).matvec_t_acc(&dlogits, &mut dh);
        let dz = Activation::Tanh.backward(&cache.h, &dh);
        for (gi, d) in self.params.grad_mut(ids.b1).data_mut().iter_mut().zip(&dz) {
            *gi += d;
        }
        self.params.grad_mut(ids.w1).add_outer(&dz, &cache.x);
        let mut dx = vec![0.0; cache.x.len()];
        self.params.value(ids.w1).matvec_t_acc(&dz, &mut dx);
        let d = self.shape.embed_dim;
        let g = self.params.grad_mut(ids.emb);
        mean_rows_backward(g, utt, &dx[..d]);
        if self.shape.contextual {
            mean_rows_backward(g, ctx, &dx[d..]);
        }
        Ok(loss)
    }

    /// Non-contextual network sharing every parameter except the context
    /// columns of the hidden layer.
    pub fn without_context(&self) -> DanNetwork {
        let mut shape = self.shape;
        shape.contextual = false;
        let mut params = ParamStore::new();
        for id in self.params.ids() {
            let v = self.params.value(id);
            let v = if id == self.ids.w1 {
                let d = self.shape.embed_dim;
                let mut m = DenseMatrix::zeros(v.rows(), d);
                for r in 0..v.rows() {
                    m.row_mut(r).copy_from_slice(&v.row(r)[..d]);
                }
                m
            } else {
                v.clone()
            };
            params.add(self.params.name(id), v).expect("unique names");
        }
        DanNetwork::from_params(shape, params).expect("consistent shapes")
    }

    /// Reorders output rows: new label `i` takes old label `order[i]`.
    fn permute_outputs(&mut self, order: &[usize]) {
        let ids = self.ids;
        let w2 = self.params.value(ids.w2).clone();
        let b2 = self.params.value(ids.b2).clone();
        let nw = self.params.value_mut(ids.w2);
        for (i, &o) in order.iter().enumerate() {
            nw.row_mut(i).copy_from_slice(w2.row(o));
        }
        let nb = self.params.value_mut(ids.b2);
        for (i, &o) in order.iter().enumerate() {
            nb.data_mut()[i] = b2.data()[o];
        }
    }
}

/// Tokens of the previous exchange (system prompt and user reply of turn
/// `index - 1`); empty at turn 0.
pub fn previous_exchange(conv: &Conversation, index: usize) -> Vec<String> {
    if index == 0 {
        return Vec::new();
    }
    let prev = &conv.turns[index - 1];
    prev.system_prompt
        .iter()
        .chain(&prev.user_utterance)
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct TopicClassifier {
    net: DanNetwork,
    inventory: LabelInventory,
    source: TextSource,
    vocab: Arc<Vocabulary>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    kind: LabelKind,
    labels: Vec<String>,
    source: TextSource,
    shape: DanShape,
    vocab: Vec<String>,
    params: ParamStore,
}

impl TopicClassifier {
    pub fn new(
        vocab: Arc<Vocabulary>,
        inventory: LabelInventory,
        source: TextSource,
        embed_dim: usize,
        hidden: usize,
        contextual: bool,
        seed: u64,
    ) -> Self {
        let shape = DanShape {
            vocab_size: vocab.len(),
            n_labels: inventory.len(),
            embed_dim,
            hidden,
            contextual,
        };
        TopicClassifier {
            net: DanNetwork::new(shape, seed),
            inventory,
            source,
            vocab,
        }
    }

    /// Classifier whose every parameter is zero: uniform posterior.
    pub fn zeroed(vocab: Arc<Vocabulary>, kind: LabelKind, contextual: bool) -> Self {
        let mut c = Self::new(
            vocab,
            LabelInventory::for_kind(kind),
            TextSource::SystemPrompt,
            8,
            8,
            contextual,
            0,
        );
        c.net.params.zero_values();
        c
    }

    pub fn inventory(&self) -> &LabelInventory {
        &self.inventory
    }

    pub fn source(&self) -> TextSource {
        self.source
    }

    pub fn is_contextual(&self) -> bool {
        self.net.shape.contextual
    }

    pub fn network(&self) -> &DanNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DanNetwork {
        &mut self.net
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Posterior over the inventory. A contextual classifier treats a
    /// missing context as an empty one.
    pub fn classify<S: AsRef<str>>(&self, utterance: &[S], context: Option<&[S]>) -> Vec<f64> {
        let utt = self.vocab.ids_of(utterance);
        let ctx = match context {
            Some(c) if self.net.shape.contextual => self.vocab.ids_of(c),
            _ => Vec::new(),
        };
        self.net.posterior(&utt, &ctx)
    }

    /// Index of the most probable label; ties go to the lowest index.
    pub fn predict<S: AsRef<str>>(&self, utterance: &[S], context: Option<&[S]>) -> usize {
        argmax(&self.classify(utterance, context))
    }

    fn turn_input(&self, conv: &Conversation, index: usize) -> (Vec<u32>, Vec<u32>) {
        let t = &conv.turns[index];
        let text = match self.source {
            TextSource::UserUtterance => &t.user_utterance,
            TextSource::SystemPrompt => &t.system_prompt,
        };
        let ctx = if self.net.shape.contextual {
            self.vocab.ids_of(&previous_exchange(conv, index))
        } else {
            Vec::new()
        };
        (self.vocab.ids_of(text), ctx)
    }

    /// Posterior for one turn of a conversation, reading the configured
    /// source text and, if contextual, the previous exchange.
    pub fn classify_turn(&self, conv: &Conversation, index: usize) -> Vec<f64> {
        let (utt, ctx) = self.turn_input(conv, index);
        self.net.posterior(&utt, &ctx)
    }

    /// Same classifier with the inventory reordered; posterior coordinates
    /// follow the new order.
    pub fn with_inventory_order(&self, inventory: LabelInventory) -> Result<Self> {
        if inventory.kind() != self.inventory.kind() {
            return Err(Error::Config("inventory kind differs".into()));
        }
        let order: Vec<usize> = inventory
            .labels()
            .iter()
            .map(|l| self.inventory.index_of(l).ok_or_else(|| Error::Config(format!("unknown label {l}"))))
            .collect::<Result<_>>()?;
        let mut out = self.clone();
        out.net.permute_outputs(&order);
        out.inventory = inventory;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let f = ClassifierFile {
            kind: self.inventory.kind(),
            labels: self.inventory.labels().to_vec(),
            source: self.source,
            shape: self.net.shape,
            vocab: self.vocab.tokens().to_vec(),
            params: self.net.params.clone(),
        };
        serde_json::to_string(&f).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ClassifierFile = serde_json::from_str(text)?;
        let inventory = LabelInventory::permuted(f.kind, f.labels)?;
        let vocab = Arc::new(Vocabulary::from_words(f.vocab.into_iter().skip(3)));
        if vocab.len() != f.shape.vocab_size || inventory.len() != f.shape.n_labels {
            return Err(Error::Shape("classifier file header disagrees with its contents".into()));
        }
        Ok(TopicClassifier {
            net: DanNetwork::from_params(f.shape, f.params)?,
            inventory,
            source: f.source,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Topic posterior (length 12) computed from a turn's system prompt, plus
/// the previous exchange when the classifier is contextual.
pub fn derived_feature(classifier: &TopicClassifier, conv: &Conversation, index: usize) -> Vec<f64> {
    let prompt = &conv.turns[index].system_prompt;
    let ctx = previous_exchange(conv, index);
    classifier.classify(prompt, Some(&ctx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTrainConfig {
    pub kind: LabelKind,
    pub source: TextSource,
    pub contextual: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TopicTrainConfig {
    fn default() -> Self {
        TopicTrainConfig {
            kind: LabelKind::Topic,
            source: TextSource::UserUtterance,
            contextual: false,
            embed_dim: 16,
            hidden: 32,
            lr: 0.01,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicTrainReport {
    pub dev_accuracy: f64,
    pub best_epoch: usize,
    /// (epoch, mean train loss, dev accuracy)
    pub curve: Vec<(usize, f64, f64)>,
}

struct Example {
    utt: Vec<u32>,
    ctx: Vec<u32>,
    label: usize,
}

fn examples(
    classifier: &TopicClassifier,
    corpus: &[Conversation],
) -> Result<Vec<Example>> {
    let key = classifier.inventory.kind().meta_key();
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for conv in corpus {
        for t in &conv.turns {
            match t.metadata.get(key).and_then(|l| classifier.inventory.index_of(l)) {
                Some(label) => {
                    let (utt, ctx) = classifier.turn_input(conv, t.index);
                    out.push(Example { utt, ctx, label });
                }
                None => {
                    if missing.last() != Some(&conv.id) {
                        missing.push(conv.id.clone());
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    Ok(out)
}

fn accuracy(classifier: &TopicClassifier, data: &[Example]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|e| argmax(&classifier.net.posterior(&e.utt, &e.ctx)) == e.label)
        .count();
    correct as f64 / data.len() as f64
}

/// Accuracy of `classifier` on the gold labels of `corpus`.
pub fn evaluate_accuracy(classifier: &TopicClassifier, corpus: &[Conversation]) -> Result<f64> {
    Ok(accuracy(classifier, &examples(classifier, corpus)?))
}

/// Trains a DAN classifier with Adam and early stopping on dev accuracy,
/// keeping the earliest epoch that reached the best accuracy.
pub fn train_topic(
    train: &[Conversation],
    dev: &[Conversation],
    vocab: Arc<Vocabulary>,
    config: &TopicTrainConfig,
) -> Result<(TopicClassifier, TopicTrainReport)> {
    let mut clf = TopicClassifier::new(
        vocab,
        LabelInventory::for_kind(config.kind),
        config.source,
        config.embed_dim,
        config.hidden,
        config.contextual,
        config.seed,
    );
    let train_ex = examples(&clf, train)?;
    let dev_ex = examples(&clf, dev)?;
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(Error::Empty("topic training needs non-empty train and dev sets".into()));
    }
    let n_labels = clf.inventory.len();
    let mut opt = Optimizer::new(OptimizerKind::adam(config.lr));
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, clf.net.params.clone());
    let mut bad = 0;
    let mut curve = Vec::new();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng::substream(config.seed, &["topic-epoch", &epoch.to_string()]));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            clf.net.params.zero_grads();
            for &i in batch {
                let e = &train_ex[i];
                let mut target = vec![0.0; n_labels];
                target[e.label] = 1.0;
                total += clf.net.accumulate_grad(&e.utt, &e.ctx, &target)?;
            }
            clf.net.params.scale_grads(1.0 / batch.len() as f64);
            opt.step(&mut clf.net.params)?;
        }
        let mean_loss = total / train_ex.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("topic training loss at epoch {epoch}")));
        }
        let acc = accuracy(&clf, &dev_ex);
        curve.push((epoch, mean_loss, acc));
        if acc > best.0 {
            best = (acc, epoch, clf.net.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    clf.net.params = best.2;
    Ok((
        clf,
        TopicTrainReport {
            dev_accuracy: best.0,
            best_epoch: best.1,
            curve,
        },
    ))
}
