//! Conversational context features for the weight adapter.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Vocabulary};
use crate::labels::NUM_TOPICS;
use crate::nn::{mean_rows, DenseMatrix};
use crate::topic::{derived_feature, TopicClassifier};
use crate::{Error, Result};

/// Number of turn-index buckets in the META block: {0, 1-2, 3-5, 6+}.
pub const TURN_BUCKETS: usize = 4;

pub fn turn_bucket(index: usize) -> usize {
    match index {
        0 => 0,
        1..=2 => 1,
        3..=5 => 2,
        _ => 3,
    }
}

/// Subset of context features, concatenated in the fixed order
/// PREV_USER, PREV_SYS, CURR, META, TOPIC_DERIVED.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSet {
    pub prev_user: bool,
    pub prev_sys: bool,
    pub curr: bool,
    pub meta: bool,
    pub topic_derived: bool,
}

const NAMES: [&str; 5] = ["PREV_USER", "PREV_SYS", "CURR", "META", "TOPIC_DERIVED"];

impl FeatureSet {
    fn flags(&self) -> [bool; 5] {
        [self.prev_user, self.prev_sys, self.curr, self.meta, self.topic_derived]
    }

    pub fn is_empty(&self) -> bool {
        !self.flags().iter().any(|f| *f)
    }

    /// Number of mean-embedded text blocks.
    pub fn text_blocks(&self) -> usize {
        usize::from(self.prev_user) + usize::from(self.prev_sys) + usize::from(self.curr)
    }

    pub fn with_curr(mut self) -> Self {
        self.curr = true;
        self
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    /// Parses `+`- or `,`-separated names, e.g. `PREV_SYS+META`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = FeatureSet::default();
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_uppercase().as_str() {
                "PREV_USER" => set.prev_user = true,
                "PREV_SYS" => set.prev_sys = true,
                "CURR" => set.curr = true,
                "META" => set.meta = true,
                "TOPIC_DERIVED" => set.topic_derived = true,
                other => return Err(Error::Config(format!("unknown feature {other}"))),
            }
        }
        if set.is_empty() {
            return Err(Error::Config(format!("empty feature set {s:?}")));
        }
        Ok(set)
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.to_string()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .flags()
            .iter()
            .zip(NAMES)
            .filter(|(on, _)| **on)
            .map(|(_, n)| n)
            .collect();
        f.write_str(&names.join("+"))
    }
}

/// 1-pass decoding sees only context available before the user speaks;
/// 2-pass additionally sees the first-pass hypothesis of the turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassMode {
    OnePass,
    TwoPass,
}

/// Feature set plus everything that fixes the feature-vector length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub features: FeatureSet,
    pub embed_dim: usize,
    /// Bot ids of the META one-hot, in order. Unknown bots get a zero block.
    pub bots: Vec<String>,
}

impl FeatureLayout {
    pub fn meta_dim(&self) -> usize {
        if self.features.meta {
            self.bots.len() + TURN_BUCKETS
        } else {
            0
        }
    }

    pub fn topic_dim(&self) -> usize {
        if self.features.topic_derived {
            NUM_TOPICS
        } else {
            0
        }
    }

    pub fn dense_dim(&self) -> usize {
        self.meta_dim() + self.topic_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.features.text_blocks() * self.embed_dim + self.dense_dim()
    }
}

/// First-pass hypotheses keyed by (conversation id, turn index).
pub type FirstPassMap = HashMap<(String, usize), Vec<String>>;

/// External inputs some features need.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextSources<'a> {
    pub classifier: Option<&'a TopicClassifier>,
    pub first_pass: Option<&'a FirstPassMap>,
}

/// Raw per-turn inputs: token ids of each text block, then the dense
/// META/TOPIC_DERIVED part.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnInput {
    pub text: Vec<Vec<u32>>,
    pub dense: Vec<f64>,
}

pub fn meta_block(bots: &[String], bot: Option<&str>, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; bots.len() + TURN_BUCKETS];
    if let Some(i) = bot.and_then(|b| bots.iter().position(|x| x == b)) {
        v[i] = 1.0;
    }
    v[bots.len() + turn_bucket(index)] = 1.0;
    v
}

pub fn turn_input(
    conv: &Conversation,
    index: usize,
    layout: &FeatureLayout,
    vocab: &Vocabulary,
    mode: PassMode,
    sources: ContextSources<'_>,
) -> Result<TurnInput> {
    let f = layout.features;
    let turn = conv.turns.get(index).ok_or_else(|| Error::InvalidConversation {
        id: conv.id.clone(),
        message: format!("no turn {index}"),
    })?;
    let mut text = Vec::with_capacity(f.text_blocks());
    if f.prev_user {
        text.push(match index {
            0 => Vec::new(),
            i => vocab.ids_of(&conv.turns[i - 1].user_utterance),
        });
    }
    if f.prev_sys {
        text.push(vocab.ids_of(&turn.system_prompt));
    }
    if f.curr {
        if mode == PassMode::OnePass {
            return Err(Error::Config("CURR features need 2-pass mode".into()));
        }
        let hyp = sources
            .first_pass
            .and_then(|m| m.get(&(conv.id.clone(), index)))
            .ok_or_else(|| Error::Config(format!("no first-pass hypothesis for {} turn {index}", conv.id)))?;
        text.push(vocab.ids_of(hyp));
    }
    let mut dense = Vec::with_capacity(layout.dense_dim());
    if f.meta {
        dense.extend(meta_block(&layout.bots, turn.bot_id(), index));
    }
    if f.topic_derived {
        let clf = sources
            .classifier
            .ok_or_else(|| Error::Config("TOPIC_DERIVED needs a topic classifier".into()))?;
        dense.extend(derived_feature(clf, conv, index));
    }
    Ok(TurnInput { text, dense })
}

/// Dense feature vector: mean embeddings of the text blocks (zero when a
/// block is empty) followed by the dense blocks.
pub fn features_from_input(input: &TurnInput, embeddings: &DenseMatrix) -> Vec<f64> {
    let mut x = Vec::with_capacity(input.text.len() * embeddings.cols() + input.dense.len());
    for ids in &input.text {
        x.extend(mean_rows(embeddings, ids));
    }
    x.extend_from_slice(&input.dense);
    x
}

pub fn featurize(
    conv: &Conversation,
    index: usize,
    layout: &FeatureLayout,
    embeddings: &DenseMatrix,
    vocab: &Vocabulary,
    mode: PassMode,
    sources: ContextSources<'_>,
) -> Result<Vec<f64>> {
    if embeddings.cols() != layout.embed_dim {
        return Err(Error::Shape(format!(
            "embedding width {} but layout expects {}",
            embeddings.cols(),
            layout.embed_dim
        )));
    }
    let input = turn_input(conv, index, layout, vocab, mode, sources)?;
    Ok(features_from_input(&input, embeddings))
}
