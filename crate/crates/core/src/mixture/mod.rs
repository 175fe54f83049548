//! Static and dynamic interpolation of n-gram language models.
//!
//! A static mixture uses one weight vector everywhere, tuned by EM. A
//! dynamic mixture asks a [`WeightAdapter`] for a fresh weight vector at
//! every turn, computed from the conversational context.

mod adapter;
mod features;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Vocabulary};
use crate::ngram::{NGramModel, PROB_FLOOR};
use crate::{Error, Result};

pub use adapter::{
    adapter_forward, train_adapter, AdapterLoss, AdapterTrainConfig, AdapterTrainReport, EpochMetrics,
    WeightAdapter,
};
pub(crate) use adapter::build_examples;
pub use features::{
    featurize, features_from_input, meta_block, turn_bucket, turn_input, ContextSources, FeatureLayout,
    FeatureSet, FirstPassMap, PassMode, TurnInput, TURN_BUCKETS,
};

pub(crate) const ORACLE_TOL: f64 = 1e-8;
pub(crate) const ORACLE_MAX_ITERS: usize = 200;
const SIMPLEX_TOL: f64 = 1e-9;

pub(crate) fn log_mix(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Config(format!("weights {weights:?} are not on the simplex")));
    }
    Ok(())
}

/// Σ_k λ_k p_k(word | history).
pub fn mixture_prob(components: &[Arc<NGramModel>], weights: &[f64], word: u32, history: &[u32]) -> Result<f64> {
    if components.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} components",
            weights.len(),
            components.len()
        )));
    }
    Ok(components
        .iter()
        .zip(weights)
        .map(|(c, w)| w * c.prob_ids(word, history))
        .sum())
}

/// Per-token component probabilities of `tokens` followed by the end
/// marker: one row per token, one column per component.
pub fn component_token_probs<S: AsRef<str>>(components: &[Arc<NGramModel>], tokens: &[S]) -> Vec<Vec<f64>> {
    let Some(first) = components.first() else {
        return Vec::new();
    };
    let ids = first.vocab().ids_of(tokens);
    let mut rows = vec![vec![0.0; components.len()]; ids.len() + 1];
    for (k, c) in components.iter().enumerate() {
        let pad = c.order() - 1;
        let mut seq = vec![Vocabulary::START_ID; pad];
        seq.extend_from_slice(&ids);
        seq.push(Vocabulary::END_ID);
        for (row, i) in rows.iter_mut().zip(pad..seq.len()) {
            row[k] = c.prob_ids(seq[i], &seq[..i]);
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub weights: Vec<f64>,
    /// Log-likelihood at the initial weights followed by the value after
    /// each iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

fn probs_log_likelihood(probs: &[Vec<f64>], weights: &[f64]) -> f64 {
    probs
        .iter()
        .map(|p| log_mix(p.iter().zip(weights).map(|(a, b)| a * b).sum()))
        .sum()
}

/// EM over a token-by-component probability matrix. Stops when the
/// relative log-likelihood gain drops below `tol` or after `max_iters`.
pub fn em_on_probs(probs: &[Vec<f64>], init: &[f64], tol: f64, max_iters: usize) -> Result<EmResult> {
    if probs.is_empty() {
        return Err(Error::Empty("EM needs at least one token".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("EM tolerance must be positive, got {tol}")));
    }
    check_simplex(init)?;
    let k = init.len();
    if probs.iter().any(|p| p.len() != k) {
        return Err(Error::Shape(format!("probability rows must have {k} columns")));
    }
    let mut w = init.to_vec();
    let mut lls = vec![probs_log_likelihood(probs, &w)];
    let mut iterations = 0;
    while iterations < max_iters {
        let mut acc = vec![0.0; k];
        for p in probs {
            let mix: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
            if mix > 0.0 {
                for j in 0..k {
                    acc[j] += w[j] * p[j] / mix;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        if total <= 0.0 {
            break;
        }
        for (wj, a) in w.iter_mut().zip(&acc) {
            *wj = a / total;
        }
        iterations += 1;
        let ll = probs_log_likelihood(probs, &w);
        let prev = *lls.last().expect("non-empty");
        lls.push(ll);
        if prev == 0.0 || (ll - prev) / prev.abs() < tol {
            break;
        }
    }
    Ok(EmResult {
        weights: w,
        log_likelihoods: lls,
        iterations,
    })
}

/// Static interpolation weights maximizing the likelihood of `sentences`.
pub fn em_static_weights<S: AsRef<str> + Sync>(
    components: &[Arc<NGramModel>],
    sentences: &[Vec<S>],
    init: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<EmResult> {
    if init.len() != components.len() {
        return Err(Error::Shape(format!("{} weights for {} components", init.len(), components.len())));
    }
    if sentences.is_empty() {
        return Err(Error::Empty("EM tuning corpus is empty".into()));
    }
    let probs: Vec<Vec<f64>> = sentences
        .par_iter()
        .map(|s| component_token_probs(components, s))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    em_on_probs(&probs, init, tol, max_iters)
}

/// Per-turn EM weights on the reference utterance, from a uniform start.
pub fn oracle_turn_weights<S: AsRef<str>>(components: &[Arc<NGramModel>], utterance: &[S]) -> Result<Vec<f64>> {
    if utterance.is_empty() {
        return Err(Error::Empty("oracle weights need a non-empty utterance".into()));
    }
    let k = components.len();
    let probs = component_token_probs(components, utterance);
    Ok(em_on_probs(&probs, &vec![1.0 / k as f64; k], ORACLE_TOL, ORACLE_MAX_ITERS)?.weights)
}

#[derive(Debug, Clone)]
pub enum MixtureWeights {
    Static(Vec<f64>),
    Dynamic(WeightAdapter),
}

#[derive(Debug, Clone)]
pub struct MixtureLM {
    names: Vec<String>,
    components: Vec<Arc<NGramModel>>,
    weights: MixtureWeights,
}

impl MixtureLM {
    pub fn new(names: Vec<String>, components: Vec<Arc<NGramModel>>, weights: MixtureWeights) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::Config(format!("a mixture needs at least 2 components, got {}", components.len())));
        }
        if names.len() != components.len() {
            return Err(Error::Shape(format!("{} names for {} components", names.len(), components.len())));
        }
        let first = &components[0];
        for (n, c) in names.iter().zip(&components) {
            if c.order() != first.order() || c.vocab().tokens() != first.vocab().tokens() {
                return Err(Error::Config(format!("component {n} differs in order or vocabulary")));
            }
        }
        match &weights {
            MixtureWeights::Static(w) => {
                if w.len() != components.len() {
                    return Err(Error::Shape(format!("{} weights for {} components", w.len(), components.len())));
                }
                check_simplex(w)?;
            }
            MixtureWeights::Dynamic(a) => {
                if a.n_components() != components.len() {
                    return Err(Error::Shape(format!(
                        "adapter predicts {} weights for {} components",
                        a.n_components(),
                        components.len()
                    )));
                }
                if a.vocab().tokens() != first.vocab().tokens() {
                    return Err(Error::Config("adapter vocabulary differs from the components'".into()));
                }
            }
        }
        Ok(MixtureLM {
            names,
            components,
            weights,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn components(&self) -> &[Arc<NGramModel>] {
        &self.components
    }

    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        self.components[0].vocab()
    }

    /// Interpolation weights used for one turn.
    pub fn turn_weights(
        &self,
        conv: &Conversation,
        index: usize,
        mode: PassMode,
        sources: ContextSources<'_>,
    ) -> Result<Vec<f64>> {
        match &self.weights {
            MixtureWeights::Static(w) => Ok(w.clone()),
            MixtureWeights::Dynamic(a) => a.turn_weights(conv, index, mode, sources),
        }
    }

    /// Natural-log probability of `tokens` plus the end marker under fixed
    /// weights.
    pub fn sentence_logprob<S: AsRef<str>>(&self, tokens: &[S], weights: &[f64]) -> f64 {
        component_token_probs(&self.components, tokens)
            .iter()
            .map(|p| log_mix(p.iter().zip(weights).map(|(a, b)| a * b).sum()))
            .sum()
    }
}

/// Log-likelihood and token count of every user utterance (end marker
/// included), with weights recomputed per turn.
pub fn turn_log_likelihood(
    mixture: &MixtureLM,
    corpus: &[Conversation],
    mode: PassMode,
    sources: ContextSources<'_>,
) -> Result<(f64, usize)> {
    let parts: Vec<Result<(f64, usize)>> = corpus
        .par_iter()
        .map(|conv| {
            let mut ll = 0.0;
            let mut n = 0;
            for t in &conv.turns {
                let w = mixture.turn_weights(conv, t.index, mode, sources)?;
                ll += mixture.sentence_logprob(&t.user_utterance, &w);
                n += t.user_utterance.len() + 1;
            }
            Ok((ll, n))
        })
        .collect();
    let mut ll = 0.0;
    let mut n = 0;
    for p in parts {
        let (a, b) = p?;
        ll += a;
        n += b;
    }
    Ok((ll, n))
}

/// Perplexity over user-utterance tokens only; system prompts condition
/// the weights but are never predicted.
pub fn turn_perplexity(
    mixture: &MixtureLM,
    corpus: &[Conversation],
    mode: PassMode,
    sources: ContextSources<'_>,
) -> Result<f64> {
    let (ll, n) = turn_log_likelihood(mixture, corpus, mode, sources)?;
    if n == 0 {
        return Err(Error::Empty("perplexity needs at least one turn".into()));
    }
    Ok((-ll / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRef {
    pub name: String,
    pub arpa: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MixtureSpec {
    Static { weights: Vec<f64> },
    Dynamic { adapter: PathBuf, features: FeatureSet, pass: PassMode },
}

/// On-disk description of a mixture. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub components: Vec<ComponentRef>,
    #[serde(flatten)]
    pub spec: MixtureSpec,
}

impl MixtureManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads the components and weights the manifest names.
    pub fn resolve(&self, base: &Path) -> Result<MixtureLM> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let components = self
            .components
            .iter()
            .map(|c| crate::ngram::read_arpa(&at(&c.arpa)).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let names = self.components.iter().map(|c| c.name.clone()).collect();
        let weights = match &self.spec {
            MixtureSpec::Static { weights } => MixtureWeights::Static(weights.clone()),
            MixtureSpec::Dynamic { adapter, .. } => MixtureWeights::Dynamic(WeightAdapter::load(&at(adapter))?),
        };
        MixtureLM::new(names, components, weights)
    }
}

#[cfg(test)]
mod tests;
