//! Finite-difference checks of every trainable model on small seeded
//! problems. Used by the `gradcheck` subcommand and the acceptance suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::corpus::{Conversation, Turn, Vocabulary};
use crate::corpus::META_BOT;
use crate::mixture::build_examples;
use crate::mixture::{AdapterLoss, ContextSources, FeatureLayout, FirstPassMap, PassMode, WeightAdapter};
use crate::neural_lm::{ContextInput, ContextMode, NeuralLM, NlmArch};
use crate::ngram::{train, Smoothing};
use crate::nn::{grad_check, GradCheckReport};
use crate::rng;
use crate::topic::{DanNetwork, DanShape};
use crate::Result;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub model: String,
    pub seed: u64,
    pub max_rel_error: f64,
    /// Worst error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub coordinates: usize,
}

impl GradCase {
    fn from_report(model: String, seed: u64, r: &GradCheckReport) -> Self {
        GradCase {
            model,
            seed,
            max_rel_error: r.max_rel_error,
            per_param: r.per_param.clone(),
            coordinates: r.coordinates_checked,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn toy_turn(sys: &str, user: &str, bot: &str) -> Turn {
    let mut metadata = BTreeMap::new();
    metadata.insert(META_BOT.to_string(), bot.to_string());
    Turn {
        index: 0,
        system_prompt: words(sys),
        user_utterance: words(user),
        metadata,
        entity_tags: None,
    }
}

/// Two-component adapter over a 2-turn, 11-token conversation with every
/// text feature active (2-pass).
pub fn adapter_case(loss: AdapterLoss, seed: u64) -> Result<GradCase> {
    let v = Arc::new(Vocabulary::from_words(["a", "b", "c", "d", "e"]));
    let kn = Smoothing::KneserNey { discount: 0.75 };
    let comps = vec![
        Arc::new(train(v.clone(), &[words("a b a b"), words("a c")], 2, kn)?),
        Arc::new(train(v.clone(), &[words("c d e"), words("d e c")], 2, kn)?),
    ];
    let corpus = vec![Conversation::new(
        "g",
        vec![toy_turn("a b", "a b c d", "b1"), toy_turn("d e", "e c d a b", "b2")],
    )?];
    let mut fp = FirstPassMap::new();
    fp.insert(("g".into(), 0), words("a c"));
    fp.insert(("g".into(), 1), words("e d"));
    let src = ContextSources {
        classifier: None,
        first_pass: Some(&fp),
    };
    let layout = FeatureLayout {
        features: "PREV_USER+PREV_SYS+CURR+META".parse()?,
        embed_dim: 3,
        bots: vec!["b1".into(), "b2".into()],
    };
    let mut a = WeightAdapter::new(layout, v, 2, 4, seed)?;
    let ex = build_examples(&a, &comps, &corpus, PassMode::TwoPass, src, true)?;
    let mut params = a.params().clone();
    let mut failure = None;
    let report = grad_check(
        &mut params,
        |p| {
            std::mem::swap(a.params_mut(), p);
            a.params_mut().zero_grads();
            let mut l = 0.0;
            for e in &ex {
                match a.accumulate(e, loss) {
                    Ok(x) => l += x,
                    Err(err) => failure = Some(err),
                }
            }
            std::mem::swap(a.params_mut(), p);
            l
        },
        EPS,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(GradCase::from_report(format!("adapter_{loss:?}").to_lowercase(), seed, &report))
}

fn random_posterior(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng::substream(seed, &["posterior"]);
    let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// NLM with the given context mode on three short sentences, full BPTT.
pub fn nlm_case(mode: ContextMode, derived: bool, hidden: usize, seed: u64) -> Result<GradCase> {
    let v = Arc::new(Vocabulary::from_words(["a", "b", "c", "d", "e", "f"]));
    let arch = NlmArch {
        mode,
        derived,
        embed_dim: 4,
        hidden,
    };
    let mut m = NeuralLM::new(arch, v.clone(), seed)?;
    let data = [
        (v.ids_of(&["a", "b", "c"]), v.ids_of(&["d", "e"])),
        (v.ids_of(&["f"]), vec![]),
        (v.ids_of(&["b", "b", "a", "e"]), v.ids_of(&["c"])),
    ];
    let n_topics = crate::labels::LabelInventory::topics().len();
    let exs: Vec<(Vec<u32>, ContextInput)> = data
        .iter()
        .enumerate()
        .map(|(i, (s, p))| {
            (
                s.clone(),
                ContextInput {
                    prompt: p.clone(),
                    topic: derived.then(|| random_posterior(seed * 31 + i as u64, n_topics)),
                },
            )
        })
        .collect();
    let mut params = m.params().clone();
    let report = grad_check(
        &mut params,
        |p| {
            std::mem::swap(m.params_mut(), p);
            let mut g = m.params().grad_buffers();
            let loss: f64 = exs.iter().map(|(s, c)| m.loss_and_grad(s, c, &mut g)).sum();
            m.params_mut().zero_grads();
            m.params_mut().add_grad_buffers(&g);
            std::mem::swap(m.params_mut(), p);
            loss
        },
        EPS,
        None,
    );
    let name = format!("nlm_{mode:?}{}", if derived { "_derived" } else { "" }).to_lowercase();
    Ok(GradCase::from_report(name, seed, &report))
}

/// DAN classifier with three labels, soft and hard targets.
pub fn dan_case(contextual: bool, seed: u64) -> Result<GradCase> {
    let shape = DanShape {
        vocab_size: 7,
        n_labels: 3,
        embed_dim: 4,
        hidden: 5,
        contextual,
    };
    let mut net = DanNetwork::new(shape, seed);
    let data: Vec<(Vec<u32>, Vec<u32>, Vec<f64>)> = vec![
        (vec![3, 4, 4], vec![5, 6], vec![1.0, 0.0, 0.0]),
        (vec![6], vec![], vec![0.0, 0.3, 0.7]),
        (vec![2, 5], vec![3], vec![0.0, 0.0, 1.0]),
    ];
    let mut params = net.params().clone();
    let mut failure = None;
    let report = grad_check(
        &mut params,
        |p| {
            std::mem::swap(net.params_mut(), p);
            net.params_mut().zero_grads();
            let mut loss = 0.0;
            for (u, c, t) in &data {
                match net.accumulate_grad(u, c, t) {
                    Ok(x) => loss += x,
                    Err(e) => failure = Some(e),
                }
            }
            std::mem::swap(net.params_mut(), p);
            loss
        },
        EPS,
        None,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let name = if contextual { "dan_contextual" } else { "dan" };
    Ok(GradCase::from_report(name.into(), seed, &report))
}

/// Every model and mode over the given seeds; NLM cases use `nlm_hidden`.
pub fn all_cases(seeds: &[u64], nlm_hidden: usize) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for loss in [AdapterLoss::Ppl, AdapterLoss::Xent] {
            out.push(adapter_case(loss, seed)?);
        }
        for (mode, derived) in [
            (ContextMode::None, false),
            (ContextMode::AvgConcat, false),
            (ContextMode::AvgConcat, true),
            (ContextMode::EncoderInit, false),
            (ContextMode::EncoderInit, true),
        ] {
            out.push(nlm_case(mode, derived, nlm_hidden, seed)?);
        }
        for contextual in [false, true] {
            out.push(dan_case(contextual, seed)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_on_one_seed() {
        for c in all_cases(&[5], 6).unwrap() {
            assert!(c.passed(), "{c:?}");
            assert!(c.coordinates > 0);
        }
    }
}
