//! Backoff n-gram language models.
//!
//! Models are stored in backoff form (per-entry log10 probability plus an
//! optional log10 backoff weight), which is exactly what the ARPA format
//! holds, so a written model reads back bit-for-bit.

mod arpa;
mod counts;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::{Error, Result};

pub use arpa::{read_arpa, write_arpa, write_arpa_string, parse_arpa};
pub use counts::{count_ngrams, CountTable};

/// Highest supported order.
pub const MAX_ORDER: usize = 8;
/// Probability floor applied to every query.
pub const PROB_FLOOR: f64 = 1e-12;
/// log10 probability written for entries that are histories only (the
/// start marker and start-padded contexts).
pub const NO_PROB_LOG10: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Smoothing {
    /// Interpolated Kneser-Ney with a single absolute discount.
    KneserNey { discount: f64 },
    /// Additive (Lidstone) smoothing, recursively interpolated with the
    /// next lower order; reduces to Laplace at order 1 with alpha = 1.
    Additive { alpha: f64 },
    /// Model read from a file; smoothing unknown.
    External,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::KneserNey { discount: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log10_prob: f64,
    pub log10_bow: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Arc<Vocabulary>,
    /// `tables[k - 1]` holds entries of length k.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
    smoothing: Smoothing,
}

impl NGramModel {
    pub(crate) fn from_tables(
        order: usize,
        vocab: Arc<Vocabulary>,
        tables: Vec<HashMap<Vec<u32>, Entry>>,
        smoothing: Smoothing,
    ) -> Self {
        debug_assert_eq!(tables.len(), order);
        NGramModel {
            order,
            vocab,
            tables,
            smoothing,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn entry(&self, gram: &[u32]) -> Option<&Entry> {
        if gram.is_empty() || gram.len() > self.order {
            return None;
        }
        self.tables[gram.len() - 1].get(gram)
    }

    pub fn entries(&self, k: usize) -> &HashMap<Vec<u32>, Entry> {
        &self.tables[k - 1]
    }

    /// p(word | history) over ids. Only the last `order - 1` history ids
    /// matter. Floored at [`PROB_FLOOR`].
    pub fn prob_ids(&self, word: u32, history: &[u32]) -> f64 {
        let ctx_len = history.len().min(self.order - 1);
        let ctx = &history[history.len() - ctx_len..];
        let mut key = [0u32; MAX_ORDER];
        let mut log10_bow = 0.0;
        for start in 0..=ctx.len() {
            let c = &ctx[start..];
            key[..c.len()].copy_from_slice(c);
            key[c.len()] = word;
            if let Some(e) = self.tables[c.len()].get(&key[..=c.len()]) {
                if e.log10_prob <= NO_PROB_LOG10 {
                    return PROB_FLOOR;
                }
                return 10f64.powf(log10_bow + e.log10_prob).max(PROB_FLOOR);
            }
            if !c.is_empty() {
                if let Some(h) = self.tables[c.len() - 1].get(c) {
                    log10_bow += h.log10_bow.unwrap_or(0.0);
                }
            }
        }
        PROB_FLOOR
    }

    /// p(word | history) over tokens; unknown tokens map to `<unk>`.
    pub fn prob<S: AsRef<str>>(&self, word: &str, history: &[S]) -> f64 {
        let h = self.vocab.ids_of(history);
        self.prob_ids(self.vocab.id(word), &h)
    }

    /// Natural-log probabilities of each token of the sentence followed by
    /// the end marker, with `order - 1` start markers of padding.
    pub fn token_logprobs_ids(&self, sentence: &[u32]) -> Vec<f64> {
        let pad = self.order - 1;
        let mut seq = vec![Vocabulary::START_ID; pad];
        seq.extend_from_slice(sentence);
        seq.push(Vocabulary::END_ID);
        (pad..seq.len())
            .map(|i| self.prob_ids(seq[i], &seq[..i]).ln())
            .collect()
    }

    pub fn sentence_logprob_ids(&self, sentence: &[u32]) -> f64 {
        self.token_logprobs_ids(sentence).iter().sum()
    }

    /// Natural-log probability of a sentence, end marker included.
    pub fn sentence_logprob<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        self.sentence_logprob_ids(&self.vocab.ids_of(sentence))
    }

    /// exp(-(total log prob) / (tokens + end markers)).
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<f64> {
        if sentences.is_empty() {
            return Err(Error::Empty("perplexity needs at least one sentence".into()));
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for s in sentences {
            total += self.sentence_logprob(s);
            n += s.len() + 1;
        }
        Ok((-total / n as f64).exp())
    }
}

fn predictive(gram: &[u32]) -> bool {
    *gram.last().expect("non-empty gram") != Vocabulary::START_ID
}

struct HistoryStats {
    total: f64,
    types: f64,
}

fn history_stats(counts: &HashMap<Vec<u32>, f64>) -> HashMap<Vec<u32>, HistoryStats> {
    let mut stats: HashMap<Vec<u32>, HistoryStats> = HashMap::new();
    for (g, &c) in counts {
        let h = &g[..g.len() - 1];
        let s = stats.entry(h.to_vec()).or_insert(HistoryStats {
            total: 0.0,
            types: 0.0,
        });
        s.total += c;
        s.types += 1.0;
    }
    stats
}

/// Builds a normalized backoff model from raw counts.
pub fn train_smoothed(
    counts: &CountTable,
    vocab: Arc<Vocabulary>,
    smoothing: Smoothing,
) -> Result<NGramModel> {
    let order = counts.order();
    if order > MAX_ORDER {
        return Err(Error::Config(format!("order {order} exceeds {MAX_ORDER}")));
    }
    match smoothing {
        Smoothing::KneserNey { discount } if !(discount > 0.0 && discount < 1.0) => {
            return Err(Error::Config(format!("Kneser-Ney discount must lie in (0,1), got {discount}")))
        }
        Smoothing::Additive { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
            return Err(Error::Config(format!("additive alpha must be positive, got {alpha}")))
        }
        Smoothing::External => {
            return Err(Error::Config("cannot train with external smoothing".into()))
        }
        _ => {}
    }
    let v_pred = vocab.predictive_size();
    if v_pred == 0 {
        return Err(Error::Empty("vocabulary has no predictable tokens".into()));
    }
    let v_pred_f = v_pred as f64;

    // Effective counts per order: raw at the top order (and everywhere for
    // additive), continuation counts below the top for Kneser-Ney.
    let mut eff: Vec<HashMap<Vec<u32>, f64>> = Vec::with_capacity(order);
    for k in 1..=order {
        let use_continuation = matches!(smoothing, Smoothing::KneserNey { .. }) && k < order;
        let mut m: HashMap<Vec<u32>, f64> = HashMap::new();
        if use_continuation {
            for g in counts.grams(k + 1).keys().filter(|g| predictive(g)) {
                *m.entry(g[1..].to_vec()).or_default() += 1.0;
            }
        } else {
            for (g, &c) in counts.grams(k).iter().filter(|(g, _)| predictive(g)) {
                m.insert(g.clone(), c as f64);
            }
        }
        eff.push(m);
    }

    let mut model = NGramModel::from_tables(order, vocab.clone(), vec![HashMap::new(); order], smoothing);

    // Unigrams over the whole predictive vocabulary.
    let uni = &eff[0];
    let total: f64 = uni.values().sum();
    let types = uni.len() as f64;
    for w in vocab.predictive_ids() {
        let c = uni.get(&vec![w]).copied().unwrap_or(0.0);
        let p = if total == 0.0 {
            1.0 / v_pred_f
        } else {
            match smoothing {
                Smoothing::KneserNey { discount: d } => {
                    (c - d).max(0.0) / total + d * types / total / v_pred_f
                }
                Smoothing::Additive { alpha } => (c + alpha) / (total + alpha * v_pred_f),
                Smoothing::External => unreachable!(),
            }
        };
        model.tables[0].insert(
            vec![w],
            Entry {
                log10_prob: p.log10(),
                log10_bow: None,
            },
        );
    }
    model.tables[0].insert(
        vec![Vocabulary::START_ID],
        Entry {
            log10_prob: NO_PROB_LOG10,
            log10_bow: None,
        },
    );

    for k in 2..=order {
        let stats = history_stats(&eff[k - 1]);
        let mut grams: Vec<(&Vec<u32>, f64)> = eff[k - 1].iter().map(|(g, &c)| (g, c)).collect();
        grams.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut new_entries = Vec::with_capacity(grams.len());
        for (g, c) in grams {
            let h = &g[..k - 1];
            let w = g[k - 1];
            let s = &stats[h];
            let lower = model.prob_ids(w, &h[1..]);
            let p = match smoothing {
                Smoothing::KneserNey { discount: d } => {
                    (c - d) / s.total + d * s.types / s.total * lower
                }
                Smoothing::Additive { alpha } => {
                    (c + alpha * v_pred_f * lower) / (s.total + alpha * v_pred_f)
                }
                Smoothing::External => unreachable!(),
            };
            new_entries.push((g.clone(), p));
        }
        for (g, p) in new_entries {
            model.tables[k - 1].insert(
                g,
                Entry {
                    log10_prob: p.log10(),
                    log10_bow: None,
                },
            );
        }
        let mut hist: Vec<(&Vec<u32>, &HistoryStats)> = stats.iter().collect();
        hist.sort_unstable_by(|a, b| a.0.cmp(b.0));
        for (h, s) in hist {
            let bow = match smoothing {
                Smoothing::KneserNey { discount: d } => d * s.types / s.total,
                Smoothing::Additive { alpha } => alpha * v_pred_f / (s.total + alpha * v_pred_f),
                Smoothing::External => unreachable!(),
            };
            let e = model.tables[k - 2].entry(h.clone()).or_insert(Entry {
                log10_prob: NO_PROB_LOG10,
                log10_bow: None,
            });
            e.log10_bow = Some(bow.log10());
        }
    }
    Ok(model)
}

/// Counts and trains in one step.
pub fn train<S: AsRef<str>>(
    vocab: Arc<Vocabulary>,
    sentences: &[Vec<S>],
    order: usize,
    smoothing: Smoothing,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    let counts = count_ngrams(&vocab, sentences, order);
    train_smoothed(&counts, vocab, smoothing)
}
