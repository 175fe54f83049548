use std::collections::HashMap;

use crate::corpus::Vocabulary;

/// Raw k-gram counts for every k up to `order`, over padded sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    order: usize,
    /// `counts[k - 1]` holds the k-grams.
    counts: Vec<HashMap<Vec<u32>, u64>>,
}

impl CountTable {
    pub fn empty(order: usize) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        CountTable {
            order,
            counts: vec![HashMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, gram: &[u32]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// All stored k-grams of length `k`.
    pub fn grams(&self, k: usize) -> &HashMap<Vec<u32>, u64> {
        &self.counts[k - 1]
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(HashMap::is_empty)
    }

    /// Adds one sentence (ids, without markers).
    pub fn add_sentence(&mut self, sentence: &[u32]) {
        let n = self.order;
        let mut padded = vec![Vocabulary::START_ID; n - 1];
        padded.extend_from_slice(sentence);
        padded.push(Vocabulary::END_ID);
        for k in 1..=n {
            for window in padded.windows(k) {
                *self.counts[k - 1].entry(window.to_vec()).or_default() += 1;
            }
        }
    }
}

/// Counts every k-gram (k ≤ `order`) of each sentence after padding with
/// `order - 1` start markers and one end marker. Out-of-vocabulary tokens
/// count as the unknown marker.
pub fn count_ngrams<S: AsRef<str>>(
    vocab: &Vocabulary,
    sentences: &[Vec<S>],
    order: usize,
) -> CountTable {
    let mut table = CountTable::empty(order);
    for s in sentences {
        table.add_sentence(&vocab.ids_of(s));
    }
    table
}
