use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Conversation;
use crate::{Error, Result};

pub const START: &str = "<s>";
pub const END: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Dense token/id bijection. Ids 0, 1, 2 are the start, end and unknown
/// markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub const START_ID: u32 = 0;
    pub const END_ID: u32 = 1;
    pub const UNK_ID: u32 = 2;

    /// Reserved markers followed by `words` (duplicates and reserved
    /// strings are skipped).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for w in [START, END, UNK] {
            v.push(w.to_string());
        }
        for w in words {
            let w = w.into();
            if !v.ids.contains_key(&w) {
                v.push(w);
            }
        }
        v
    }

    fn push(&mut self, w: String) {
        self.ids.insert(w.clone(), self.tokens.len() as u32);
        self.tokens.push(w);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Size of the predictable vocabulary: everything but the start marker.
    pub fn predictive_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids_of<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Ids that can be predicted (all but the start marker), ascending.
    pub fn predictive_ids(&self) -> impl Iterator<Item = u32> {
        1..self.tokens.len() as u32
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&VocabFile {
            tokens: self.tokens.clone(),
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text)?;
        if file.tokens.len() < 3
            || file.tokens[0] != START
            || file.tokens[1] != END
            || file.tokens[2] != UNK
        {
            return Err(Error::Config(format!(
                "{}: vocabulary must start with {START}, {END}, {UNK}",
                path.display()
            )));
        }
        let v = Vocabulary::from_words(file.tokens.into_iter().skip(3));
        Ok(v)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

/// Counts system-prompt and user tokens and keeps those seen at least
/// `min_count` times, most frequent first (ties alphabetical), up to
/// `max_size` non-reserved entries.
pub fn build_vocab(corpus: &[Conversation], min_count: usize, max_size: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in corpus {
        for t in &c.turns {
            for tok in t.system_prompt.iter().chain(&t.user_utterance) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, n)| n >= min_count && w != START && w != END && w != UNK)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_size);
    Ok(Vocabulary::from_words(kept.into_iter().map(|(w, _)| w)))
}
