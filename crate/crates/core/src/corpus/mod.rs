//! Conversation data model, tokenization, vocabulary construction, corpus
//! ingestion and synthetic dialog generation.

mod jsonl;
mod synth;
mod vocab;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::{rng, Error, Result};

pub use jsonl::{load_jsonl, parse_jsonl, save_jsonl, to_jsonl};
pub use synth::{synth_generate, GeneratorConfig, TopicSpec, WeightedBigram, WeightedWord};
pub use vocab::{build_vocab, Vocabulary, END, START, UNK};

/// Metadata key for the bot that produced the system prompts.
pub const META_BOT: &str = "bot_id";
/// Metadata key for the gold topic label.
pub const META_TOPIC: &str = "topic";
/// Metadata key for the gold dialog-act label.
pub const META_ACT: &str = "act";
/// Metadata key for the topic named by the system prompt (synthetic data).
pub const META_PROMPT_TOPIC: &str = "prompt_topic";

/// Lowercases, strips punctuation (keeping word-internal apostrophes) and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let kept: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect();
            let trimmed = kept.trim_matches('\'');
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}

/// One exchange: the system prompt followed by the user's reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub system_prompt: Vec<String>,
    pub user_utterance: Vec<String>,
    pub metadata: BTreeMap<String, String>,
    /// Per-token topic tag aligned with `user_utterance`; `None` marks an
    /// untagged token.
    pub entity_tags: Option<Vec<Option<String>>>,
}

impl Turn {
    pub fn bot_id(&self) -> Option<&str> {
        self.metadata.get(META_BOT).map(String::as_str)
    }

    pub fn topic(&self) -> Option<&str> {
        self.metadata.get(META_TOPIC).map(String::as_str)
    }

    pub fn act(&self) -> Option<&str> {
        self.metadata.get(META_ACT).map(String::as_str)
    }

    pub fn tag(&self, position: usize) -> Option<&str> {
        self.entity_tags
            .as_ref()
            .and_then(|t| t.get(position))
            .and_then(|t| t.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    /// Builds a conversation, renumbering turns from 0 and checking tag
    /// alignment.
    pub fn new(id: impl Into<String>, mut turns: Vec<Turn>) -> Result<Self> {
        let id = id.into();
        for (i, t) in turns.iter_mut().enumerate() {
            t.index = i;
            if let Some(tags) = &t.entity_tags {
                if tags.len() != t.user_utterance.len() {
                    return Err(Error::InvalidConversation {
                        id,
                        message: format!(
                            "turn {i}: {} tags for {} user tokens",
                            tags.len(),
                            t.user_utterance.len()
                        ),
                    });
                }
                for tag in tags.iter().flatten() {
                    if !crate::labels::is_topic(tag) {
                        return Err(Error::InvalidConversation {
                            id,
                            message: format!("turn {i}: unknown topic tag {tag:?}"),
                        });
                    }
                }
            }
        }
        Ok(Conversation { id, turns })
    }
}

/// All user utterances of a corpus, in order.
pub fn user_sentences(corpus: &[Conversation]) -> Vec<Vec<String>> {
    corpus
        .iter()
        .flat_map(|c| c.turns.iter().map(|t| t.user_utterance.clone()))
        .collect()
}

/// Partitions whole conversations into train/dev/test.
pub fn split(
    corpus: &[Conversation],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>, Vec<Conversation>)> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r) || r.is_nan()) {
        return Err(Error::Config(format!("split ratios out of range: {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, &["split"]));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_dev = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_dev].to_vec(),
        order[n_train + n_dev..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok((take(&parts[0]), take(&parts[1]), take(&parts[2])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Alexa, let's Chat!"), ["alexa", "let's", "chat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("I LOVE The Godfather"),
            ["i", "love", "the", "godfather"]
        );
        assert_eq!(tokenize("  'quoted'  -- words "), ["quoted", "words"]);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(&once, &twice);
            for tok in &once {
                prop_assert!(!tok.is_empty());
                prop_assert!(!tok.chars().any(char::is_whitespace));
            }
        }
    }

    fn conv(id: &str, n_turns: usize) -> Conversation {
        let turns = (0..n_turns)
            .map(|i| Turn {
                index: 0,
                system_prompt: vec!["hi".into()],
                user_utterance: vec![format!("w{i}")],
                metadata: BTreeMap::new(),
                entity_tags: None,
            })
            .collect();
        Conversation::new(id, turns).unwrap()
    }

    #[test]
    fn conversation_renumbers_turns() {
        let c = conv("c", 3);
        assert_eq!(c.turns.iter().map(|t| t.index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn tag_length_mismatch_is_rejected() {
        let t = Turn {
            index: 0,
            system_prompt: vec![],
            user_utterance: vec!["a".into()],
            metadata: BTreeMap::new(),
            entity_tags: Some(vec![None, None]),
        };
        let err = Conversation::new("bad-conv", vec![t]).unwrap_err();
        assert!(err.to_string().contains("bad-conv"));
    }

    #[test]
    fn split_examples() {
        let corpus: Vec<_> = (0..10).map(|i| conv(&format!("c{i}"), 1)).collect();
        let (tr, dv, te) = split(&corpus, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (10, 0, 0));
        let (tr, dv, te) = split(&corpus, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (8, 1, 1));
        let again = split(&corpus, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((tr.clone(), dv.clone(), te.clone()), again);
        assert!(split(&corpus, [0.5, 0.1, 0.1], 1).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 0usize..40, a in 0.0f64..1.0, seed in 0u64..50) {
            let b = (1.0 - a) / 2.0;
            let corpus: Vec<_> = (0..n).map(|i| conv(&format!("c{i}"), 1)).collect();
            let (tr, dv, te) = split(&corpus, [a, b, 1.0 - a - b], seed).unwrap();
            let mut ids: Vec<String> = tr.iter().chain(&dv).chain(&te).map(|c| c.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
