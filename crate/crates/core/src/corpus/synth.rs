//! Deterministic synthetic dialog generator.
//!
//! Each turn has a topic drawn from a Markov chain over topics; the system
//! prompt names that topic, and the user reply is sampled from the topic's
//! word distributions. Optional knobs make the prompt an imperfect signal
//! (user deviation) or make utterances topic-neutral.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Conversation, Turn, META_ACT, META_BOT, META_PROMPT_TOPIC, META_TOPIC};
use crate::labels::is_topic;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedWord {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedBigram {
    pub prev: String,
    pub next: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    /// Label from the topic inventory.
    pub label: String,
    /// Word substituted for `{topic}` in prompt templates.
    pub name_word: String,
    /// Prompt templates; each must contain `{topic}` and may contain `{entity}`.
    pub prompt_templates: Vec<String>,
    /// Non-entity content words of user replies.
    pub unigrams: Vec<WeightedWord>,
    #[serde(default)]
    pub bigrams: Vec<WeightedBigram>,
    /// Entity words; user tokens drawn from this list carry the topic tag.
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub topics: Vec<TopicSpec>,
    /// Row `i` is the distribution of the next prompt topic given the
    /// previous user topic `i`.
    pub transition: Vec<Vec<f64>>,
    /// Topic-independent words; also the whole support of neutral replies.
    pub shared_words: Vec<WeightedWord>,
    pub shared_rate: f64,
    pub entity_rate: f64,
    pub bigram_rate: f64,
    /// Probability that a reply is topic-neutral (the turn keeps its topic
    /// label).
    pub neutral_rate: f64,
    /// Probability that the user replies on a different topic than the one
    /// the prompt named.
    pub deviation_rate: f64,
    pub conversations: usize,
    /// Inclusive range of turns per conversation.
    pub turns: [usize; 2],
    /// Inclusive range of user-utterance lengths.
    pub utterance_len: [usize; 2],
    pub bots: Vec<String>,
}

fn ww(words: &[&str], weight: f64) -> Vec<WeightedWord> {
    words
        .iter()
        .map(|w| WeightedWord {
            word: w.to_string(),
            weight,
        })
        .collect()
}

fn demo_topic(label: &str, name: &str, content: &[&str], entities: &[&str]) -> TopicSpec {
    let mut bigrams = Vec::new();
    for e in entities {
        for prev in ["love", "about", "like"] {
            bigrams.push(WeightedBigram {
                prev: prev.into(),
                next: e.to_string(),
                weight: 1.0,
            });
        }
    }
    for c in content {
        for prev in ["the", "favorite"] {
            bigrams.push(WeightedBigram {
                prev: prev.into(),
                next: c.to_string(),
                weight: 1.0,
            });
        }
    }
    // a few content-to-content links so higher orders carry signal
    for pair in content.windows(2).step_by(2) {
        bigrams.push(WeightedBigram {
            prev: pair[0].into(),
            next: pair[1].into(),
            weight: 1.0,
        });
    }
    TopicSpec {
        label: label.into(),
        name_word: name.into(),
        prompt_templates: vec![
            "do you like {topic}".into(),
            "let's talk about {topic}".into(),
            "i heard you enjoy {topic} what do you think about {entity}".into(),
            "what kind of {topic} are you into".into(),
            "here is a fun fact about {topic}".into(),
        ],
        unigrams: content
            .iter()
            .enumerate()
            .map(|(i, w)| WeightedWord {
                word: w.to_string(),
                weight: 1.0 + (i % 3) as f64,
            })
            .collect(),
        bigrams,
        entities: entities.iter().map(|s| s.to_string()).collect(),
    }
}

impl GeneratorConfig {
    /// Three-topic configuration (sports, music, movies) whose entity lists
    /// are index-aligned so that entity `i` of one topic is the natural
    /// acoustic neighbour of entity `i` of another.
    pub fn three_topic() -> Self {
        let sports = demo_topic(
            "Sports",
            "sports",
            &[
                "game", "team", "season", "coach", "score", "league", "win", "player", "match",
                "ball", "field", "championship", "goal", "playoffs", "stadium", "training",
                "basketball", "football", "tennis", "fans",
            ],
            &[
                "lakers", "yankees", "messi", "federer", "brady", "jordan", "serena", "celtics",
                "dodgers", "ronaldo", "nadal", "curry",
            ],
        );
        let music = demo_topic(
            "Entertainment_Music",
            "music",
            &[
                "song", "album", "band", "concert", "listen", "singer", "guitar", "lyrics", "tour",
                "track", "rock", "jazz", "playlist", "drums", "melody", "radio", "festival",
                "sing", "piano", "rap",
            ],
            &[
                "beatles", "madonna", "adele", "beyonce", "drake", "eminem", "queen", "coldplay",
                "metallica", "rihanna", "prince", "shakira",
            ],
        );
        let movies = demo_topic(
            "Entertainment_Movies",
            "movies",
            &[
                "film", "actor", "director", "scene", "watch", "cinema", "trailer", "sequel",
                "plot", "character", "theater", "comedy", "horror", "drama", "oscar", "screen",
                "cast", "series", "ending", "actress",
            ],
            &[
                "godfather", "titanic", "avatar", "inception", "jaws", "frozen", "rocky", "alien",
                "gladiator", "matrix", "casablanca", "psycho",
            ],
        );
        let mut shared = ww(
            &[
                "i", "you", "the", "a", "to", "and", "is", "it", "that", "like", "love", "think",
                "really", "about", "what", "do", "my", "favorite", "yeah", "so", "know", "of",
                "me", "more", "was", "good", "great", "okay", "yes", "no",
            ],
            1.0,
        );
        for w in shared.iter_mut().take(6) {
            w.weight = 3.0;
        }
        GeneratorConfig {
            topics: vec![sports, music, movies],
            transition: vec![
                vec![0.7, 0.15, 0.15],
                vec![0.15, 0.7, 0.15],
                vec![0.15, 0.15, 0.7],
            ],
            shared_words: shared,
            shared_rate: 0.35,
            entity_rate: 0.15,
            bigram_rate: 0.5,
            neutral_rate: 0.0,
            deviation_rate: 0.2,
            conversations: 2000,
            turns: [3, 8],
            utterance_len: [3, 9],
            bots: vec!["bot_a".into(), "bot_b".into(), "bot_c".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let k = self.topics.len();
        if k < 2 {
            return err(format!("generator needs at least 2 topics, got {k}"));
        }
        let mut seen = Vec::new();
        for t in &self.topics {
            if !is_topic(&t.label) {
                return err(format!("unknown topic label {:?}", t.label));
            }
            if seen.contains(&&t.label) {
                return err(format!("duplicate topic {:?}", t.label));
            }
            seen.push(&t.label);
            if t.prompt_templates.is_empty() || t.prompt_templates.iter().any(|p| !p.contains("{topic}")) {
                return err(format!("topic {}: every prompt template must contain {{topic}}", t.label));
            }
            if t.prompt_templates.iter().any(|p| p.contains("{entity}")) && t.entities.is_empty() {
                return err(format!("topic {}: {{entity}} template without entities", t.label));
            }
            if t.unigrams.is_empty() || t.unigrams.iter().any(|w| !(w.weight > 0.0)) {
                return err(format!("topic {}: unigram weights must be positive and non-empty", t.label));
            }
            if t.bigrams.iter().any(|b| !(b.weight > 0.0)) {
                return err(format!("topic {}: bigram weights must be positive", t.label));
            }
            if tokenize(&t.name_word).len() != 1 {
                return err(format!("topic {}: name_word must be a single token", t.label));
            }
        }
        if self.transition.len() != k || self.transition.iter().any(|r| r.len() != k) {
            return err(format!("transition matrix must be {k}x{k}"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return err(format!("transition row {i} has a negative entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return err(format!("transition row {i} sums to {s}, not 1"));
            }
        }
        for (name, r) in [
            ("shared_rate", self.shared_rate),
            ("entity_rate", self.entity_rate),
            ("bigram_rate", self.bigram_rate),
            ("neutral_rate", self.neutral_rate),
            ("deviation_rate", self.deviation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if self.shared_rate + self.entity_rate > 1.0 {
            return err("shared_rate + entity_rate exceeds 1".into());
        }
        if (self.shared_rate > 0.0 || self.neutral_rate > 0.0)
            && (self.shared_words.is_empty() || self.shared_words.iter().any(|w| !(w.weight > 0.0)))
        {
            return err("shared words must be non-empty with positive weights".into());
        }
        if self.turns[0] < 1 || self.turns[0] > self.turns[1] {
            return err(format!("bad turn range {:?}", self.turns));
        }
        if self.utterance_len[0] < 1 || self.utterance_len[0] > self.utterance_len[1] {
            return err(format!("bad utterance length range {:?}", self.utterance_len));
        }
        if self.bots.is_empty() {
            return err("at least one bot id is required".into());
        }
        Ok(())
    }
}

struct Weighted {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Weighted {
    fn new(items: impl IntoIterator<Item = (String, f64)>) -> Option<Self> {
        let (words, weights): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        let dist = WeightedIndex::new(&weights).ok()?;
        Some(Weighted { words, dist })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.words[self.dist.sample(rng)]
    }
}

struct TopicSampler {
    unigrams: Weighted,
    bigrams: HashMap<String, Weighted>,
    entities: Vec<String>,
}

/// Generates `config.conversations` conversations. Identical `(config, seed)`
/// always yields identical output.
pub fn synth_generate(config: &GeneratorConfig, seed: u64) -> Result<Vec<Conversation>> {
    config.validate()?;
    let k = config.topics.len();
    let samplers: Vec<TopicSampler> = config
        .topics
        .iter()
        .map(|t| {
            let mut rows: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
            for b in &t.bigrams {
                rows.entry(&b.prev).or_default().push((b.next.clone(), b.weight));
            }
            TopicSampler {
                unigrams: Weighted::new(t.unigrams.iter().map(|w| (w.word.clone(), w.weight)))
                    .expect("validated"),
                bigrams: rows
                    .into_iter()
                    .map(|(p, row)| (p.to_string(), Weighted::new(row).expect("validated")))
                    .collect(),
                entities: t.entities.clone(),
            }
        })
        .collect();
    let shared = Weighted::new(config.shared_words.iter().map(|w| (w.word.clone(), w.weight)));
    let transitions: Vec<WeightedIndex<f64>> = config
        .transition
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::Config(format!("transition row: {e}"))))
        .collect::<Result<_>>()?;

    let mut rng = rng::substream(seed, &["synth"]);
    let mut corpus = Vec::with_capacity(config.conversations);
    for c in 0..config.conversations {
        let bot = &config.bots[rng.gen_range(0..config.bots.len())];
        let n_turns = rng.gen_range(config.turns[0]..=config.turns[1]);
        let mut prev_user_topic: Option<usize> = None;
        let mut turns = Vec::with_capacity(n_turns);
        for index in 0..n_turns {
            let prompt_topic = match prev_user_topic {
                None => rng.gen_range(0..k),
                Some(p) => transitions[p].sample(&mut rng),
            };
            let user_topic = if rng.gen::<f64>() < config.deviation_rate {
                let other = rng.gen_range(0..k - 1);
                if other >= prompt_topic {
                    other + 1
                } else {
                    other
                }
            } else {
                prompt_topic
            };
            let neutral = rng.gen::<f64>() < config.neutral_rate;

            let pt = &config.topics[prompt_topic];
            let template = &pt.prompt_templates[rng.gen_range(0..pt.prompt_templates.len())];
            let mut prompt = template.replace("{topic}", &pt.name_word);
            if prompt.contains("{entity}") {
                let e = &pt.entities[rng.gen_range(0..pt.entities.len())];
                prompt = prompt.replace("{entity}", e);
            }

            let len = rng.gen_range(config.utterance_len[0]..=config.utterance_len[1]);
            let sampler = &samplers[user_topic];
            let mut user: Vec<String> = Vec::with_capacity(len);
            let mut has_entity = false;
            for _ in 0..len {
                let word: String = if neutral {
                    shared.as_ref().expect("validated").sample(&mut rng).to_string()
                } else {
                    let follow = user
                        .last()
                        .and_then(|p| sampler.bigrams.get(p))
                        .filter(|_| rng.gen::<f64>() < config.bigram_rate);
                    match follow {
                        Some(row) => row.sample(&mut rng).to_string(),
                        None => {
                            let u: f64 = rng.gen();
                            if u < config.entity_rate && !sampler.entities.is_empty() {
                                sampler.entities[rng.gen_range(0..sampler.entities.len())].clone()
                            } else if u < config.entity_rate + config.shared_rate {
                                match &shared {
                                    Some(s) => s.sample(&mut rng).to_string(),
                                    None => sampler.unigrams.sample(&mut rng).to_string(),
                                }
                            } else {
                                sampler.unigrams.sample(&mut rng).to_string()
                            }
                        }
                    }
                };
                has_entity |= sampler.entities.contains(&word) && !neutral;
                user.push(word);
            }
            let user = tokenize(&user.join(" "));
            let tags: Vec<Option<String>> = user
                .iter()
                .map(|w| {
                    (!neutral && sampler.entities.contains(w))
                        .then(|| config.topics[user_topic].label.clone())
                })
                .collect();
            let act = if neutral {
                "General_Chat"
            } else if user_topic != prompt_topic {
                "Topic_Switch"
            } else if has_entity {
                "Opinion_Expression"
            } else {
                "Information_Request"
            };

            let mut metadata = BTreeMap::new();
            metadata.insert(META_BOT.to_string(), bot.clone());
            metadata.insert(META_TOPIC.to_string(), config.topics[user_topic].label.clone());
            metadata.insert(META_PROMPT_TOPIC.to_string(), pt.label.clone());
            metadata.insert(META_ACT.to_string(), act.to_string());
            turns.push(Turn {
                index,
                system_prompt: tokenize(&prompt),
                user_utterance: user,
                metadata,
                entity_tags: Some(tags),
            });
            prev_user_topic = Some(user_topic);
        }
        corpus.push(Conversation::new(format!("conv-{c:05}"), turns)?);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::to_jsonl;

    fn small(conversations: usize) -> GeneratorConfig {
        GeneratorConfig {
            conversations,
            ..GeneratorConfig::three_topic()
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let cfg = small(50);
        let a = to_jsonl(&synth_generate(&cfg, 9).unwrap());
        let b = to_jsonl(&synth_generate(&cfg, 9).unwrap());
        let c = to_jsonl(&synth_generate(&cfg, 10).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_transitions_stay_on_topic() {
        let mut cfg = small(40);
        cfg.deviation_rate = 0.0;
        cfg.transition = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        for conv in synth_generate(&cfg, 1).unwrap() {
            let first = conv.turns[0].topic().unwrap().to_string();
            assert!(conv.turns.iter().all(|t| t.topic() == Some(first.as_str())));
        }
    }

    #[test]
    fn bad_transition_row_is_config_error() {
        let mut cfg = small(1);
        cfg.transition[1] = vec![0.5, 0.4, 0.2];
        assert!(matches!(synth_generate(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn prompt_names_topic_and_tags_align() {
        let mut cfg = small(30);
        cfg.deviation_rate = 0.0;
        for conv in synth_generate(&cfg, 4).unwrap() {
            for t in &conv.turns {
                let spec = cfg.topics.iter().find(|s| Some(s.label.as_str()) == t.topic()).unwrap();
                assert!(t.system_prompt.contains(&spec.name_word));
                let tags = t.entity_tags.as_ref().unwrap();
                assert_eq!(tags.len(), t.user_utterance.len());
                for (w, tag) in t.user_utterance.iter().zip(tags) {
                    assert_eq!(tag.is_some(), spec.entities.contains(w));
                }
            }
        }
    }

    #[test]
    fn transition_frequencies_converge() {
        let mut cfg = small(2500);
        cfg.transition = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.25, 0.25, 0.5]];
        cfg.turns = [5, 6];
        let corpus = synth_generate(&cfg, 2).unwrap();
        let idx = |l: &str| cfg.topics.iter().position(|t| t.label == l).unwrap();
        let mut counts = vec![vec![0usize; 3]; 3];
        let mut total = 0;
        for conv in &corpus {
            for w in conv.turns.windows(2) {
                let from = idx(w[0].topic().unwrap());
                let to = idx(&w[1].metadata[META_PROMPT_TOPIC]);
                counts[from][to] += 1;
                total += 1;
            }
        }
        assert!(total >= 10_000);
        for i in 0..3 {
            let row: usize = counts[i].iter().sum();
            for j in 0..3 {
                let f = counts[i][j] as f64 / row as f64;
                assert!((f - cfg.transition[i][j]).abs() < 0.05, "({i},{j}) {f}");
            }
        }
    }

    /// Exact per-token likelihood under each topic's reply distribution
    /// (valid when bigrams and shared words are disabled).
    fn bayes_topic(cfg: &GeneratorConfig, words: &[String]) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, t) in cfg.topics.iter().enumerate() {
            let total: f64 = t.unigrams.iter().map(|w| w.weight).sum();
            let mut ll = 0.0;
            for w in words {
                let p_uni = t.unigrams.iter().find(|u| &u.word == w).map_or(0.0, |u| u.weight / total);
                let p_ent = if t.entities.contains(w) {
                    1.0 / t.entities.len() as f64
                } else {
                    0.0
                };
                let p = (1.0 - cfg.entity_rate) * p_uni + cfg.entity_rate * p_ent;
                ll += p.ln();
            }
            if ll > best.0 {
                best = (ll, k);
            }
        }
        best.1
    }

    #[test]
    fn disjoint_topics_are_recovered_by_bayes_oracle() {
        let mut cfg = small(200);
        cfg.shared_rate = 0.0;
        cfg.bigram_rate = 0.0;
        cfg.deviation_rate = 0.0;
        let corpus = synth_generate(&cfg, 11).unwrap();
        let mut n = 0;
        let mut correct = 0;
        for conv in &corpus {
            for t in &conv.turns {
                let truth = cfg.topics.iter().position(|s| Some(s.label.as_str()) == t.topic()).unwrap();
                n += 1;
                correct += usize::from(bayes_topic(&cfg, &t.user_utterance) == truth);
            }
        }
        assert_eq!(correct, n);
    }
}
