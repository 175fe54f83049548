//! Synthetic first-pass recognizer output.
//!
//! A reference utterance is corrupted once by the noise model to give the
//! recognizer's observation. Every corruption event, and a random set of
//! clean "decoy" positions, becomes a binary acoustic decision with a
//! random margin `m`: the observed option scores `ln σ(m)`, the other
//! `ln σ(-m)`. A hypothesis picks one option per decision and its acoustic
//! proxy is the sum of the chosen options' log-probabilities. The n-best
//! list holds the `n` highest-proxy distinct hypotheses, so the first-pass
//! (all-observed) hypothesis is first and reverting an error costs
//! acoustic score that only a language model can win back.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, GeneratorConfig, Turn, Vocabulary};
use crate::labels::UNTAGGED;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    /// Probability that a clean token still gets a competing confusion in
    /// the n-best.
    pub decoy_rate: f64,
    /// Acoustic margins are drawn uniformly from this range.
    pub margin: [f64; 2],
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            p_sub: 0.15,
            p_del: 0.04,
            p_ins: 0.04,
            decoy_rate: 0.15,
            margin: [0.2, 3.0],
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
            decoy_rate: 0.0,
            margin: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_sub", self.p_sub),
            ("p_del", self.p_del),
            ("p_ins", self.p_ins),
            ("decoy_rate", self.decoy_rate),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.p_sub + self.p_del >= 1.0 {
            return Err(Error::Config("p_sub + p_del must be below 1".into()));
        }
        let [lo, hi] = self.margin;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("margin range {lo}..{hi} must be positive and ordered")));
        }
        Ok(())
    }
}

/// Acoustic neighbours used for substitutions, plus the pool that supplies
/// insertions and neighbours of words without a listed entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub neighbours: HashMap<String, Vec<String>>,
    pub fallback: Vec<String>,
}

impl ConfusionTable {
    /// Index-aligned words of the other topics are each other's
    /// neighbours: entity `i` of one topic sounds like entity `i` of every
    /// other topic, and likewise for content words. Shared words confuse
    /// with other shared words.
    pub fn from_generator(config: &GeneratorConfig) -> Self {
        let mut neighbours: HashMap<String, Vec<String>> = HashMap::new();
        let mut link = |lists: Vec<&[String]>| {
            let longest = lists.iter().map(|l| l.len()).max().unwrap_or(0);
            for i in 0..longest {
                let column: Vec<&String> = lists.iter().filter_map(|l| l.get(i)).collect();
                for w in &column {
                    let others = column.iter().filter(|o| *o != w).map(|o| o.to_string());
                    neighbours.entry(w.to_string()).or_default().extend(others);
                }
            }
        };
        let entities: Vec<Vec<String>> = config.topics.iter().map(|t| t.entities.clone()).collect();
        link(entities.iter().map(Vec::as_slice).collect());
        let content: Vec<Vec<String>> = config
            .topics
            .iter()
            .map(|t| t.unigrams.iter().map(|u| u.word.clone()).collect())
            .collect();
        link(content.iter().map(Vec::as_slice).collect());
        let shared: Vec<String> = config.shared_words.iter().map(|w| w.word.clone()).collect();
        for w in &shared {
            neighbours
                .entry(w.clone())
                .or_default()
                .extend(shared.iter().filter(|o| *o != w).cloned());
        }
        for v in neighbours.values_mut() {
            v.sort();
            v.dedup();
        }
        ConfusionTable {
            neighbours,
            fallback: shared,
        }
    }

    /// Table without neighbour lists: every word confuses with a random
    /// vocabulary word.
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        ConfusionTable {
            neighbours: HashMap::new(),
            fallback: vocab.tokens()[3..].to_vec(),
        }
    }

    fn confuse(&self, word: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        if let Some(n) = self.neighbours.get(word).filter(|n| !n.is_empty()) {
            return n.choose(rng).cloned();
        }
        let pool: Vec<&String> = self.fallback.iter().filter(|w| *w != word).collect();
        pool.choose(rng).map(|w| w.to_string())
    }

    fn insertion(&self, rng: &mut ChaCha8Rng) -> Option<String> {
        self.fallback.choose(rng).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Acoustic log-probability proxy.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub reference: Vec<String>,
    pub tags: Option<Vec<Option<String>>>,
    /// Sorted by descending score; index 0 is the first-pass hypothesis.
    pub hyps: Vec<Hypothesis>,
}

impl NBestList {
    /// Index of the highest acoustic score (lowest index on ties).
    pub fn first_pass(&self) -> usize {
        let mut best = 0;
        for (i, h) in self.hyps.iter().enumerate() {
            if h.score > self.hyps[best].score {
                best = i;
            }
        }
        best
    }

    pub fn contains_reference(&self) -> bool {
        self.hyps.iter().any(|h| h.tokens == self.reference)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Event {
    Substitution,
    Deletion,
    Insertion,
    Decoy,
}

#[derive(Debug, Clone)]
enum Piece {
    Fixed(String),
    Choice {
        observed: Option<String>,
        alternative: Option<String>,
        margin: f64,
        #[cfg_attr(not(test), allow(dead_code))]
        event: Event,
    },
}

/// Corrupts `reference` once and returns the pieces of the observation.
fn observe(reference: &[String], noise: &NoiseModel, table: &ConfusionTable, rng: &mut ChaCha8Rng) -> Vec<Piece> {
    let [lo, hi] = noise.margin;
    let margin = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let mut pieces = Vec::new();
    for word in reference {
        let u: f64 = rng.gen();
        if u < noise.p_del {
            pieces.push(Piece::Choice {
                observed: None,
                alternative: Some(word.clone()),
                margin: margin(rng),
                event: Event::Deletion,
            });
        } else if u < noise.p_del + noise.p_sub {
            match table.confuse(word, rng) {
                Some(c) => pieces.push(Piece::Choice {
                    observed: Some(c),
                    alternative: Some(word.clone()),
                    margin: margin(rng),
                    event: Event::Substitution,
                }),
                None => pieces.push(Piece::Fixed(word.clone())),
            }
        } else if rng.gen::<f64>() < noise.decoy_rate {
            match table.confuse(word, rng) {
                Some(c) => pieces.push(Piece::Choice {
                    observed: Some(word.clone()),
                    alternative: Some(c),
                    margin: margin(rng),
                    event: Event::Decoy,
                }),
                None => pieces.push(Piece::Fixed(word.clone())),
            }
        } else {
            pieces.push(Piece::Fixed(word.clone()));
        }
        if rng.gen::<f64>() < noise.p_ins {
            if let Some(w) = table.insertion(rng) {
                pieces.push(Piece::Choice {
                    observed: Some(w),
                    alternative: None,
                    margin: margin(rng),
                    event: Event::Insertion,
                });
            }
        }
    }
    pieces
}

/// Corruption events of one simulated observation, for frequency checks.
#[cfg(test)]
pub(crate) fn sample_events(
    reference: &[String],
    noise: &NoiseModel,
    table: &ConfusionTable,
    seed: u64,
) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observe(reference, noise, table, &mut rng)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Choice { event, .. } => Some(event),
            Piece::Fixed(_) => None,
        })
        .collect()
}

fn ln_sigmoid(x: f64) -> f64 {
    -(-x).exp().ln_1p()
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    flips: Vec<usize>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.flips.cmp(&self.flips))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds the n-best list of one reference utterance.
pub fn simulate_nbest(
    reference: &[String],
    tags: Option<&[Option<String>]>,
    noise: &NoiseModel,
    table: &ConfusionTable,
    n: usize,
    seed: u64,
) -> Result<NBestList> {
    noise.validate()?;
    if n == 0 {
        return Err(Error::Config("n-best size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pieces = observe(reference, noise, table, &mut rng);
    let choices: Vec<usize> = pieces
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p, Piece::Choice { .. }))
        .map(|(i, _)| i)
        .collect();
    let margins: Vec<f64> = choices
        .iter()
        .map(|&i| match &pieces[i] {
            Piece::Choice { margin, .. } => *margin,
            Piece::Fixed(_) => unreachable!(),
        })
        .collect();
    let base: f64 = margins.iter().map(|m| ln_sigmoid(*m)).sum();
    // flipping decision k lowers the proxy by ln σ(m) - ln σ(-m) = m
    let mut by_cost: Vec<usize> = (0..choices.len()).collect();
    by_cost.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));

    let render = |flips: &[usize]| -> Vec<String> {
        let flipped: HashSet<usize> = flips.iter().map(|&k| choices[by_cost[k]]).collect();
        let mut out = Vec::new();
        for (i, p) in pieces.iter().enumerate() {
            match p {
                Piece::Fixed(w) => out.push(w.clone()),
                Piece::Choice {
                    observed,
                    alternative,
                    ..
                } => {
                    let pick = if flipped.contains(&i) { alternative } else { observed };
                    out.extend(pick.iter().cloned());
                }
            }
        }
        out
    };

    let mut hyps: Vec<Hypothesis> = Vec::new();
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        cost: 0.0,
        flips: Vec::new(),
    });
    let budget = 64 * n + 64;
    let mut popped = 0;
    while let Some(c) = heap.pop() {
        popped += 1;
        let tokens = render(&c.flips);
        if seen.insert(tokens.clone()) {
            hyps.push(Hypothesis {
                tokens,
                score: base - c.cost,
            });
            if hyps.len() == n {
                break;
            }
        }
        if popped >= budget {
            break;
        }
        // successor scheme enumerating subsets by increasing cost: extend
        // with the next decision, or replace the last with the next
        let next = c.flips.last().map_or(0, |&l| l + 1);
        if next < by_cost.len() {
            let mut ext = c.flips.clone();
            ext.push(next);
            heap.push(Candidate {
                cost: c.cost + margins[by_cost[next]],
                flips: ext,
            });
            if let Some(&last) = c.flips.last() {
                let mut rep = c.flips.clone();
                *rep.last_mut().expect("non-empty") = next;
                heap.push(Candidate {
                    cost: c.cost - margins[by_cost[last]] + margins[by_cost[next]],
                    flips: rep,
                });
            }
        }
    }
    Ok(NBestList {
        reference: reference.to_vec(),
        tags: tags.map(<[Option<String>]>::to_vec),
        hyps,
    })
}

/// Seed of one turn's simulation, independent of processing order.
pub fn turn_seed(seed: u64, conversation: &str, turn: usize) -> u64 {
    rng::derive_seed(seed, &["nbest", conversation, &turn.to_string()])
}

pub fn simulate_turn(turn: &Turn, conv_id: &str, noise: &NoiseModel, table: &ConfusionTable, n: usize, seed: u64) -> Result<NBestList> {
    simulate_nbest(
        &turn.user_utterance,
        turn.entity_tags.as_deref(),
        noise,
        table,
        n,
        turn_seed(seed, conv_id, turn.index),
    )
}

/// N-best lists for every turn, indexed `[conversation][turn]`.
pub fn simulate_corpus(
    corpus: &[Conversation],
    noise: &NoiseModel,
    table: &ConfusionTable,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<NBestList>>> {
    corpus
        .par_iter()
        .map(|conv| {
            conv.turns
                .iter()
                .map(|t| simulate_turn(t, &conv.id, noise, table, n, seed))
                .collect()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct HypRecord {
    toks: Vec<String>,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct NBestRecord {
    #[serde(rename = "ref")]
    reference: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
    hyps: Vec<HypRecord>,
}

impl NBestList {
    pub fn to_json_line(&self) -> String {
        let r = NBestRecord {
            reference: self.reference.clone(),
            tags: self
                .tags
                .as_ref()
                .map(|t| t.iter().map(|x| x.clone().unwrap_or_else(|| UNTAGGED.to_string())).collect()),
            hyps: self
                .hyps
                .iter()
                .map(|h| HypRecord {
                    toks: h.tokens.clone(),
                    score: h.score,
                })
                .collect(),
        };
        serde_json::to_string(&r).expect("n-best serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let r: NBestRecord = serde_json::from_str(line)?;
        if r.hyps.is_empty() {
            return Err(Error::Config("n-best list without hypotheses".into()));
        }
        if r.hyps.iter().any(|h| !h.score.is_finite()) {
            return Err(Error::NonFinite("n-best acoustic score".into()));
        }
        let tags = match r.tags {
            Some(t) if t.len() != r.reference.len() => {
                return Err(Error::Config(format!(
                    "{} tags for {} reference tokens",
                    t.len(),
                    r.reference.len()
                )))
            }
            Some(t) => Some(t.into_iter().map(|x| (x != UNTAGGED).then_some(x)).collect()),
            None => None,
        };
        Ok(NBestList {
            reference: r.reference,
            tags,
            hyps: r.hyps.into_iter().map(|h| Hypothesis { tokens: h.toks, score: h.score }).collect(),
        })
    }
}

/// Writes one line per turn, conversations in order.
pub fn save_nbest(path: &Path, lists: &[Vec<NBestList>]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for l in lists.iter().flatten() {
        writeln!(w, "{}", l.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads n-best lines and regroups them to match `corpus` turn counts.
pub fn load_nbest(path: &Path, corpus: &[Conversation]) -> Result<Vec<Vec<NBestList>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut flat = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        flat.push(NBestList::from_json_line(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    let expected: usize = corpus.iter().map(|c| c.turns.len()).sum();
    if flat.len() != expected {
        return Err(Error::Config(format!(
            "{} n-best lists for {expected} turns",
            flat.len()
        )));
    }
    let mut it = flat.into_iter();
    Ok(corpus
        .iter()
        .map(|c| it.by_ref().take(c.turns.len()).collect())
        .collect())
}
