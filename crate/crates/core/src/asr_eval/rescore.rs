//! N-best rescoring with language models and the evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::{align, entity_counts, EntityCounts};
use super::nbest::NBestList;
use crate::corpus::Conversation;
use crate::mixture::{turn_perplexity, ContextSources, FirstPassMap, MixtureLM, PassMode};
use crate::neural_lm::{nlm_perplexity, NeuralLM};
use crate::topic::TopicClassifier;
use crate::{Error, Result};

/// Language model view used for rescoring one turn at a time.
pub trait Scorer: Sync {
    fn name(&self) -> &str;

    /// Natural-log LM probabilities of each hypothesis of turn `index`.
    /// `first_pass` is the turn's first-pass hypothesis (used by 2-pass
    /// scorers as CURR context).
    fn score_turn(&self, conv: &Conversation, index: usize, first_pass: &[String], hyps: &[&[String]]) -> Result<Vec<f64>>;

    /// Perplexity of the reference user utterances, if the scorer is a
    /// language model.
    fn perplexity(&self, corpus: &[Conversation], first_pass: &FirstPassMap) -> Result<Option<f64>>;

    /// Scorers without a language model always use scale 0.
    fn has_lm(&self) -> bool {
        true
    }
}

/// First-pass output only.
pub struct NoLmScorer;

impl Scorer for NoLmScorer {
    fn name(&self) -> &str {
        "no_lm"
    }

    fn score_turn(&self, _: &Conversation, _: usize, _: &[String], hyps: &[&[String]]) -> Result<Vec<f64>> {
        Ok(vec![0.0; hyps.len()])
    }

    fn perplexity(&self, _: &[Conversation], _: &FirstPassMap) -> Result<Option<f64>> {
        Ok(None)
    }

    fn has_lm(&self) -> bool {
        false
    }
}

pub struct MixtureScorer<'a> {
    pub name: String,
    pub mixture: &'a MixtureLM,
    pub mode: PassMode,
    pub classifier: Option<&'a TopicClassifier>,
}

impl Scorer for MixtureScorer<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_turn(&self, conv: &Conversation, index: usize, first_pass: &[String], hyps: &[&[String]]) -> Result<Vec<f64>> {
        let mut fp = FirstPassMap::new();
        if self.mode == PassMode::TwoPass {
            fp.insert((conv.id.clone(), index), first_pass.to_vec());
        }
        let sources = ContextSources {
            classifier: self.classifier,
            first_pass: Some(&fp),
        };
        let w = self.mixture.turn_weights(conv, index, self.mode, sources)?;
        Ok(hyps.iter().map(|h| self.mixture.sentence_logprob(h, &w)).collect())
    }

    fn perplexity(&self, corpus: &[Conversation], first_pass: &FirstPassMap) -> Result<Option<f64>> {
        let sources = ContextSources {
            classifier: self.classifier,
            first_pass: Some(first_pass),
        };
        turn_perplexity(self.mixture, corpus, self.mode, sources).map(Some)
    }
}

pub struct NlmScorer<'a> {
    pub name: String,
    pub nlm: &'a NeuralLM,
    pub classifier: Option<&'a TopicClassifier>,
}

impl Scorer for NlmScorer<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_turn(&self, conv: &Conversation, index: usize, _: &[String], hyps: &[&[String]]) -> Result<Vec<f64>> {
        let ctx = self.nlm.context_for_turn(conv, index, self.classifier)?;
        Ok(hyps.iter().map(|h| self.nlm.sentence_logprob(h, &ctx)).collect())
    }

    fn perplexity(&self, corpus: &[Conversation], _: &FirstPassMap) -> Result<Option<f64>> {
        nlm_perplexity(self.nlm, corpus, self.classifier).map(Some)
    }
}

/// Index maximizing `acoustic + lm_scale * lm` (lowest index on ties).
pub fn select(nbest: &NBestList, lm: &[f64], lm_scale: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (h, l)) in nbest.hyps.iter().zip(lm).enumerate() {
        let s = if lm_scale == 0.0 { h.score } else { h.score + lm_scale * l };
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Rescores one turn's n-best list and returns the chosen index.
pub fn rescore(
    nbest: &NBestList,
    scorer: &dyn Scorer,
    conv: &Conversation,
    index: usize,
    lm_scale: f64,
) -> Result<usize> {
    if !(lm_scale >= 0.0) {
        return Err(Error::Config(format!("lm_scale must be non-negative, got {lm_scale}")));
    }
    if nbest.hyps.is_empty() {
        return Err(Error::Config("empty n-best list".into()));
    }
    let lm = lm_scores(nbest, scorer, conv, index)?;
    Ok(select(nbest, &lm, if scorer.has_lm() { lm_scale } else { 0.0 }))
}

fn lm_scores(nbest: &NBestList, scorer: &dyn Scorer, conv: &Conversation, index: usize) -> Result<Vec<f64>> {
    let fp = &nbest.hyps[nbest.first_pass()].tokens;
    let hyps: Vec<&[String]> = nbest.hyps.iter().map(|h| h.tokens.as_slice()).collect();
    scorer.score_turn(conv, index, fp, &hyps)
}

/// Corpus with one n-best list per turn (`nbest[c][t]`).
#[derive(Clone, Copy)]
pub struct EvalSet<'a> {
    pub corpus: &'a [Conversation],
    pub nbest: &'a [Vec<NBestList>],
}

impl EvalSet<'_> {
    fn check(&self) -> Result<()> {
        if self.corpus.len() != self.nbest.len()
            || self.corpus.iter().zip(self.nbest).any(|(c, n)| c.turns.len() != n.len())
        {
            return Err(Error::Shape("n-best lists do not match the corpus turns".into()));
        }
        Ok(())
    }

    /// First-pass hypotheses keyed for CURR features.
    pub fn first_pass_map(&self) -> FirstPassMap {
        let mut m = FirstPassMap::new();
        for (conv, lists) in self.corpus.iter().zip(self.nbest) {
            for (t, l) in lists.iter().enumerate() {
                m.insert((conv.id.clone(), t), l.hyps[l.first_pass()].tokens.clone());
            }
        }
        m
    }
}

/// Error totals of a set of chosen hypotheses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTotals {
    pub errors: usize,
    pub reference_tokens: usize,
    pub entities: BTreeMap<String, EntityCounts>,
    pub selection: Vec<usize>,
}

impl ErrorTotals {
    pub fn wer(&self) -> Option<f64> {
        (self.reference_tokens > 0).then(|| self.errors as f64 / self.reference_tokens as f64)
    }

    pub fn overall_eer(&self) -> Option<f64> {
        let mut all = EntityCounts::default();
        for c in self.entities.values() {
            all.add(*c);
        }
        all.rate()
    }

    fn add(&mut self, nbest: &NBestList, chosen: usize) {
        let a = align(&nbest.reference, &nbest.hyps[chosen].tokens);
        self.errors += a.cost();
        self.reference_tokens += nbest.reference.len();
        if let Some(tags) = &nbest.tags {
            for (t, c) in entity_counts(&a, tags) {
                self.entities.entry(t).or_default().add(c);
            }
        }
        if self.selection.len() <= chosen {
            self.selection.resize(chosen + 1, 0);
        }
        self.selection[chosen] += 1;
    }
}

/// Error totals when choosing `choices[c][t]` in every turn.
pub fn score_choices(set: EvalSet<'_>, choices: &[Vec<usize>]) -> ErrorTotals {
    let mut tot = ErrorTotals::default();
    for (lists, picks) in set.nbest.iter().zip(choices) {
        for (l, &c) in lists.iter().zip(picks) {
            tot.add(l, c);
        }
    }
    tot
}

fn all_lm_scores(set: EvalSet<'_>, scorer: &dyn Scorer) -> Result<Vec<Vec<Vec<f64>>>> {
    set.corpus
        .par_iter()
        .zip(set.nbest.par_iter())
        .map(|(conv, lists)| {
            lists
                .iter()
                .enumerate()
                .map(|(t, l)| lm_scores(l, scorer, conv, t))
                .collect()
        })
        .collect()
}

fn choose_all(set: EvalSet<'_>, lm: &[Vec<Vec<f64>>], scale: f64) -> Vec<Vec<usize>> {
    set.nbest
        .iter()
        .zip(lm)
        .map(|(lists, scores)| lists.iter().zip(scores).map(|(l, s)| select(l, s, scale)).collect())
        .collect()
}

/// lm_scale grid {0.0, 0.1, ..., 2.0}.
pub fn default_scale_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub name: String,
    pub lm_scale: f64,
    pub dev_wer: Option<f64>,
    pub perplexity: Option<f64>,
    pub wer: Option<f64>,
    pub overall_eer: Option<f64>,
    /// Topics without tagged reference tokens are absent.
    pub eer_by_topic: BTreeMap<String, f64>,
    /// How often each n-best position was chosen.
    pub selection: Vec<usize>,
    /// (value - baseline) / baseline; absent when undefined.
    pub relative_wer: Option<f64>,
    pub relative_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub scorers: Vec<ScorerReport>,
}

fn relative(x: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (x, base) {
        (Some(x), Some(b)) if b > 0.0 => Some((x - b) / b),
        _ => None,
    }
}

/// Evaluates each scorer: lm_scale is chosen on dev WER (smaller scale on
/// ties) and metrics are reported on test, with deltas relative to the
/// scorer named `baseline`.
pub fn run_eval(
    dev: EvalSet<'_>,
    test: EvalSet<'_>,
    scorers: &[&dyn Scorer],
    baseline: &str,
    grid: &[f64],
) -> Result<EvalReport> {
    dev.check()?;
    test.check()?;
    if grid.is_empty() || grid.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Config("lm_scale grid must be non-empty and non-negative".into()));
    }
    if !scorers.iter().any(|s| s.name() == baseline) {
        return Err(Error::Config(format!("baseline scorer {baseline:?} is not among the scorers")));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let test_fp = test.first_pass_map();
    let mut reports = Vec::new();
    for scorer in scorers {
        let (scale, dev_wer) = if scorer.has_lm() {
            let lm = all_lm_scores(dev, *scorer)?;
            let mut best: Option<(f64, f64)> = None;
            for &s in &grid {
                let w = score_choices(dev, &choose_all(dev, &lm, s)).wer().unwrap_or(0.0);
                if best.map_or(true, |(_, bw)| w < bw) {
                    best = Some((s, w));
                }
            }
            let (s, w) = best.expect("non-empty grid");
            (s, Some(w))
        } else {
            let zero: Vec<Vec<usize>> = dev.nbest.iter().map(|l| l.iter().map(NBestList::first_pass).collect()).collect();
            (0.0, score_choices(dev, &zero).wer())
        };
        let choices = if scorer.has_lm() {
            choose_all(test, &all_lm_scores(test, *scorer)?, scale)
        } else {
            test.nbest.iter().map(|l| l.iter().map(NBestList::first_pass).collect()).collect()
        };
        let tot = score_choices(test, &choices);
        reports.push(ScorerReport {
            name: scorer.name().to_string(),
            lm_scale: scale,
            dev_wer,
            perplexity: scorer.perplexity(test.corpus, &test_fp)?,
            wer: tot.wer(),
            overall_eer: tot.overall_eer(),
            eer_by_topic: tot
                .entities
                .iter()
                .filter_map(|(k, c)| c.rate().map(|r| (k.clone(), r)))
                .collect(),
            selection: tot.selection.clone(),
            relative_wer: None,
            relative_eer: None,
        });
    }
    EvalReport {
        baseline: String::new(),
        scorers: reports,
    }
    .rebase(baseline)
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

fn fmt_rel(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:+.2}%", 100.0 * v))
}

impl EvalReport {
    /// Recomputes the relative columns against the row named `baseline`.
    pub fn rebase(mut self, baseline: &str) -> Result<EvalReport> {
        let base = self
            .scorers
            .iter()
            .find(|r| r.name == baseline)
            .cloned()
            .ok_or_else(|| Error::Config(format!("baseline scorer {baseline:?} is not among the rows")))?;
        for r in &mut self.scorers {
            if r.name == baseline {
                r.relative_wer = None;
                r.relative_eer = None;
            } else {
                r.relative_wer = relative(r.wer, base.wer);
                r.relative_eer = relative(r.overall_eer, base.overall_eer);
            }
        }
        self.baseline = baseline.to_string();
        Ok(self)
    }

    /// Aligned plain-text table; the baseline row shows dashes for the
    /// relative columns.
    pub fn to_table(&self) -> String {
        let header = ["scorer", "scale", "ppl", "WER", "EER", "relWER", "relEER"];
        let rows: Vec<[String; 7]> = self
            .scorers
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    format!("{:.1}", r.lm_scale),
                    fmt_opt(r.perplexity, 2),
                    fmt_opt(r.wer.map(|w| 100.0 * w), 2),
                    fmt_opt(r.overall_eer.map(|e| 100.0 * e), 2),
                    fmt_rel(r.relative_wer),
                    fmt_rel(r.relative_eer),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let _ = writeln!(out, "{}", "-".repeat(total));
        for row in &rows {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        let _ = writeln!(out, "baseline: {}", self.baseline);
        out
    }
}
