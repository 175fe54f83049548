//! End-to-end experiment drivers shared by the command-line tool and the
//! acceptance suite: component training, mixture and neural-LM
//! comparisons, and classifier comparisons.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::asr_eval::{
    default_scale_grid, run_eval, simulate_corpus, ConfusionTable, EvalReport, EvalSet, MixtureScorer, NBestList,
    NlmScorer, NoLmScorer, NoiseModel, Scorer,
};
use crate::corpus::{user_sentences, Conversation, Vocabulary};
use crate::labels::{LabelInventory, LabelKind};
use crate::mixture::{
    em_static_weights, train_adapter, turn_perplexity, AdapterLoss, AdapterTrainConfig, ContextSources,
    FeatureLayout, FeatureSet, FirstPassMap, MixtureLM, MixtureWeights, PassMode,
};
use crate::neural_lm::{train_nlm, ContextMode, NlmArch, NlmEpoch, NlmTrainConfig};
use crate::ngram::{train, NGramModel, Smoothing};
use crate::rng;
use crate::topic::{train_topic, TextSource, TopicClassifier, TopicTrainConfig};
use crate::{Error, Result};

pub const GENERAL: &str = "general";

/// Named component language models over one vocabulary.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub names: Vec<String>,
    pub models: Vec<Arc<NGramModel>>,
}

/// Topic labels present in the corpus gold metadata, in inventory order.
pub fn corpus_topics(corpus: &[Conversation]) -> Vec<String> {
    let present: std::collections::HashSet<&str> =
        corpus.iter().flat_map(|c| c.turns.iter().filter_map(|t| t.topic())).collect();
    LabelInventory::topics()
        .labels()
        .iter()
        .filter(|l| present.contains(l.as_str()))
        .cloned()
        .collect()
}

/// One component per gold topic (trained on that topic's user
/// utterances) and, optionally, a general component over all of them.
pub fn train_topic_components(
    train_set: &[Conversation],
    vocab: Arc<Vocabulary>,
    order: usize,
    smoothing: Smoothing,
    include_general: bool,
) -> Result<ComponentSet> {
    let mut names = Vec::new();
    let mut models = Vec::new();
    for label in corpus_topics(train_set) {
        let sents: Vec<Vec<String>> = train_set
            .iter()
            .flat_map(|c| c.turns.iter())
            .filter(|t| t.topic() == Some(label.as_str()))
            .map(|t| t.user_utterance.clone())
            .collect();
        models.push(Arc::new(train(vocab.clone(), &sents, order, smoothing)?));
        names.push(label);
    }
    if include_general {
        models.push(Arc::new(train(vocab, &user_sentences(train_set), order, smoothing)?));
        names.push(GENERAL.to_string());
    }
    if models.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 components, corpus yields {}",
            models.len()
        )));
    }
    Ok(ComponentSet { names, models })
}

/// Bot ids in order of first appearance.
pub fn corpus_bots(corpus: &[Conversation]) -> Vec<String> {
    let mut bots: Vec<String> = Vec::new();
    for b in corpus.iter().flat_map(|c| c.turns.iter().filter_map(|t| t.bot_id())) {
        if !bots.iter().any(|x| x == b) {
            bots.push(b.to_string());
        }
    }
    bots
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterHyper {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for AdapterHyper {
    fn default() -> Self {
        AdapterHyper {
            embed_dim: 16,
            hidden: 32,
            lr: 0.01,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
        }
    }
}

impl AdapterHyper {
    pub fn train_config(
        &self,
        loss: AdapterLoss,
        features: FeatureSet,
        bots: Vec<String>,
        mode: PassMode,
        seed: u64,
    ) -> AdapterTrainConfig {
        AdapterTrainConfig {
            loss,
            layout: FeatureLayout {
                features,
                embed_dim: self.embed_dim,
                bots,
            },
            mode,
            hidden: self.hidden,
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureExperimentConfig {
    pub seed: u64,
    pub order: usize,
    pub smoothing: Smoothing,
    pub include_general: bool,
    pub noise: NoiseModel,
    pub nbest: usize,
    pub one_pass_features: FeatureSet,
    pub two_pass_features: FeatureSet,
    pub adapter: AdapterHyper,
    pub em_tol: f64,
    pub em_max_iters: usize,
    pub scale_grid: Vec<f64>,
}

impl Default for MixtureExperimentConfig {
    fn default() -> Self {
        MixtureExperimentConfig {
            seed: 0,
            order: 3,
            smoothing: Smoothing::default(),
            include_general: false,
            noise: NoiseModel::default(),
            nbest: 10,
            one_pass_features: "PREV_SYS+META".parse().expect("valid"),
            two_pass_features: "PREV_SYS+CURR+META".parse().expect("valid"),
            adapter: AdapterHyper::default(),
            em_tol: 1e-9,
            em_max_iters: 500,
            scale_grid: default_scale_grid(),
        }
    }
}

/// Train/dev/test conversations with their simulated n-best lists.
pub struct Splits<'a> {
    pub train: &'a [Conversation],
    pub dev: &'a [Conversation],
    pub test: &'a [Conversation],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureExperimentReport {
    pub seed: u64,
    pub components: Vec<String>,
    pub static_weights: Vec<f64>,
    /// Dev perplexity per configuration.
    pub dev_perplexity: BTreeMap<String, f64>,
    pub eval: EvalReport,
}

pub const ROW_NO_LM: &str = "no_lm";
pub const ROW_STATIC: &str = "static_em";
pub const ROW_BEST_SINGLE: &str = "best_single";
pub const ROW_PPL_1PASS: &str = "dnn_ppl_1pass";
pub const ROW_XENT_1PASS: &str = "dnn_xent_1pass";
pub const ROW_PPL_2PASS: &str = "dnn_ppl_2pass";
pub const ROW_XENT_2PASS: &str = "dnn_xent_2pass";

pub fn first_pass_of(corpus: &[Conversation], nbest: &[Vec<NBestList>]) -> FirstPassMap {
    EvalSet { corpus, nbest }.first_pass_map()
}

/// Static EM mixture versus dynamic adapters (XENT/PPL, 1-pass/2-pass):
/// dev perplexities and test rescoring metrics relative to no LM.
pub fn run_mixture_experiment(
    splits: Splits<'_>,
    vocab: Arc<Vocabulary>,
    confusions: &ConfusionTable,
    cfg: &MixtureExperimentConfig,
) -> Result<MixtureExperimentReport> {
    let comps = train_topic_components(splits.train, vocab, cfg.order, cfg.smoothing, cfg.include_general)?;
    let k = comps.models.len();
    let sim_seed = rng::derive_seed(cfg.seed, &["asr"]);
    let nb_train = simulate_corpus(splits.train, &cfg.noise, confusions, cfg.nbest, sim_seed)?;
    let nb_dev = simulate_corpus(splits.dev, &cfg.noise, confusions, cfg.nbest, sim_seed)?;
    let nb_test = simulate_corpus(splits.test, &cfg.noise, confusions, cfg.nbest, sim_seed)?;
    let mut fp = first_pass_of(splits.train, &nb_train);
    fp.extend(first_pass_of(splits.dev, &nb_dev));
    let sources = ContextSources {
        classifier: None,
        first_pass: Some(&fp),
    };

    let em = em_static_weights(
        &comps.models,
        &user_sentences(splits.dev),
        &vec![1.0 / k as f64; k],
        cfg.em_tol,
        cfg.em_max_iters,
    )?;
    let static_mix = MixtureLM::new(
        comps.names.clone(),
        comps.models.clone(),
        MixtureWeights::Static(em.weights.clone()),
    )?;
    let mut dev_ppl = BTreeMap::new();
    dev_ppl.insert(
        ROW_STATIC.to_string(),
        turn_perplexity(&static_mix, splits.dev, PassMode::OnePass, sources)?,
    );
    let mut best_single = f64::INFINITY;
    for m in &comps.models {
        best_single = best_single.min(m.perplexity(&user_sentences(splits.dev))?);
    }
    dev_ppl.insert(ROW_BEST_SINGLE.to_string(), best_single);

    let bots = corpus_bots(splits.train);
    let variants = [
        (ROW_PPL_1PASS, AdapterLoss::Ppl, PassMode::OnePass, cfg.one_pass_features),
        (ROW_XENT_1PASS, AdapterLoss::Xent, PassMode::OnePass, cfg.one_pass_features),
        (ROW_PPL_2PASS, AdapterLoss::Ppl, PassMode::TwoPass, cfg.two_pass_features),
        (ROW_XENT_2PASS, AdapterLoss::Xent, PassMode::TwoPass, cfg.two_pass_features),
    ];
    let mut dynamic = Vec::new();
    for (name, loss, mode, features) in variants {
        let tc = cfg
            .adapter
            .train_config(loss, features, bots.clone(), mode, rng::derive_seed(cfg.seed, &["adapter", name]));
        let (adapter, report) = train_adapter(&comps.models, splits.train, splits.dev, sources, &tc)?;
        dev_ppl.insert(name.to_string(), report.dev_perplexity);
        let mix = MixtureLM::new(comps.names.clone(), comps.models.clone(), MixtureWeights::Dynamic(adapter))?;
        dynamic.push((name, mode, mix));
    }

    let no_lm = NoLmScorer;
    let static_scorer = MixtureScorer {
        name: ROW_STATIC.into(),
        mixture: &static_mix,
        mode: PassMode::OnePass,
        classifier: None,
    };
    let dyn_scorers: Vec<MixtureScorer<'_>> = dynamic
        .iter()
        .map(|(name, mode, mix)| MixtureScorer {
            name: name.to_string(),
            mixture: mix,
            mode: *mode,
            classifier: None,
        })
        .collect();
    let mut scorers: Vec<&dyn Scorer> = vec![&no_lm, &static_scorer];
    scorers.extend(dyn_scorers.iter().map(|s| s as &dyn Scorer));
    let eval = run_eval(
        EvalSet {
            corpus: splits.dev,
            nbest: &nb_dev,
        },
        EvalSet {
            corpus: splits.test,
            nbest: &nb_test,
        },
        &scorers,
        ROW_NO_LM,
        &cfg.scale_grid,
    )?;
    Ok(MixtureExperimentReport {
        seed: cfg.seed,
        components: comps.names,
        static_weights: em.weights,
        dev_perplexity: dev_ppl,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmVariant {
    pub mode: ContextMode,
    pub derived: bool,
}

impl NlmVariant {
    pub fn name(&self) -> String {
        let base = match self.mode {
            ContextMode::None => "nlm_none",
            ContextMode::AvgConcat => "nlm_avg_concat",
            ContextMode::EncoderInit => "nlm_encoder_init",
        };
        if self.derived {
            format!("{base}_derived")
        } else {
            base.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmExperimentConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub variants: Vec<NlmVariant>,
    /// Derived features come from a classifier trained on system prompts.
    pub classifier: TopicTrainConfig,
    /// When set, test n-best lists are rescored with every variant.
    pub rescore: Option<RescoreSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreSettings {
    pub noise: NoiseModel,
    pub nbest: usize,
    pub scale_grid: Vec<f64>,
}

impl Default for NlmExperimentConfig {
    fn default() -> Self {
        NlmExperimentConfig {
            seed: 0,
            embed_dim: 32,
            hidden: 64,
            lr: 0.005,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            variants: [
                (ContextMode::None, false),
                (ContextMode::AvgConcat, false),
                (ContextMode::AvgConcat, true),
                (ContextMode::EncoderInit, false),
                (ContextMode::EncoderInit, true),
            ]
            .into_iter()
            .map(|(mode, derived)| NlmVariant { mode, derived })
            .collect(),
            classifier: TopicTrainConfig {
                source: TextSource::SystemPrompt,
                ..TopicTrainConfig::default()
            },
            rescore: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmRow {
    pub name: String,
    pub dev_perplexity: f64,
    pub best_epoch: usize,
    pub curve: Vec<NlmEpoch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmExperimentReport {
    pub seed: u64,
    pub classifier_dev_accuracy: Option<f64>,
    pub rows: Vec<NlmRow>,
    pub eval: Option<EvalReport>,
}

impl NlmExperimentReport {
    pub fn dev_perplexity(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.dev_perplexity)
    }
}

/// Trains every NLM variant on the same data and compares dev
/// perplexities (and, optionally, rescoring metrics against the
/// context-free model).
pub fn run_nlm_experiment(
    splits: Splits<'_>,
    vocab: Arc<Vocabulary>,
    confusions: &ConfusionTable,
    cfg: &NlmExperimentConfig,
) -> Result<NlmExperimentReport> {
    let needs_clf = cfg.variants.iter().any(|v| v.derived);
    let (classifier, clf_acc) = if needs_clf {
        let tc = TopicTrainConfig {
            seed: rng::derive_seed(cfg.seed, &["nlm-classifier"]),
            ..cfg.classifier.clone()
        };
        let (c, r) = train_topic(splits.train, splits.dev, vocab.clone(), &tc)?;
        (Some(c), Some(r.dev_accuracy))
    } else {
        (None, None)
    };
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for v in &cfg.variants {
        let tc = NlmTrainConfig {
            arch: NlmArch {
                mode: v.mode,
                derived: v.derived,
                embed_dim: cfg.embed_dim,
                hidden: cfg.hidden,
            },
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
            clip_norm: 5.0,
            seed: rng::derive_seed(cfg.seed, &["nlm", &v.name()]),
        };
        let (m, r) = train_nlm(splits.train, splits.dev, vocab.clone(), classifier.as_ref(), &tc)?;
        rows.push(NlmRow {
            name: v.name(),
            dev_perplexity: r.dev_perplexity,
            best_epoch: r.best_epoch,
            curve: r.curve,
        });
        models.push((v.name(), m));
    }
    let eval = match &cfg.rescore {
        None => None,
        Some(rs) => {
            let sim_seed = rng::derive_seed(cfg.seed, &["asr"]);
            let nb_dev = simulate_corpus(splits.dev, &rs.noise, confusions, rs.nbest, sim_seed)?;
            let nb_test = simulate_corpus(splits.test, &rs.noise, confusions, rs.nbest, sim_seed)?;
            let scorers: Vec<NlmScorer<'_>> = models
                .iter()
                .map(|(name, m)| NlmScorer {
                    name: name.clone(),
                    nlm: m,
                    classifier: classifier.as_ref(),
                })
                .collect();
            let no_lm = NoLmScorer;
            let mut all: Vec<&dyn Scorer> = vec![&no_lm];
            all.extend(scorers.iter().map(|s| s as &dyn Scorer));
            let baseline = if models.iter().any(|(n, _)| n == "nlm_none") {
                "nlm_none"
            } else {
                "no_lm"
            };
            Some(run_eval(
                EvalSet {
                    corpus: splits.dev,
                    nbest: &nb_dev,
                },
                EvalSet {
                    corpus: splits.test,
                    nbest: &nb_test,
                },
                &all,
                baseline,
                &rs.scale_grid,
            )?)
        }
    };
    Ok(NlmExperimentReport {
        seed: cfg.seed,
        classifier_dev_accuracy: clf_acc,
        rows,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicExperimentReport {
    pub seed: u64,
    pub non_contextual_accuracy: f64,
    pub contextual_accuracy: f64,
    pub majority_accuracy: f64,
}

/// Accuracy of always predicting the most frequent training label.
pub fn majority_accuracy(train_set: &[Conversation], dev: &[Conversation], kind: LabelKind) -> f64 {
    let key = kind.meta_key();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in train_set.iter().flat_map(|c| c.turns.iter()) {
        if let Some(l) = t.metadata.get(key) {
            *counts.entry(l.as_str()).or_default() += 1;
        }
    }
    let Some((majority, _)) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
        return 0.0;
    };
    let turns: Vec<_> = dev.iter().flat_map(|c| c.turns.iter()).collect();
    let hits = turns
        .iter()
        .filter(|t| t.metadata.get(key).map(String::as_str) == Some(*majority))
        .count();
    hits as f64 / turns.len().max(1) as f64
}

/// Contextual versus non-contextual classifier on the same data.
pub fn run_topic_experiment(
    train_set: &[Conversation],
    dev: &[Conversation],
    vocab: Arc<Vocabulary>,
    base: &TopicTrainConfig,
    seed: u64,
) -> Result<TopicExperimentReport> {
    let mut acc = [0.0; 2];
    for (i, contextual) in [false, true].into_iter().enumerate() {
        let tc = TopicTrainConfig {
            contextual,
            seed: rng::derive_seed(seed, &["topic", if contextual { "ctx" } else { "plain" }]),
            ..base.clone()
        };
        acc[i] = train_topic(train_set, dev, vocab.clone(), &tc)?.1.dev_accuracy;
    }
    Ok(TopicExperimentReport {
        seed,
        non_contextual_accuracy: acc[0],
        contextual_accuracy: acc[1],
        majority_accuracy: majority_accuracy(train_set, dev, base.kind),
    })
}

/// Trained classifier convenience wrapper used by the command-line tool.
pub fn train_prompt_classifier(
    train_set: &[Conversation],
    dev: &[Conversation],
    vocab: Arc<Vocabulary>,
    base: &TopicTrainConfig,
) -> Result<TopicClassifier> {
    Ok(train_topic(train_set, dev, vocab, base)?.0)
}
