//! Declarative run configuration, dotted-path overrides and validation.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use ctxlm::asr_eval::{default_scale_grid, NoiseModel};
use ctxlm::corpus::GeneratorConfig;
use ctxlm::labels::LabelKind;
use ctxlm::mixture::{AdapterLoss, FeatureSet, PassMode};
use ctxlm::neural_lm::ContextMode;
use ctxlm::ngram::Smoothing;
use ctxlm::pipeline::AdapterHyper;
use ctxlm::topic::TextSource;

pub const SCHEMA_VERSION: u32 = 1;

pub const SCORER_NAMES: [&str; 4] = ["no_lm", "static", "dynamic", "nlm"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub vocab: VocabConfig,
    pub ngram: NgramConfig,
    pub mixture: MixtureConfig,
    pub nlm: NlmConfig,
    pub topic: TopicConfig,
    pub asr: AsrConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            vocab: VocabConfig::default(),
            ngram: NgramConfig::default(),
            mixture: MixtureConfig::default(),
            nlm: NlmConfig::default(),
            topic: TopicConfig::default(),
            asr: AsrConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Synthetic generator settings; ignored when `corpus` is set.
    pub synth: SynthConfig,
    /// Existing JSONL corpus to split instead of generating one.
    pub corpus: Option<PathBuf>,
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synth: SynthConfig::default(),
            corpus: None,
            split: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: String,
    pub conversations: usize,
    pub neutral_rate: Option<f64>,
    pub deviation_rate: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: "three_topic".into(),
            conversations: 2000,
            neutral_rate: None,
            deviation_rate: None,
        }
    }
}

impl SynthConfig {
    pub fn generator(&self) -> GeneratorConfig {
        let mut g = GeneratorConfig {
            conversations: self.conversations,
            ..GeneratorConfig::three_topic()
        };
        if let Some(r) = self.neutral_rate {
            g.neutral_rate = r;
        }
        if let Some(r) = self.deviation_rate {
            g.deviation_rate = r;
        }
        g
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_count: 1,
            max_size: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    pub order: usize,
    /// `kneser_ney` or `additive`.
    pub smoothing: String,
    pub discount: f64,
    pub alpha: f64,
    /// Adds a component trained on every user utterance.
    pub general_component: bool,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 3,
            smoothing: "kneser_ney".into(),
            discount: 0.75,
            alpha: 0.5,
            general_component: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    /// `PPL` or `XENT`.
    pub loss: String,
    pub features: String,
    /// `one_pass` or `two_pass`.
    pub pass: String,
    pub adapter: AdapterHyper,
    pub em_tol: f64,
    pub em_max_iters: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            loss: "PPL".into(),
            features: "PREV_SYS+META".into(),
            pass: "one_pass".into(),
            adapter: AdapterHyper::default(),
            em_tol: 1e-9,
            em_max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmConfig {
    /// `NONE`, `AVG_CONCAT` or `ENCODER_INIT`.
    pub mode: String,
    pub derived: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for NlmConfig {
    fn default() -> Self {
        NlmConfig {
            mode: "AVG_CONCAT".into(),
            derived: false,
            embed_dim: 16,
            hidden: 32,
            lr: 0.005,
            batch_size: 32,
            max_epochs: 6,
            patience: 3,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicConfig {
    /// `topic` or `dialog_act`.
    pub kind: String,
    /// `system_prompt` or `user_utterance`.
    pub source: String,
    pub contextual: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            kind: "topic".into(),
            source: "system_prompt".into(),
            contextual: false,
            embed_dim: 16,
            hidden: 32,
            lr: 0.01,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrConfig {
    pub noise: NoiseModel,
    pub nbest: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        AsrConfig {
            noise: NoiseModel::default(),
            nbest: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub lm_scale_grid: Vec<f64>,
    /// Row the report compares against; must be one of `scorers`.
    pub baseline: Option<String>,
    pub scorers: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lm_scale_grid: default_scale_grid(),
            baseline: Some("no_lm".into()),
            scorers: vec!["no_lm".into(), "static".into(), "dynamic".into()],
        }
    }
}

/// Typed view of the string-valued enum fields, available after
/// validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub smoothing: Smoothing,
    pub loss: AdapterLoss,
    pub features: FeatureSet,
    pub pass: PassMode,
    pub nlm_mode: ContextMode,
    pub label_kind: LabelKind,
    pub source: TextSource,
}

/// Applies `a.b.c=value` to a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override {assignment:?} is not of the form key.path=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(format!("override {assignment:?} has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(format!("override {path:?}: {:?} is not an object", keys[..i].join(".")));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys is non-empty")
}

/// Reads the config file, applies overrides and deserializes. Errors are
/// validation errors.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    let mut root: Value =
        serde_json::from_str(&text).map_err(|e| vec![format!("config {} is not valid JSON: {e}", path.display())])?;
    from_value(&mut root, overrides)
}

pub fn from_value(root: &mut Value, overrides: &[String]) -> Result<RunConfig, Vec<String>> {
    let errs: Vec<String> = overrides.iter().filter_map(|o| apply_override(root, o).err()).collect();
    if !errs.is_empty() {
        return Err(errs);
    }
    serde_json::from_value(root.clone()).map_err(|e| vec![format!("config: {e}")])
}

fn parse_enum<T: DeserializeOwned>(field: &str, value: &str, legal: &str, errors: &mut Vec<String>) -> Option<T> {
    match serde_json::from_value(Value::String(value.to_string())) {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{field}: {value:?} is not one of {legal}"));
            None
        }
    }
}

fn positive(field: &str, v: f64, errors: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        errors.push(format!("{field}: must be positive, got {v}"));
    }
}

fn at_least(field: &str, v: usize, min: usize, errors: &mut Vec<String>) {
    if v < min {
        errors.push(format!("{field}: must be at least {min}, got {v}"));
    }
}

impl RunConfig {
    /// Checks every field and returns all problems at once.
    pub fn validate(&self) -> Result<Resolved, Vec<String>> {
        let mut e = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            e.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            e.push("output_dir: must not be empty".into());
        }

        let split = self.data.split;
        if split.iter().any(|r| !(0.0..=1.0).contains(r)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            e.push(format!("data.split: ratios must lie in [0,1] and sum to 1, got {split:?}"));
        }
        if split[0] <= 0.0 || split[1] <= 0.0 || split[2] <= 0.0 {
            e.push("data.split: train, dev and test must all be non-empty".into());
        }
        match &self.data.corpus {
            Some(p) if !p.is_file() => e.push(format!("data.corpus: {} does not exist", p.display())),
            Some(_) => {}
            None => {
                if self.data.synth.preset != "three_topic" {
                    e.push(format!(
                        "data.synth.preset: {:?} is not one of three_topic",
                        self.data.synth.preset
                    ));
                }
                at_least("data.synth.conversations", self.data.synth.conversations, 3, &mut e);
                if let Err(err) = self.data.synth.generator().validate() {
                    e.push(format!("data.synth: {err}"));
                }
            }
        }

        at_least("vocab.min_count", self.vocab.min_count, 1, &mut e);
        at_least("vocab.max_size", self.vocab.max_size, 1, &mut e);
        at_least("ngram.order", self.ngram.order, 1, &mut e);
        let smoothing = match self.ngram.smoothing.as_str() {
            "kneser_ney" => {
                if !(self.ngram.discount > 0.0 && self.ngram.discount < 1.0) {
                    e.push(format!("ngram.discount: must lie in (0,1), got {}", self.ngram.discount));
                }
                Some(Smoothing::KneserNey {
                    discount: self.ngram.discount,
                })
            }
            "additive" => {
                positive("ngram.alpha", self.ngram.alpha, &mut e);
                Some(Smoothing::Additive { alpha: self.ngram.alpha })
            }
            other => {
                e.push(format!("ngram.smoothing: {other:?} is not one of kneser_ney, additive"));
                None
            }
        };

        let m = &self.mixture;
        let loss = parse_enum::<AdapterLoss>("mixture.loss", &m.loss, "PPL, XENT", &mut e);
        let pass = parse_enum::<PassMode>("mixture.pass", &m.pass, "one_pass, two_pass", &mut e);
        let features = match m.features.parse::<FeatureSet>() {
            Ok(f) => Some(f),
            Err(err) => {
                e.push(format!("mixture.features: {err}"));
                None
            }
        };
        if let (Some(f), Some(PassMode::OnePass)) = (features, pass) {
            if f.curr {
                e.push("mixture.features: CURR requires mixture.pass = two_pass".into());
            }
        }
        let a = &m.adapter;
        at_least("mixture.adapter.embed_dim", a.embed_dim, 1, &mut e);
        at_least("mixture.adapter.hidden", a.hidden, 1, &mut e);
        at_least("mixture.adapter.batch_size", a.batch_size, 1, &mut e);
        at_least("mixture.adapter.max_epochs", a.max_epochs, 1, &mut e);
        at_least("mixture.adapter.patience", a.patience, 1, &mut e);
        positive("mixture.adapter.lr", a.lr, &mut e);
        positive("mixture.em_tol", m.em_tol, &mut e);
        at_least("mixture.em_max_iters", m.em_max_iters, 1, &mut e);

        let n = &self.nlm;
        let nlm_mode = parse_enum::<ContextMode>("nlm.mode", &n.mode, "NONE, AVG_CONCAT, ENCODER_INIT", &mut e);
        if n.derived && nlm_mode == Some(ContextMode::None) {
            e.push("nlm.derived: derived features need a context mode other than NONE".into());
        }
        at_least("nlm.embed_dim", n.embed_dim, 1, &mut e);
        at_least("nlm.hidden", n.hidden, 1, &mut e);
        at_least("nlm.batch_size", n.batch_size, 1, &mut e);
        at_least("nlm.max_epochs", n.max_epochs, 1, &mut e);
        at_least("nlm.patience", n.patience, 1, &mut e);
        positive("nlm.lr", n.lr, &mut e);
        positive("nlm.clip_norm", n.clip_norm, &mut e);

        let t = &self.topic;
        let label_kind = parse_enum::<LabelKind>("topic.kind", &t.kind, "topic, dialog_act", &mut e);
        let source = parse_enum::<TextSource>("topic.source", &t.source, "system_prompt, user_utterance", &mut e);
        at_least("topic.embed_dim", t.embed_dim, 1, &mut e);
        at_least("topic.hidden", t.hidden, 1, &mut e);
        at_least("topic.batch_size", t.batch_size, 1, &mut e);
        at_least("topic.max_epochs", t.max_epochs, 1, &mut e);
        at_least("topic.patience", t.patience, 1, &mut e);
        positive("topic.lr", t.lr, &mut e);
        let needs_topic_labels = n.derived || features.is_some_and(|f| f.topic_derived);
        if needs_topic_labels && label_kind == Some(LabelKind::DialogAct) {
            e.push("topic.kind: derived features need a topic classifier, not dialog_act".into());
        }

        if let Err(err) = self.asr.noise.validate() {
            e.push(format!("asr.noise: {err}"));
        }
        at_least("asr.nbest", self.asr.nbest, 1, &mut e);

        let ev = &self.eval;
        if ev.lm_scale_grid.is_empty() || ev.lm_scale_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            e.push("eval.lm_scale_grid: must be non-empty, finite and non-negative".into());
        }
        if ev.scorers.is_empty() {
            e.push("eval.scorers: must name at least one scorer".into());
        }
        for s in &ev.scorers {
            if !SCORER_NAMES.contains(&s.as_str()) {
                e.push(format!("eval.scorers: {s:?} is not one of {}", SCORER_NAMES.join(", ")));
            }
        }
        for (i, s) in ev.scorers.iter().enumerate() {
            if ev.scorers[..i].contains(s) {
                e.push(format!("eval.scorers: {s:?} is listed twice"));
            }
        }
        if let Some(b) = &ev.baseline {
            if !ev.scorers.contains(b) {
                e.push(format!("eval.baseline: {b:?} is not among eval.scorers"));
            }
        }

        if !e.is_empty() {
            return Err(e);
        }
        Ok(Resolved {
            smoothing: smoothing.expect("checked"),
            loss: loss.expect("checked"),
            features: features.expect("checked"),
            pass: pass.expect("checked"),
            nlm_mode: nlm_mode.expect("checked"),
            label_kind: label_kind.expect("checked"),
            source: source.expect("checked"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields_and_parse_json() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        let c = from_value(
            &mut v,
            &[
                "mixture.adapter.hidden=7".into(),
                "nlm.mode=ENCODER_INIT".into(),
                "eval.baseline=null".into(),
                "data.split=[0.5,0.25,0.25]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.mixture.adapter.hidden, 7);
        assert_eq!(c.nlm.mode, "ENCODER_INIT");
        assert_eq!(c.eval.baseline, None);
        assert_eq!(c.data.split, [0.5, 0.25, 0.25]);
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        assert!(from_value(&mut v, &["nlm.mode".into()]).is_err());
        assert!(from_value(&mut v, &["seed.inner=3".into()]).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::json!({"schema_version": 1, "colour": "red"});
        assert!(from_value(&mut v, &[]).is_err());
    }

    #[test]
    fn all_errors_are_listed_together() {
        let mut c = RunConfig::default();
        c.schema_version = 9;
        c.mixture.loss = "L2".into();
        c.nlm.mode = "BILSTM".into();
        c.topic.source = "tts".into();
        c.eval.scorers.push("oracle".into());
        c.asr.nbest = 0;
        c.data.corpus = Some("/definitely/not/here.jsonl".into());
        let errs = c.validate().unwrap_err();
        assert_eq!(errs.len(), 7, "{errs:#?}");
    }

    #[test]
    fn curr_needs_two_pass_and_derived_needs_context() {
        let mut c = RunConfig::default();
        c.mixture.features = "PREV_SYS+CURR".into();
        c.nlm.mode = "NONE".into();
        c.nlm.derived = true;
        assert_eq!(c.validate().unwrap_err().len(), 2);
        c.mixture.pass = "two_pass".into();
        c.nlm.mode = "AVG_CONCAT".into();
        c.validate().unwrap();
    }
}
