use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use ctxlm::asr_eval::{
    load_nbest, run_eval, save_nbest, simulate_corpus, ConfusionTable, EvalReport, EvalSet, MixtureScorer, NBestList,
    NlmScorer, NoLmScorer, Scorer,
};
use ctxlm::corpus::{build_vocab, load_jsonl, split, synth_generate, to_jsonl, user_sentences, Conversation, Vocabulary};
use ctxlm::mixture::{
    em_static_weights, train_adapter, turn_perplexity, ComponentRef, ContextSources, FirstPassMap, MixtureLM,
    MixtureManifest, MixtureSpec, MixtureWeights, PassMode,
};
use ctxlm::neural_lm::{train_nlm, NeuralLM, NlmArch, NlmTrainConfig};
use ctxlm::ngram::{read_arpa, write_arpa_string, NGramModel};
use ctxlm::pipeline::{corpus_bots, first_pass_of, train_topic_components};
use ctxlm::rng;
use ctxlm::topic::{train_topic, TopicClassifier, TopicTrainConfig};
use ctxlm::verify;

use crate::artifacts::{self as art, Workspace};
use crate::config::{Resolved, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Validation(Vec<String>),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type Outcome = Result<(), Failure>;

fn require(ws: &Workspace, rels: &[&str]) -> Outcome {
    let missing = ws.missing(rels.iter().copied());
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(
            missing.into_iter().map(|m| format!("missing artifact {m}")).collect(),
        ))
    }
}

struct Splits {
    train: Vec<Conversation>,
    dev: Vec<Conversation>,
    test: Vec<Conversation>,
}

fn load_splits(ws: &mut Workspace) -> anyhow::Result<Splits> {
    Ok(Splits {
        train: load_jsonl(&ws.input(art::TRAIN)?)?,
        dev: load_jsonl(&ws.input(art::DEV)?)?,
        test: load_jsonl(&ws.input(art::TEST)?)?,
    })
}

fn load_vocab(ws: &mut Workspace) -> anyhow::Result<Arc<Vocabulary>> {
    Ok(Arc::new(Vocabulary::load(&ws.input(art::VOCAB)?)?))
}

/// Component names, checking that every ARPA file they name exists.
fn component_names(ws: &mut Workspace) -> Result<Vec<String>, Failure> {
    let names: Vec<String> = serde_json::from_str(&ws.read_string(art::COMPONENTS)?)?;
    let paths: Vec<String> = names.iter().map(|n| art::arpa_path(n)).collect();
    require(ws, &paths.iter().map(String::as_str).collect::<Vec<_>>())?;
    Ok(names)
}

fn load_components(ws: &mut Workspace, names: &[String]) -> anyhow::Result<Vec<Arc<NGramModel>>> {
    names
        .iter()
        .map(|n| Ok(Arc::new(read_arpa(&ws.input(&art::arpa_path(n))?)?)))
        .collect()
}

fn component_refs(names: &[String]) -> Vec<ComponentRef> {
    names
        .iter()
        .map(|n| ComponentRef {
            name: n.clone(),
            arpa: Path::new("..").join(art::arpa_path(n)),
        })
        .collect()
}

fn confusions(cfg: &RunConfig, vocab: &Vocabulary) -> ConfusionTable {
    match cfg.data.corpus {
        Some(_) => ConfusionTable::from_vocab(vocab),
        None => ConfusionTable::from_generator(&cfg.data.synth.generator()),
    }
}

fn topic_train_config(cfg: &RunConfig, res: &Resolved) -> TopicTrainConfig {
    let t = &cfg.topic;
    TopicTrainConfig {
        kind: res.label_kind,
        source: res.source,
        contextual: t.contextual,
        embed_dim: t.embed_dim,
        hidden: t.hidden,
        lr: t.lr,
        batch_size: t.batch_size,
        max_epochs: t.max_epochs,
        patience: t.patience,
        seed: rng::derive_seed(cfg.seed, &["topic"]),
    }
}

fn first_pass(ws: &mut Workspace, pairs: &[(&str, &[Conversation])]) -> anyhow::Result<FirstPassMap> {
    let mut fp = FirstPassMap::new();
    for (rel, corpus) in pairs {
        let lists = load_nbest(&ws.input(rel)?, corpus)?;
        fp.extend(first_pass_of(corpus, &lists));
    }
    Ok(fp)
}

pub fn synth(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    let corpus = match &cfg.data.corpus {
        Some(p) => load_jsonl(p)?,
        None => synth_generate(&cfg.data.synth.generator(), rng::derive_seed(cfg.seed, &["synth"]))?,
    };
    let (train, dev, test) = split(&corpus, cfg.data.split, rng::derive_seed(cfg.seed, &["split"]))?;
    let vocab = build_vocab(&train, cfg.vocab.min_count, cfg.vocab.max_size)?;
    ws.write(art::TRAIN, to_jsonl(&train))?;
    ws.write(art::DEV, to_jsonl(&dev))?;
    ws.write(art::TEST, to_jsonl(&test))?;
    vocab.save(&ws.ensure_parent(art::VOCAB)?)?;
    ws.wrote(art::VOCAB)?;
    println!(
        "synth: {} conversations -> train {} / dev {} / test {}, vocabulary {}",
        corpus.len(),
        train.len(),
        dev.len(),
        test.len(),
        vocab.len()
    );
    Ok(())
}

pub fn train_ngram(cfg: &RunConfig, res: &Resolved, ws: &mut Workspace) -> Outcome {
    require(ws, &[art::TRAIN, art::VOCAB])?;
    let train = load_jsonl(&ws.input(art::TRAIN)?)?;
    let vocab = load_vocab(ws)?;
    let set = train_topic_components(&train, vocab, cfg.ngram.order, res.smoothing, cfg.ngram.general_component)?;
    for (name, model) in set.names.iter().zip(&set.models) {
        ws.write(&art::arpa_path(name), write_arpa_string(model))?;
    }
    ws.write_json(art::COMPONENTS, &set.names)?;
    println!("train-ngram: {} components of order {}: {}", set.names.len(), cfg.ngram.order, set.names.join(", "));
    Ok(())
}

#[derive(Serialize)]
struct StaticReport {
    weights: Vec<f64>,
    iterations: usize,
    log_likelihoods: Vec<f64>,
    dev_perplexity: f64,
}

pub fn train_mixture(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    require(ws, &[art::DEV, art::COMPONENTS])?;
    let names = component_names(ws)?;
    let comps = load_components(ws, &names)?;
    let dev = load_jsonl(&ws.input(art::DEV)?)?;
    let k = comps.len();
    let em = em_static_weights(
        &comps,
        &user_sentences(&dev),
        &vec![1.0 / k as f64; k],
        cfg.mixture.em_tol,
        cfg.mixture.em_max_iters,
    )?;
    let mix = MixtureLM::new(names.clone(), comps, MixtureWeights::Static(em.weights.clone()))?;
    let ppl = turn_perplexity(&mix, &dev, PassMode::OnePass, ContextSources::default())?;
    let manifest = MixtureManifest {
        components: component_refs(&names),
        spec: MixtureSpec::Static {
            weights: em.weights.clone(),
        },
    };
    ws.write_json(art::STATIC, &manifest)?;
    ws.write_json(
        art::STATIC_REPORT,
        &StaticReport {
            weights: em.weights.clone(),
            iterations: em.iterations,
            log_likelihoods: em.log_likelihoods,
            dev_perplexity: ppl,
        },
    )?;
    let w: Vec<String> = names.iter().zip(&em.weights).map(|(n, w)| format!("{n}={w:.4}")).collect();
    println!("train-mixture: EM weights {} (dev perplexity {ppl:.3})", w.join(" "));
    Ok(())
}

pub fn train_topic_cmd(cfg: &RunConfig, res: &Resolved, ws: &mut Workspace) -> Outcome {
    require(ws, &[art::TRAIN, art::DEV, art::VOCAB])?;
    let s = load_splits(ws)?;
    let vocab = load_vocab(ws)?;
    let (clf, report) = train_topic(&s.train, &s.dev, vocab, &topic_train_config(cfg, res))?;
    ws.write(art::CLASSIFIER, clf.to_json())?;
    ws.write_json(art::CLASSIFIER_REPORT, &report)?;
    println!(
        "train-topic: dev accuracy {:.4} (best epoch {})",
        report.dev_accuracy, report.best_epoch
    );
    Ok(())
}

pub fn simulate_asr(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    require(ws, &[art::TRAIN, art::DEV, art::TEST, art::VOCAB])?;
    let s = load_splits(ws)?;
    let vocab = load_vocab(ws)?;
    let table = confusions(cfg, &vocab);
    let seed = rng::derive_seed(cfg.seed, &["asr"]);
    for (rel, corpus) in [(art::NBEST_TRAIN, &s.train), (art::NBEST_DEV, &s.dev), (art::NBEST_TEST, &s.test)] {
        let lists = simulate_corpus(corpus, &cfg.asr.noise, &table, cfg.asr.nbest, seed)?;
        save_nbest(&ws.ensure_parent(rel)?, &lists)?;
        ws.wrote(rel)?;
    }
    println!("simulate-asr: {}-best lists written for train, dev and test", cfg.asr.nbest);
    Ok(())
}

pub fn train_adapter_cmd(cfg: &RunConfig, res: &Resolved, ws: &mut Workspace) -> Outcome {
    let mut needs = vec![art::TRAIN, art::DEV, art::COMPONENTS];
    if res.pass == PassMode::TwoPass {
        needs.extend([art::NBEST_TRAIN, art::NBEST_DEV]);
    }
    if res.features.topic_derived {
        needs.push(art::CLASSIFIER);
    }
    require(ws, &needs)?;
    let names = component_names(ws)?;
    let comps = load_components(ws, &names)?;
    let train = load_jsonl(&ws.input(art::TRAIN)?)?;
    let dev = load_jsonl(&ws.input(art::DEV)?)?;
    let classifier = match res.features.topic_derived {
        true => Some(TopicClassifier::load(&ws.input(art::CLASSIFIER)?)?),
        false => None,
    };
    let fp = match res.pass {
        PassMode::TwoPass => Some(first_pass(ws, &[(art::NBEST_TRAIN, &train), (art::NBEST_DEV, &dev)])?),
        PassMode::OnePass => None,
    };
    let sources = ContextSources {
        classifier: classifier.as_ref(),
        first_pass: fp.as_ref(),
    };
    let tc = cfg.mixture.adapter.train_config(
        res.loss,
        res.features,
        corpus_bots(&train),
        res.pass,
        rng::derive_seed(cfg.seed, &["adapter"]),
    );
    let (adapter, report) = train_adapter(&comps, &train, &dev, sources, &tc)?;
    ws.write(art::ADAPTER, adapter.to_json())?;
    ws.write_json(
        art::DYNAMIC,
        &MixtureManifest {
            components: component_refs(&names),
            spec: MixtureSpec::Dynamic {
                adapter: "adapter.json".into(),
                features: res.features,
                pass: res.pass,
            },
        },
    )?;
    ws.write_json(art::ADAPTER_REPORT, &report)?;
    println!(
        "train-adapter: {:?} loss, {} ({:?}): dev perplexity {:.3} (best epoch {})",
        res.loss, res.features, res.pass, report.dev_perplexity, report.best_epoch
    );
    Ok(())
}

pub fn train_nlm_cmd(cfg: &RunConfig, res: &Resolved, ws: &mut Workspace) -> Outcome {
    let mut needs = vec![art::TRAIN, art::DEV, art::VOCAB];
    if cfg.nlm.derived {
        needs.push(art::CLASSIFIER);
    }
    require(ws, &needs)?;
    let train = load_jsonl(&ws.input(art::TRAIN)?)?;
    let dev = load_jsonl(&ws.input(art::DEV)?)?;
    let vocab = load_vocab(ws)?;
    let classifier = match cfg.nlm.derived {
        true => Some(TopicClassifier::load(&ws.input(art::CLASSIFIER)?)?),
        false => None,
    };
    let n = &cfg.nlm;
    let tc = NlmTrainConfig {
        arch: NlmArch {
            mode: res.nlm_mode,
            derived: n.derived,
            embed_dim: n.embed_dim,
            hidden: n.hidden,
        },
        lr: n.lr,
        batch_size: n.batch_size,
        max_epochs: n.max_epochs,
        patience: n.patience,
        clip_norm: n.clip_norm,
        seed: rng::derive_seed(cfg.seed, &["nlm"]),
    };
    let (model, report) = train_nlm(&train, &dev, vocab, classifier.as_ref(), &tc)?;
    ws.write(art::NLM, model.to_json())?;
    ws.write_json(art::NLM_REPORT, &report)?;
    println!(
        "train-nlm: {:?} derived={}: dev perplexity {:.3} (best epoch {})",
        res.nlm_mode, n.derived, report.dev_perplexity, report.best_epoch
    );
    Ok(())
}

/// Models named in `eval.scorers`, loaded from the workspace.
struct Models {
    static_mix: Option<MixtureLM>,
    dynamic: Option<(MixtureLM, PassMode)>,
    nlm: Option<NeuralLM>,
    classifier: Option<TopicClassifier>,
}

fn scorer_requirements(cfg: &RunConfig, ws: &mut Workspace, with_nbest: bool) -> Result<Vec<&'static str>, Failure> {
    let mut needs = vec![art::DEV, art::TEST];
    if with_nbest {
        needs.extend([art::NBEST_DEV, art::NBEST_TEST]);
    }
    for s in &cfg.eval.scorers {
        match s.as_str() {
            "static" => needs.push(art::STATIC),
            "dynamic" => needs.push(art::DYNAMIC),
            "nlm" => needs.push(art::NLM),
            _ => {}
        }
    }
    require(ws, &needs)?;
    // dependencies recorded inside the model files
    let mut more = Vec::new();
    if cfg.eval.scorers.iter().any(|s| s == "static" || s == "dynamic") {
        more.push(art::COMPONENTS);
    }
    if cfg.eval.scorers.iter().any(|s| s == "dynamic") {
        more.push(art::ADAPTER);
        let m = MixtureManifest::load(&ws.path(art::DYNAMIC))?;
        if let MixtureSpec::Dynamic { features, pass, .. } = m.spec {
            if features.topic_derived {
                more.push(art::CLASSIFIER);
            }
            if pass == PassMode::TwoPass {
                more.extend([art::NBEST_DEV, art::NBEST_TEST]);
            }
        }
    }
    if cfg.eval.scorers.iter().any(|s| s == "nlm") && NeuralLM::load(&ws.path(art::NLM))?.arch().derived {
        more.push(art::CLASSIFIER);
    }
    require(ws, &more)?;
    if more.contains(&art::COMPONENTS) {
        component_names(ws)?;
    }
    more.sort_unstable();
    more.dedup();
    Ok(more)
}

fn load_models(cfg: &RunConfig, ws: &mut Workspace, extra: &[&str]) -> anyhow::Result<Models> {
    let classifier = match extra.contains(&art::CLASSIFIER) {
        true => Some(TopicClassifier::load(&ws.input(art::CLASSIFIER)?)?),
        false => None,
    };
    let has = |name: &str| cfg.eval.scorers.iter().any(|s| s == name);
    let base = ws.path("mixture");
    if has("static") || has("dynamic") {
        let names: Vec<String> = serde_json::from_str(&ws.read_string(art::COMPONENTS)?)?;
        for n in &names {
            ws.input(&art::arpa_path(n))?;
        }
    }
    let static_mix = match has("static") {
        true => Some(MixtureManifest::load(&ws.input(art::STATIC)?)?.resolve(&base)?),
        false => None,
    };
    let dynamic = match has("dynamic") {
        true => {
            let m = MixtureManifest::load(&ws.input(art::DYNAMIC)?)?;
            ws.input(art::ADAPTER)?;
            let pass = match m.spec {
                MixtureSpec::Dynamic { pass, .. } => pass,
                MixtureSpec::Static { .. } => anyhow::bail!("{} describes a static mixture", art::DYNAMIC),
            };
            Some((m.resolve(&base)?, pass))
        }
        false => None,
    };
    let nlm = match has("nlm") {
        true => Some(NeuralLM::load(&ws.input(art::NLM)?)?),
        false => None,
    };
    Ok(Models {
        static_mix,
        dynamic,
        nlm,
        classifier,
    })
}

fn build_scorers<'a>(cfg: &RunConfig, m: &'a Models) -> Vec<Box<dyn Scorer + 'a>> {
    let mut out: Vec<Box<dyn Scorer + 'a>> = Vec::new();
    for name in &cfg.eval.scorers {
        match name.as_str() {
            "no_lm" => out.push(Box::new(NoLmScorer)),
            "static" => out.push(Box::new(MixtureScorer {
                name: "static".into(),
                mixture: m.static_mix.as_ref().expect("loaded"),
                mode: PassMode::OnePass,
                classifier: None,
            })),
            "dynamic" => {
                let (mix, pass) = m.dynamic.as_ref().expect("loaded");
                out.push(Box::new(MixtureScorer {
                    name: "dynamic".into(),
                    mixture: mix,
                    mode: *pass,
                    classifier: m.classifier.as_ref(),
                }))
            }
            "nlm" => out.push(Box::new(NlmScorer {
                name: "nlm".into(),
                nlm: m.nlm.as_ref().expect("loaded"),
                classifier: m.classifier.as_ref(),
            })),
            other => unreachable!("validated scorer name {other}"),
        }
    }
    out
}

#[derive(Serialize)]
struct SplitPerplexity {
    dev: Option<f64>,
    test: Option<f64>,
}

pub fn eval_ppl(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    let extra = scorer_requirements(cfg, ws, false)?;
    let dev = load_jsonl(&ws.input(art::DEV)?)?;
    let test = load_jsonl(&ws.input(art::TEST)?)?;
    let models = load_models(cfg, ws, &extra)?;
    let fp = match extra.contains(&art::NBEST_DEV) {
        true => first_pass(ws, &[(art::NBEST_DEV, &dev), (art::NBEST_TEST, &test)])?,
        false => FirstPassMap::new(),
    };
    let mut out = BTreeMap::new();
    for s in build_scorers(cfg, &models) {
        if !s.has_lm() {
            continue;
        }
        let row = SplitPerplexity {
            dev: s.perplexity(&dev, &fp)?,
            test: s.perplexity(&test, &fp)?,
        };
        println!(
            "eval-ppl: {:<8} dev {:>9.3}  test {:>9.3}",
            s.name(),
            row.dev.unwrap_or(f64::NAN),
            row.test.unwrap_or(f64::NAN)
        );
        out.insert(s.name().to_string(), row);
    }
    ws.write_json(art::PERPLEXITY, &out)?;
    Ok(())
}

fn load_lists(ws: &mut Workspace, rel: &str, corpus: &[Conversation]) -> anyhow::Result<Vec<Vec<NBestList>>> {
    Ok(load_nbest(&ws.input(rel)?, corpus)?)
}

pub fn rescore(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    let extra = scorer_requirements(cfg, ws, true)?;
    let dev = load_jsonl(&ws.input(art::DEV)?)?;
    let test = load_jsonl(&ws.input(art::TEST)?)?;
    let nb_dev = load_lists(ws, art::NBEST_DEV, &dev)?;
    let nb_test = load_lists(ws, art::NBEST_TEST, &test)?;
    let models = load_models(cfg, ws, &extra)?;
    let scorers = build_scorers(cfg, &models);
    let refs: Vec<&dyn Scorer> = scorers.iter().map(|s| s.as_ref()).collect();
    let baseline = cfg.eval.baseline.clone().unwrap_or_else(|| cfg.eval.scorers[0].clone());
    let report = run_eval(
        EvalSet {
            corpus: &dev,
            nbest: &nb_dev,
        },
        EvalSet {
            corpus: &test,
            nbest: &nb_test,
        },
        &refs,
        &baseline,
        &cfg.eval.lm_scale_grid,
    )?;
    ws.write_json(art::RESCORE, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn report(cfg: &RunConfig, ws: &mut Workspace) -> Outcome {
    let Some(baseline) = &cfg.eval.baseline else {
        return Err(Failure::Validation(vec![
            "eval.baseline: report needs a designated baseline row".into(),
        ]));
    };
    require(ws, &[art::RESCORE])?;
    let report: EvalReport = serde_json::from_str(&ws.read_string(art::RESCORE)?)?;
    if !report.scorers.iter().any(|s| &s.name == baseline) {
        return Err(Failure::Validation(vec![format!(
            "eval.baseline: {baseline:?} is not a row of {}",
            ws.path(art::RESCORE).display()
        )]));
    }
    let table = report.rebase(baseline)?.to_table();
    ws.write(art::REPORT, &table)?;
    print!("{table}");
    Ok(())
}

/// Runs every finite-difference case; returns whether all passed.
pub fn gradcheck(seed: u64, ws: Option<&mut Workspace>) -> Result<bool, Failure> {
    let seeds = [seed, seed + 1, seed + 2];
    let cases = verify::all_cases(&seeds, 8)?;
    for c in &cases {
        println!(
            "{:<28} seed {:<3} max rel err {:.3e}  {}",
            c.model,
            c.seed,
            c.max_rel_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
        for (param, e) in &c.per_param {
            println!("    {param:<24} {e:.3e}");
        }
    }
    let ok = cases.iter().all(|c| c.passed());
    println!(
        "gradcheck: {}/{} cases below {:.0e}",
        cases.iter().filter(|c| c.passed()).count(),
        cases.len(),
        verify::TOLERANCE
    );
    if let Some(ws) = ws {
        ws.write_json(art::GRADCHECK, &cases)?;
    }
    Ok(ok)
}
