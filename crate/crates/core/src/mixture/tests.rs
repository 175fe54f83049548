use super::adapter::{build_examples, examples_perplexity};
use super::*;
use crate::corpus::{build_vocab, split, synth_generate, GeneratorConfig, Turn};
use crate::ngram::{train, Smoothing};
use crate::nn::grad_check;
use proptest::prelude::*;
use std::collections::{BTreeMap, HashMap};

fn toy_vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::from_words(["a", "b", "c", "d", "e"]))
}

fn sents(v: &[&str]) -> Vec<Vec<String>> {
    v.iter().map(|s| s.split_whitespace().map(String::from).collect()).collect()
}

fn toy_components() -> Vec<Arc<NGramModel>> {
    let v = toy_vocab();
    let kn = Smoothing::KneserNey { discount: 0.75 };
    vec![
        Arc::new(train(v.clone(), &sents(&["a b a b", "a a c"]), 2, kn).unwrap()),
        Arc::new(train(v.clone(), &sents(&["c d e", "d d e c", "e"]), 2, kn).unwrap()),
        Arc::new(train(v, &sents(&["a e", "b d c a"]), 2, Smoothing::Additive { alpha: 0.5 }).unwrap()),
    ]
}

fn turn(sys: &str, user: &str, bot: &str) -> Turn {
    let mut metadata = BTreeMap::new();
    metadata.insert("bot_id".to_string(), bot.to_string());
    Turn {
        index: 0,
        system_prompt: sys.split_whitespace().map(String::from).collect(),
        user_utterance: user.split_whitespace().map(String::from).collect(),
        metadata,
        entity_tags: None,
    }
}

fn toy_corpus() -> Vec<Conversation> {
    vec![
        Conversation::new("x", vec![turn("a b", "a b c", "b1"), turn("d", "d e", "b2"), turn("c", "e e a", "b1")]).unwrap(),
        Conversation::new("y", vec![turn("e", "c d", "b2"), turn("a", "a a b", "b1")]).unwrap(),
    ]
}

fn layout(features: &str, embed_dim: usize) -> FeatureLayout {
    FeatureLayout {
        features: features.parse().unwrap(),
        embed_dim,
        bots: vec!["b1".into(), "b2".into()],
    }
}

fn static_mix(components: &[Arc<NGramModel>], w: Vec<f64>) -> MixtureLM {
    let names = (0..components.len()).map(|i| format!("c{i}")).collect();
    MixtureLM::new(names, components.to_vec(), MixtureWeights::Static(w)).unwrap()
}

fn grid_best(probs: &[Vec<f64>]) -> Vec<f64> {
    let mut best = (f64::NEG_INFINITY, vec![]);
    for i in 0..=100 {
        for j in 0..=(100 - i) {
            let w = vec![i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
            let ll = probs_log_likelihood(probs, &w);
            if ll > best.0 {
                best = (ll, w);
            }
        }
    }
    best.1
}

#[test]
fn degenerate_and_identical_mixtures() {
    let c = toy_components();
    for w in 0..c[0].vocab().len() as u32 {
        let p = mixture_prob(&c, &[1.0, 0.0, 0.0], w, &[3]).unwrap();
        assert_eq!(p, c[0].prob_ids(w, &[3]));
        let same = vec![c[1].clone(), c[1].clone()];
        let q = mixture_prob(&same, &[0.37, 0.63], w, &[4, 2]).unwrap();
        assert!((q - c[1].prob_ids(w, &[4, 2])).abs() < 1e-15);
    }
    assert!(mixture_prob(&c, &[0.5, 0.5], 3, &[]).is_err());
}

#[test]
fn mixture_is_normalized_over_short_histories() {
    let c = toy_components();
    let v = c[0].vocab().clone();
    let w = [0.2, 0.5, 0.3];
    let mut histories: Vec<Vec<u32>> = vec![vec![]];
    for a in 0..v.len() as u32 {
        histories.push(vec![a]);
        for b in 0..v.len() as u32 {
            histories.push(vec![a, b]);
        }
    }
    for h in histories {
        let s: f64 = v.predictive_ids().map(|x| mixture_prob(&c, &w, x, &h).unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-6, "{h:?}: {s}");
    }
}

#[test]
fn em_keeps_prior_for_identical_components() {
    let probs: Vec<Vec<f64>> = [0.1, 0.4, 0.05, 0.3].iter().map(|p| vec![*p, *p]).collect();
    let r = em_on_probs(&probs, &[0.3, 0.7], 1e-12, 50).unwrap();
    assert!((r.weights[0] - 0.3).abs() < 1e-12 && (r.weights[1] - 0.7).abs() < 1e-12);
}

#[test]
fn em_goes_to_dominant_component() {
    let probs: Vec<Vec<f64>> = [0.2, 0.1, 0.3, 0.05].iter().map(|p| vec![2.0 * p, *p]).collect();
    let r = em_on_probs(&probs, &[0.5, 0.5], 1e-10, 10_000).unwrap();
    assert!(r.weights[0] > 1.0 - 1e-6, "{:?}", r.weights);
    let r = em_on_probs(&probs, &[0.5, 0.5], ORACLE_TOL, ORACLE_MAX_ITERS).unwrap();
    assert!(r.weights[0] > 1.0 - 1e-6, "oracle settings: {:?}", r.weights);
}

#[test]
fn oracle_turn_weights_dominant_and_identical() {
    let c = toy_components();
    let same = vec![c[0].clone(), c[0].clone()];
    assert_eq!(oracle_turn_weights(&same, &["a", "b"]).unwrap(), vec![0.5, 0.5]);
    assert!(oracle_turn_weights::<&str>(&c, &[]).is_err());
}

#[test]
fn em_matches_grid_search_and_is_monotone() {
    let c = toy_components();
    let corpus = sents(&["a b c d", "e e a", "b a d c e", "c c"]);
    let r = em_static_weights(&c, &corpus, &[1.0 / 3.0; 3], 1e-12, 1000).unwrap();
    for pair in r.log_likelihoods.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-12);
    }
    let probs: Vec<Vec<f64>> = corpus.iter().flat_map(|s| component_token_probs(&c, s)).collect();
    let g = grid_best(&probs);
    for (a, b) in r.weights.iter().zip(&g) {
        assert!((a - b).abs() <= 0.02, "{:?} vs {g:?}", r.weights);
    }
    let o = oracle_turn_weights(&c, &corpus[2]).unwrap();
    let g = grid_best(&component_token_probs(&c, &corpus[2]));
    for (a, b) in o.iter().zip(&g) {
        assert!((a - b).abs() <= 0.02, "{o:?} vs {g:?}");
    }
    assert!(em_static_weights::<String>(&c, &[], &[1.0 / 3.0; 3], 1e-9, 10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn em_log_likelihood_never_decreases(
        rows in proptest::collection::vec(proptest::collection::vec(1e-6f64..1.0, 3), 1..40),
        init in proptest::collection::vec(0.05f64..1.0, 3),
    ) {
        let s: f64 = init.iter().sum();
        let init: Vec<f64> = init.iter().map(|x| x / s).collect();
        let r = em_on_probs(&rows, &init, 1e-14, 100).unwrap();
        for pair in r.log_likelihoods.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-12);
        }
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adapter_output_is_simplex(
        feats in proptest::collection::vec(-5.0f64..5.0, 15),
        seed in 0u64..1000,
    ) {
        let a = WeightAdapter::new(layout("PREV_SYS+META+TOPIC_DERIVED", 3), toy_vocab(), 3, 4, seed).unwrap();
        prop_assert_eq!(a.layout().input_dim(), 3 + 6 + 12);
        let mut x = feats.clone();
        x.extend(std::iter::repeat(0.3).take(6));
        let w = adapter_forward(&a, &x).unwrap();
        prop_assert!(w.iter().all(|v| *v > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn feature_blocks() {
    let v = toy_vocab();
    let corpus = toy_corpus();
    let emb = DenseMatrixExt::seq(v.len(), 3);
    let none = ContextSources::default();
    let l = layout("PREV_USER", 3);
    let f = featurize(&corpus[0], 0, &l, &emb, &v, PassMode::OnePass, none).unwrap();
    assert_eq!(f, vec![0.0; 3]);
    let l = layout("META", 3);
    let f = featurize(&corpus[0], 0, &l, &emb, &v, PassMode::OnePass, none).unwrap();
    assert_eq!(f, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let f = featurize(&corpus[0], 2, &l, &emb, &v, PassMode::OnePass, none).unwrap();
    assert_eq!(f, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let l = layout("PREV_SYS", 3);
    let f = featurize(&corpus[0], 1, &l, &emb, &v, PassMode::OnePass, none).unwrap();
    assert_eq!(f, emb.row(v.id("d") as usize));
    assert!(featurize(&corpus[0], 1, &layout("CURR", 3), &emb, &v, PassMode::OnePass, none).is_err());
    let mut fp = FirstPassMap::new();
    fp.insert(("x".into(), 1), vec!["e".into()]);
    let src = ContextSources { classifier: None, first_pass: Some(&fp) };
    let l = layout("PREV_USER+CURR", 3);
    let f = featurize(&corpus[0], 1, &l, &emb, &v, PassMode::TwoPass, src).unwrap();
    let mut want = crate::nn::mean_rows(&emb, &v.ids_of(&["a", "b", "c"]));
    want.extend_from_slice(emb.row(v.id("e") as usize));
    assert_eq!(f, want);
    assert!(featurize(&corpus[0], 2, &l, &emb, &v, PassMode::TwoPass, src).is_err());
    assert!(featurize(&corpus[0], 2, &layout("TOPIC_DERIVED", 3), &emb, &v, PassMode::OnePass, none).is_err());
    assert_eq!(turn_bucket(6), 3);
    assert_eq!(turn_bucket(5), 2);
    assert_eq!("META+PREV_SYS".parse::<FeatureSet>().unwrap().to_string(), "PREV_SYS+META");
    assert!("PREV_D".parse::<FeatureSet>().is_err());
}

struct DenseMatrixExt;

impl DenseMatrixExt {
    fn seq(rows: usize, cols: usize) -> crate::nn::DenseMatrix {
        let data = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
        crate::nn::DenseMatrix::from_vec(rows, cols, data).unwrap()
    }
}

#[test]
fn zero_adapter_is_uniform_and_bias_shift_invariant() {
    let mut a = WeightAdapter::new(layout("PREV_SYS+META", 4), toy_vocab(), 3, 5, 1).unwrap();
    let x: Vec<f64> = (0..a.layout().input_dim()).map(|i| (i as f64).cos()).collect();
    let before = adapter_forward(&a, &x).unwrap();
    for b in a.output_bias_mut().data_mut() {
        *b += 3.7;
    }
    let after = adapter_forward(&a, &x).unwrap();
    for (p, q) in before.iter().zip(&after) {
        assert!((p - q).abs() < 1e-12);
    }
    a.params_mut().zero_values();
    assert_eq!(adapter_forward(&a, &x).unwrap(), vec![1.0 / 3.0; 3]);
    assert!(adapter_forward(&a, &x[1..]).is_err());
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let v = toy_vocab();
    let kn = Smoothing::KneserNey { discount: 0.75 };
    let comps = vec![
        Arc::new(train(v.clone(), &sents(&["a b a b", "a c"]), 2, kn).unwrap()),
        Arc::new(train(v.clone(), &sents(&["c d e", "d e c"]), 2, kn).unwrap()),
    ];
    let corpus = vec![Conversation::new(
        "g",
        vec![turn("a b", "a b c d", "b1"), turn("d e", "e c d a b", "b2")],
    )
    .unwrap()];
    let mut fp = FirstPassMap::new();
    fp.insert(("g".into(), 0), vec!["a".into(), "c".into()]);
    fp.insert(("g".into(), 1), vec!["e".into(), "d".into()]);
    let src = ContextSources { classifier: None, first_pass: Some(&fp) };
    for seed in 0..3u64 {
        for loss in [AdapterLoss::Ppl, AdapterLoss::Xent] {
            let mut a = WeightAdapter::new(layout("PREV_USER+PREV_SYS+CURR+META", 3), v.clone(), 2, 4, seed).unwrap();
            let ex = build_examples(&a, &comps, &corpus, PassMode::TwoPass, src, true).unwrap();
            assert_eq!(ex.iter().map(|e| e.token_probs.len()).sum::<usize>(), 11);
            let mut params = a.params().clone();
            let report = grad_check(
                &mut params,
                |p| {
                    std::mem::swap(a.params_mut(), p);
                    a.params_mut().zero_grads();
                    let l: f64 = ex.iter().map(|e| a.accumulate(e, loss).unwrap()).sum();
                    std::mem::swap(a.params_mut(), p);
                    l
                },
                1e-5,
                None,
            );
            assert!(report.max_rel_error < 1e-4, "{loss:?} seed {seed}: {:?}", report.per_param);
        }
    }
}

/// Independent per-token perplexity: explicit loops over padded windows.
fn reference_perplexity(comps: &[Arc<NGramModel>], w: &[f64], corpus: &[Conversation]) -> f64 {
    let mut ll = 0.0;
    let mut n = 0.0;
    for conv in corpus {
        for t in &conv.turns {
            let mut seq: Vec<u32> = vec![Vocabulary::START_ID; comps[0].order() - 1];
            seq.extend(comps[0].vocab().ids_of(&t.user_utterance));
            seq.push(Vocabulary::END_ID);
            for i in comps[0].order() - 1..seq.len() {
                let p: f64 = comps.iter().zip(w).map(|(c, wk)| wk * c.prob_ids(seq[i], &seq[..i])).sum();
                ll += p.ln();
                n += 1.0;
            }
        }
    }
    (-ll / n).exp()
}

#[test]
fn turn_perplexity_reductions() {
    let c = toy_components();
    let corpus = toy_corpus();
    let none = ContextSources::default();
    let w = vec![0.25, 0.45, 0.3];
    let got = turn_perplexity(&static_mix(&c, w.clone()), &corpus, PassMode::OnePass, none).unwrap();
    assert!((got - reference_perplexity(&c, &w, &corpus)).abs() < 1e-9);

    let same = vec![c[1].clone(), c[1].clone()];
    let single: Vec<Vec<String>> = corpus.iter().flat_map(|cv| cv.turns.iter().map(|t| t.user_utterance.clone())).collect();
    let a = turn_perplexity(&static_mix(&same, vec![0.5, 0.5]), &corpus, PassMode::OnePass, none).unwrap();
    assert!((a - c[1].perplexity(&single).unwrap()).abs() < 1e-9);

    let mut ad = WeightAdapter::new(layout("PREV_SYS+META", 4), c[0].vocab().clone(), 3, 5, 3).unwrap();
    ad.params_mut().zero_values();
    let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let dynamic = MixtureLM::new(names.clone(), c.clone(), MixtureWeights::Dynamic(ad.clone())).unwrap();
    let uniform = static_mix(&c, vec![1.0 / 3.0; 3]);
    assert_eq!(
        turn_perplexity(&dynamic, &corpus, PassMode::OnePass, none).unwrap(),
        turn_perplexity(&uniform, &corpus, PassMode::OnePass, none).unwrap()
    );

    for (b, wk) in ad.output_bias_mut().data_mut().iter_mut().zip(&w) {
        *b = wk.ln();
    }
    let dynamic = MixtureLM::new(names, c.clone(), MixtureWeights::Dynamic(ad)).unwrap();
    let d = turn_perplexity(&dynamic, &corpus, PassMode::OnePass, none).unwrap();
    assert!((d - got).abs() < 1e-9);
}

#[test]
fn mixture_rejects_bad_construction() {
    let c = toy_components();
    let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    assert!(MixtureLM::new(names.clone(), c.clone(), MixtureWeights::Static(vec![0.5, 0.5, 0.5])).is_err());
    assert!(MixtureLM::new(names[..1].to_vec(), c[..1].to_vec(), MixtureWeights::Static(vec![1.0])).is_err());
    let other = Arc::new(train(Arc::new(Vocabulary::from_words(["z"])), &sents(&["z"]), 2, Smoothing::default()).unwrap());
    assert!(MixtureLM::new(names[..2].to_vec(), vec![c[0].clone(), other], MixtureWeights::Static(vec![0.5, 0.5])).is_err());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = toy_components();
    for (i, m) in c.iter().enumerate() {
        crate::ngram::write_arpa(m, &dir.path().join(format!("c{i}.arpa"))).unwrap();
    }
    let manifest = MixtureManifest {
        components: (0..3)
            .map(|i| ComponentRef { name: format!("c{i}"), arpa: format!("c{i}.arpa").into() })
            .collect(),
        spec: MixtureSpec::Static { weights: vec![0.2, 0.3, 0.5] },
    };
    let path = dir.path().join("mix.json");
    manifest.save(&path).unwrap();
    let back = MixtureManifest::load(&path).unwrap();
    assert_eq!(back, manifest);
    let mix = back.resolve(dir.path()).unwrap();
    let corpus = toy_corpus();
    let none = ContextSources::default();
    let a = turn_perplexity(&mix, &corpus, PassMode::OnePass, none).unwrap();
    let b = turn_perplexity(&static_mix(&c, vec![0.2, 0.3, 0.5]), &corpus, PassMode::OnePass, none).unwrap();
    assert!((a - b).abs() < 1e-9);
}

struct TopicSetup {
    train: Vec<Conversation>,
    dev: Vec<Conversation>,
    comps: Vec<Arc<NGramModel>>,
    labels: Vec<String>,
}

fn topic_setup(cfg: &GeneratorConfig, seed: u64) -> TopicSetup {
    let corpus = synth_generate(cfg, seed).unwrap();
    let (train_c, dev, _) = split(&corpus, [0.8, 0.2, 0.0], seed).unwrap();
    let vocab = Arc::new(build_vocab(&train_c, 1, 10_000).unwrap());
    let labels: Vec<String> = cfg.topics.iter().map(|t| t.label.clone()).collect();
    let mut by_topic: HashMap<&str, Vec<Vec<String>>> = HashMap::new();
    for conv in &train_c {
        for t in &conv.turns {
            by_topic.entry(t.topic().unwrap()).or_default().push(t.user_utterance.clone());
        }
    }
    let comps = labels
        .iter()
        .map(|l| Arc::new(train(vocab.clone(), &by_topic[l.as_str()], 2, Smoothing::default()).unwrap()))
        .collect();
    TopicSetup { train: train_c, dev, comps, labels }
}

fn quick(loss: AdapterLoss, features: &str, mode: PassMode, bots: &[&str]) -> AdapterTrainConfig {
    let mut c = AdapterTrainConfig::new(
        loss,
        FeatureLayout {
            features: features.parse().unwrap(),
            embed_dim: 16,
            bots: bots.iter().map(|b| b.to_string()).collect(),
        },
        mode,
    );
    c.max_epochs = 12;
    c
}

#[test]
fn adapter_follows_the_prompt_topic() {
    let cfg = GeneratorConfig {
        conversations: 300,
        deviation_rate: 0.0,
        shared_rate: 0.0,
        ..GeneratorConfig::three_topic()
    };
    let s = topic_setup(&cfg, 3);
    let none = ContextSources::default();
    let (adapter, report) = train_adapter(&s.comps, &s.train, &s.dev, none, &quick(AdapterLoss::Ppl, "PREV_SYS", PassMode::OnePass, &[])).unwrap();
    assert!(report.best_epoch >= 1);
    let mut n = 0;
    let mut hit = 0;
    for conv in &s.dev {
        for t in &conv.turns {
            let w = adapter.turn_weights(conv, t.index, PassMode::OnePass, none).unwrap();
            let truth = s.labels.iter().position(|l| Some(l.as_str()) == t.topic()).unwrap();
            n += 1;
            hit += usize::from(w[truth] > 0.9);
        }
    }
    assert!(hit as f64 >= 0.9 * n as f64, "{hit}/{n}");
}

#[test]
fn dynamic_beats_static_beats_single_and_two_pass_helps() {
    let cfg = GeneratorConfig { conversations: 300, ..GeneratorConfig::three_topic() };
    let s = topic_setup(&cfg, 5);
    let none = ContextSources::default();
    let tune: Vec<Vec<String>> = s.train.iter().flat_map(|c| c.turns.iter().map(|t| t.user_utterance.clone())).collect();
    let em = em_static_weights(&s.comps, &tune, &[1.0 / 3.0; 3], 1e-9, 200).unwrap();
    let stat = turn_perplexity(&static_mix(&s.comps, em.weights), &s.dev, PassMode::OnePass, none).unwrap();
    let best_single = (0..3)
        .map(|k| {
            let mut w = vec![1e-12; 3];
            w[k] = 1.0 - 2e-12;
            turn_perplexity(&static_mix(&s.comps, w), &s.dev, PassMode::OnePass, none).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    let bots = ["bot_a", "bot_b", "bot_c"];
    let (_, one) = train_adapter(&s.comps, &s.train, &s.dev, none, &quick(AdapterLoss::Ppl, "PREV_SYS+META", PassMode::OnePass, &bots)).unwrap();
    let mut fp = FirstPassMap::new();
    for conv in s.train.iter().chain(&s.dev) {
        for t in &conv.turns {
            fp.insert((conv.id.clone(), t.index), t.user_utterance.clone());
        }
    }
    let src = ContextSources { classifier: None, first_pass: Some(&fp) };
    let (_, two) = train_adapter(&s.comps, &s.train, &s.dev, src, &quick(AdapterLoss::Ppl, "PREV_SYS+CURR+META", PassMode::TwoPass, &bots)).unwrap();
    let (_, xent) = train_adapter(&s.comps, &s.train, &s.dev, none, &quick(AdapterLoss::Xent, "PREV_SYS+META", PassMode::OnePass, &bots)).unwrap();
    assert!(stat <= best_single, "{stat} {best_single}");
    assert!(one.dev_perplexity < stat, "{} {stat}", one.dev_perplexity);
    assert!(xent.dev_perplexity < stat, "{} {stat}", xent.dev_perplexity);
    assert!(two.dev_perplexity <= one.dev_perplexity, "{} {}", two.dev_perplexity, one.dev_perplexity);
}

#[test]
fn uninformative_context_matches_static_em() {
    let cfg = GeneratorConfig {
        conversations: 600,
        turns: [1, 1],
        bots: vec!["solo".into()],
        ..GeneratorConfig::three_topic()
    };
    let s = topic_setup(&cfg, 9);
    let none = ContextSources::default();
    let tune: Vec<Vec<String>> = s.train.iter().flat_map(|c| c.turns.iter().map(|t| t.user_utterance.clone())).collect();
    let em = em_static_weights(&s.comps, &tune, &[1.0 / 3.0; 3], 1e-9, 200).unwrap();
    let stat = turn_perplexity(&static_mix(&s.comps, em.weights), &s.dev, PassMode::OnePass, none).unwrap();
    let (adapter, report) = train_adapter(&s.comps, &s.train, &s.dev, none, &quick(AdapterLoss::Ppl, "META", PassMode::OnePass, &["solo"])).unwrap();
    let dev_ex = build_examples(&adapter, &s.comps, &s.dev, PassMode::OnePass, none, false).unwrap();
    assert!((examples_perplexity(&adapter, &dev_ex) - report.dev_perplexity).abs() < 1e-9);
    assert!((report.dev_perplexity - stat).abs() / stat < 0.02, "{} vs {stat}", report.dev_perplexity);
}

#[test]
fn adapter_checkpoint_round_trip() {
    let a = WeightAdapter::new(layout("PREV_USER+META", 3), toy_vocab(), 3, 4, 2).unwrap();
    let b = WeightAdapter::from_json(&a.to_json()).unwrap();
    let corpus = toy_corpus();
    let none = ContextSources::default();
    for t in 0..3 {
        assert_eq!(
            a.turn_weights(&corpus[0], t, PassMode::OnePass, none).unwrap(),
            b.turn_weights(&corpus[0], t, PassMode::OnePass, none).unwrap()
        );
    }
}
