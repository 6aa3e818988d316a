use kvplm::corpus::synthetic::repeating_corpus;
use kvplm::corpus::{Category, ClozeInstance, EncodedCorpus, Split, CANDIDATES};
use kvplm::eval::{cloze_accuracy, perplexity};
use kvplm::models::{checkpoint_bytes, Model, ModelConfig, Params, Variant};
use kvplm::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(variant: Variant, vocab: usize) -> ModelConfig {
    let hidden = if matches!(variant, Variant::KeyValuePredict | Variant::Ngram) { 12 } else { 8 };
    ModelConfig::new(variant, 8, hidden, vocab)
        .with_window(if variant.is_attentive() { 3 } else { 0 })
        .with_order(if variant == Variant::Ngram { 3 } else { 0 })
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        unroll: 10,
        epochs,
        validate_every: 50,
        eval_lanes: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn every_variant_learns_a_repeating_sequence() {
    let train_c = repeating_corpus(10, 4000, Split::Train).unwrap();
    let dev_c = repeating_corpus(10, 400, Split::Dev).unwrap();
    for variant in Variant::ALL {
        let model = Model::<f32>::init(small_config(variant, 10), 3).unwrap();
        let out = train(model, &train_c, &dev_c, &quick(3), |_| {}).unwrap();
        // a unigram model over 10 equiprobable symbols scores exactly 10
        assert!(out.best_dev_ppl < 1.5, "{variant}: {}", out.best_dev_ppl);
        let again = perplexity(&out.best, &dev_c, 1).unwrap();
        assert!((again.perplexity - out.best_dev_ppl).abs() < 1e-9 * out.best_dev_ppl);
    }
}

#[test]
fn alternating_corpus_is_memorized() {
    let train_c = repeating_corpus(2, 2000, Split::Train).unwrap();
    let dev_c = repeating_corpus(2, 200, Split::Dev).unwrap();
    let model = Model::<f64>::init(small_config(Variant::KeyValue, 2), 1).unwrap();
    let out = train(model, &train_c, &dev_c, &quick(2), |_| {}).unwrap();
    assert!(out.best_dev_ppl < 1.05, "{}", out.best_dev_ppl);
}

#[test]
fn zero_epochs_validates_the_initial_model() {
    let train_c = repeating_corpus(5, 500, Split::Train).unwrap();
    let dev_c = repeating_corpus(5, 100, Split::Dev).unwrap();
    let model = Model::<f64>::init(small_config(Variant::Lstm, 5), 9).unwrap();
    let init_ppl = perplexity(&model, &dev_c, 4).unwrap().perplexity;
    let init_bytes = checkpoint_bytes(&model).unwrap();
    let out = train(model, &train_c, &dev_c, &quick(0), |_| {}).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].train_loss, None);
    assert!((out.best_dev_ppl - init_ppl).abs() < 1e-12);
    assert_eq!(checkpoint_bytes(&out.best).unwrap(), init_bytes);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<u32> = (0..3000).map(|_| rng.random_range(0..20)).collect();
    let train_c = EncodedCorpus::new(ids[..2500].to_vec(), vec![0, 900, 1700], Split::Train).unwrap();
    let dev_c = EncodedCorpus::new(ids[2500..].to_vec(), vec![0, 200], Split::Dev).unwrap();
    let run = || {
        let model = Model::<f32>::init(small_config(Variant::KeyValuePredict, 20), 11).unwrap();
        let out = train(model, &train_c, &dev_c, &quick(2), |_| {}).unwrap();
        let log: Vec<_> = out.log.iter().map(|e| (e.step, e.train_loss, e.dev_ppl)).collect();
        (log, checkpoint_bytes(&out.best).unwrap())
    };
    let (log_a, ckpt_a) = run();
    let (log_b, ckpt_b) = run();
    assert_eq!(log_a, log_b);
    assert_eq!(ckpt_a, ckpt_b);
}

#[test]
fn divergent_learning_rate_reports_non_finite() {
    let train_c = repeating_corpus(7, 2000, Split::Train).unwrap();
    let dev_c = repeating_corpus(7, 100, Split::Dev).unwrap();
    let model = Model::<f32>::init(small_config(Variant::Lstm, 7), 2).unwrap();
    let cfg = TrainConfig {
        learning_rate: f64::MAX,
        clip_norm: f64::MAX,
        ..quick(1)
    };
    match train(model, &train_c, &dev_c, &cfg, |_| {}) {
        Err(kvplm::Error::NonFinite(msg)) => assert!(msg.contains("step"), "{msg}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(o) => panic!("training survived with ppl {}", o.best_dev_ppl),
    }
}

fn random_instances(n: usize, vocab: u32, seed: u64) -> Vec<ClozeInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut candidates = [0u32; CANDIDATES];
            let mut next = rng.random_range(2..vocab - CANDIDATES as u32);
            for c in &mut candidates {
                *c = next;
                next += 1;
            }
            let query_len = rng.random_range(3..8);
            let blank = rng.random_range(0..query_len);
            let mut query_ids: Vec<u32> = (0..query_len).map(|_| rng.random_range(2..vocab)).collect();
            query_ids[blank] = 0;
            ClozeInstance {
                context_ids: (0..30).map(|_| rng.random_range(2..vocab)).collect(),
                context_sentences: 20,
                query_ids,
                blank,
                candidates,
                answer: rng.random_range(0..CANDIDATES),
                category: [Category::NamedEntity, Category::CommonNoun, Category::Verb, Category::Preposition][i % 4],
            }
        })
        .collect()
}

#[test]
fn uniform_model_always_picks_the_first_candidate() {
    let cfg = small_config(Variant::KeyValuePredict, 40);
    let model = Model::<f64>::new(cfg, Params::zeros(&cfg).unwrap()).unwrap();
    let instances = random_instances(80, 40, 1);
    let result = cloze_accuracy(&model, &instances).unwrap();
    assert!(result.predictions.iter().all(|&p| p == 0));
    let expected = instances.iter().filter(|i| i.answer == 0).count();
    assert_eq!(result.overall().correct, expected);
    assert_eq!(result.overall().total, 80);
    assert_eq!(result.by_category.values().map(|s| s.total).sum::<usize>(), 80);
}

#[test]
fn untrained_model_scores_near_chance() {
    let model = Model::<f64>::init(small_config(Variant::Attention, 40), 4).unwrap();
    let instances = random_instances(500, 40, 2);
    let acc = cloze_accuracy(&model, &instances).unwrap().overall().accuracy();
    assert!((0.05..0.16).contains(&acc), "{acc}");
}

#[test]
fn smoothed_training_loss_decreases_on_a_repeating_sequence() {
    let train_c = repeating_corpus(10, 90_000, Split::Train).unwrap();
    let dev_c = repeating_corpus(10, 200, Split::Dev).unwrap();
    let model = Model::<f32>::init(small_config(Variant::KeyValuePredict, 10), 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        unroll: 20,
        epochs: 1,
        validate_every: 50,
        eval_lanes: 2,
        ..TrainConfig::default()
    };
    let out = train(model, &train_c, &dev_c, &cfg, |_| {}).unwrap();
    // each logged train_loss is the mean of the preceding 50 steps
    let means: Vec<f64> = out.log.iter().take(10).map(|e| e.train_loss.unwrap()).collect();
    assert_eq!(means.len(), 10);
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn carried_state_matches_one_long_window() {
    use kvplm::corpus::Window;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for variant in Variant::ALL {
        let model = Model::<f64>::init(small_config(variant, 15), 6).unwrap();
        let ids: Vec<u32> = (0..41).map(|_| rng.random_range(0..15)).collect();
        let resets: Vec<bool> = (0..40).map(|t| t == 0 || t == 17).collect();
        let window = |from: usize, len: usize| Window {
            batch: 1,
            unroll: len,
            inputs: ids[from..from + len].to_vec(),
            targets: ids[from + 1..from + len + 1].to_vec(),
            resets: resets[from..from + len].to_vec(),
            offset: from,
        };
        let (long, _, _) = model.window_loss(&window(0, 40), &model.initial_state(1)).unwrap();
        let (first, _, state) = model.window_loss(&window(0, 20), &model.initial_state(1)).unwrap();
        let (second, _, _) = model.window_loss(&window(20, 20), &state).unwrap();
        assert!((long - (first + second) / 2.0).abs() < 1e-12, "{variant}");
    }
}

#[test]
fn cloze_choice_follows_candidates_when_reordered() {
    let model = Model::<f64>::init(small_config(Variant::KeyValue, 40), 8).unwrap();
    let instances = random_instances(60, 40, 3);
    let base = cloze_accuracy(&model, &instances).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shuffled: Vec<ClozeInstance> = instances
        .iter()
        .map(|inst| {
            let mut order: Vec<usize> = (0..CANDIDATES).collect();
            for i in (1..CANDIDATES).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut s = inst.clone();
            for (slot, &from) in order.iter().enumerate() {
                s.candidates[slot] = inst.candidates[from];
            }
            s.answer = order.iter().position(|&f| f == inst.answer).unwrap();
            s
        })
        .collect();
    let moved = cloze_accuracy(&model, &shuffled).unwrap();
    for (i, (a, b)) in instances.iter().zip(&shuffled).enumerate() {
        assert_eq!(a.candidates[base.predictions[i]], b.candidates[moved.predictions[i]]);
    }
    assert_eq!(base.overall(), moved.overall());
}

#[test]
fn attention_profile_is_a_distribution() {
    use kvplm::eval::attention_profile;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ids: Vec<u32> = (0..600).map(|_| rng.random_range(0..15)).collect();
    let corpus = EncodedCorpus::new(ids, vec![0, 200, 410], Split::Dev).unwrap();
    for variant in [Variant::Attention, Variant::KeyValue, Variant::KeyValuePredict] {
        let model = Model::<f64>::init(small_config(variant, 15), 2).unwrap();
        let p = attention_profile(&model, &corpus, 3).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-4, "{variant}: {p:?}");
    }
}
