mod common;

use std::collections::HashSet;

use common::*;
use infini::tasks::*;
use infini::{Model, ModelConfig, UpdateRule};
use rand::Rng;

#[test]
fn passkey_round_trip_on_a_thousand_instances() {
    let mut r = rng(1);
    for i in 0..1000 {
        let x = r.random_range(0..40);
        let y = r.random_range(0..40);
        let key = r.random_range(1000..=99_999u32);
        let inst = passkey_generate(x, y, Some(key), i).unwrap();
        assert_eq!(passkey_extract(&inst.prompt), Some(key));
        assert!(inst.prompt.matches(&key.to_string()).count() >= 2);
        assert_eq!(PasskeyInstance::from_json(&inst.to_json()).unwrap(), inst);
    }
}

#[test]
fn shortest_prompt_is_byte_exact() {
    let inst = passkey_generate(0, 0, Some(9054), 0).unwrap();
    let expect = "There is an important info hidden inside a lot of irrelevant text. \
Find it and memorize them. I will quiz you about the important information there.\n\
The pass key is 9054. Remember it. 9054 is the pass key.\n\
What is the pass key? The pass key is";
    assert_eq!(inst.prompt, expect);
    assert_eq!(inst.prompt.matches("9054").count(), 2);

    let one = passkey_generate(1, 1, Some(9054), 0).unwrap();
    let filler = "The grass is green. The sky is blue. The sun is yellow. Here we go. There and back again.";
    assert!(one.prompt.contains(&format!("{filler} The pass key is 9054. Remember it. 9054 is the pass key. {filler}\n")));
    assert!(one.prompt.ends_with("The pass key is"));
}

#[test]
fn key_position_moves_with_the_filler_split() {
    let classes: Vec<KeyPosition> = [(0, 30), (15, 15), (30, 0)]
        .iter()
        .map(|&(x, y)| passkey_generate(x, y, Some(12345), 0).unwrap().position)
        .collect();
    assert_eq!(classes, vec![KeyPosition::Start, KeyPosition::Middle, KeyPosition::End]);

    for x in 0..=20 {
        let inst = passkey_generate(x, 20 - x, Some(54321), 0).unwrap();
        let at = inst.prompt.find("The pass key is 54321").unwrap() + "The pass key is ".len();
        let frac = at as f64 / inst.prompt.len() as f64;
        let expect = if frac < 1.0 / 3.0 {
            KeyPosition::Start
        } else if frac < 2.0 / 3.0 {
            KeyPosition::Middle
        } else {
            KeyPosition::End
        };
        assert_eq!(inst.position, expect);
    }
}

#[test]
fn passkey_inputs_are_validated() {
    assert!(passkey_generate(1, 1, Some(999), 0).is_err());
    assert!(passkey_generate(1, 1, Some(100_000), 0).is_err());
    let k = passkey_generate(1, 1, None, 5).unwrap().passkey;
    assert!((10_000..=99_999).contains(&k));
    assert_eq!(passkey_generate(1, 1, None, 5).unwrap().passkey, k);
}

#[test]
fn passkey_scores() {
    let inst = passkey_generate(2, 2, Some(48213), 0).unwrap();
    assert_eq!(passkey_score(" 48213.", &inst), 1.0);
    assert_eq!(passkey_score("59324", &inst), 0.0);
    assert_eq!(passkey_score("", &inst), 0.0);
    let four = passkey_generate(2, 2, Some(4821), 0).unwrap();
    assert_eq!(passkey_score("4800", &four), 0.5);
    let tok = ByteTokenizer;
    assert_eq!(tok.decode(&tok.encode(&inst.prompt)), inst.prompt);
}

#[test]
fn passkey_evaluation_runs_on_a_byte_model() {
    let cfg = ModelConfig::with_heads(1, 2, 8, 16, 32, ByteTokenizer::VOCAB);
    let model = Model::<f64>::new(cfg, 1).unwrap();
    let suite = passkey_suite(2, 3, 4).unwrap();
    let scores = passkey_evaluate(&model, &suite, infini::par::Execution::Parallel).unwrap();
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let small = Model::<f64>::new(ModelConfig::with_heads(1, 2, 8, 16, 32, 64), 1).unwrap();
    assert!(passkey_evaluate(&small, &suite, infini::par::Execution::Parallel).is_err());
}

#[test]
fn infini_footprint_matches_live_state() {
    let mut r = rng(2);
    for _ in 0..10 {
        let heads = r.random_range(1..5);
        let d_key = 2 * r.random_range(1..6);
        let mut cfg = ModelConfig::with_heads(r.random_range(1..4), heads, 8, 8, 4, 16);
        cfg.d_key = d_key;
        cfg.d_value = r.random_range(1..9);
        let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
        let live = model.fresh_state().scalar_count() as u128;
        let d = FootprintDescriptor {
            family: Family::Infini,
            params: FootprintParams::from_model(&cfg, 7),
        };
        let f = memory_footprint(&d).unwrap();
        assert_eq!(f.memory, live);
        let by_hand = cfg.d_key * (cfg.d_value + 1) * cfg.heads * cfg.layers;
        assert_eq!(live, by_hand as u128);
    }
}

#[test]
fn reference_footprints() {
    let fp = |family, params: FootprintParams| {
        memory_footprint(&FootprintDescriptor { family, params }).unwrap().memory
    };
    let infini = fp(Family::Infini, FootprintParams::reference(16));
    let xl = fp(Family::TransformerXl, FootprintParams::reference(16));
    assert_eq!(infini, 1_585_152);
    assert_eq!(xl, 50_331_648);
    assert_eq!(human_count(infini), "1.6M");
    assert_eq!(human_count(xl), "50M");
    let knn = FootprintParams {
        knn_tokens: Some(65_536),
        knn_layers: Some(1),
        ..FootprintParams::reference(16)
    };
    let mem = fp(Family::Memorizing, knn);
    assert_eq!(mem, 256 * 8 * (65_536 + 2048 * 11));
    assert!(compression_ratio(mem, infini).unwrap().abs_diff(114) <= 1);
}

#[test]
fn recall_splits_are_payload_disjoint() {
    let cfg = RecallConfig::default();
    let (eval, held) = recall_eval_split(&cfg, 64, 2, 3).unwrap();
    assert_eq!(held.len(), 64);
    let train = recall_dataset(&cfg, 2000, 4, &held).unwrap();
    assert!(train.iter().all(|i| !held.contains(&i.payload)));
    assert!(eval.iter().all(|i| held.contains(&i.payload)));
    let again = recall_dataset(&cfg, 2000, 4, &held).unwrap();
    assert_eq!(train, again);
    for inst in &train[..50] {
        let fill = cfg.filler_range();
        for (p, t) in inst.tokens.iter().enumerate() {
            let marked = p == inst.cue_pos
                || p == inst.query_pos
                || (inst.cue_pos < p && p <= inst.cue_pos + 2)
                || p > inst.query_pos;
            assert_eq!(fill.contains(t), !marked);
        }
    }
}

#[test]
fn recall_distance_beyond_two_segments_is_out_of_local_reach() {
    let cfg = RecallConfig::default();
    let n = 64;
    let q = cfg.query_pos();
    let c = cfg.cue_pos().unwrap();
    assert!(cfg.distance().unwrap() > 2 * n);
    assert_ne!(q / n, (c + 2) / n);
    assert!(HashSet::<usize>::from_iter(cfg.payload_range()).is_disjoint(&HashSet::from_iter(cfg.filler_range())));
}

#[test]
fn token_files_round_trip_through_disk() {
    let (set, _) = recall_eval_split(&RecallConfig::default(), 5, 1, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("recall.tok");
    TokenFile::from_recall(&set).unwrap().write(&path).unwrap();
    assert_eq!(TokenFile::read(&path).unwrap().to_recall().unwrap(), set);
}

#[test]
fn perplexity_equals_exp_loss() {
    let model = tiny_model(3, UpdateRule::Linear);
    let tokens = random_tokens(4, 14, 13);
    let r = eval_perplexity(&model, &tokens, ContextRegime::Memory).unwrap();
    let loss = model.lm_loss(&tokens).unwrap();
    assert!((r.loss - loss).abs() < 1e-12);
    assert!((r.perplexity - loss.exp()).abs() < 1e-9);
    assert_eq!(r.predictions, 13);

    let mut uniform = Model::<f64>::new(ModelConfig::with_heads(1, 2, 8, 8, 4, 64), 0).unwrap();
    uniform.params.embed = infini::numerics::Tensor::zeros(&[64, 8]);
    let u = eval_perplexity(&uniform, &random_tokens(5, 20, 64), ContextRegime::LocalOnly).unwrap();
    assert!((u.perplexity - 64.0).abs() < 1e-9);

    let streams = vec![tokens.clone(), random_tokens(6, 9, 13)];
    let pooled = eval_perplexity_many(&model, &streams, ContextRegime::Memory, infini::par::Execution::Parallel).unwrap();
    assert_eq!(pooled.predictions, 13 + 8);
    assert!(eval_perplexity(&model, &[1], ContextRegime::Memory).is_err());
}

#[test]
fn mixed_source_alternates_far_and_near_needles() {
    let cfg = RecallConfig::default();
    let (_, held) = recall_eval_split(&cfg, 64, 2, 3).unwrap();
    let src = MixedRecallSource {
        base: RecallSource {
            config: cfg.clone(),
            seed: 5,
            exclude: held.clone(),
        },
        near_max: 50,
    };
    use infini::training::BatchSource;
    let batch = src.batch(7, 16).unwrap();
    assert_eq!(batch, src.batch(7, 16).unwrap());
    assert_ne!(batch, src.batch(8, 16).unwrap());
    let q = cfg.query_pos();
    for (i, seq) in batch.iter().enumerate() {
        let cue = seq.tokens.iter().position(|&t| t == infini::tasks::recall::NEEDLE_CUE).unwrap();
        let distance = q - cue - cfg.payload_len - 1;
        if i % 2 == 0 {
            assert_eq!(distance, 160);
        } else {
            assert!(distance <= 50);
        }
        assert!(!held.contains(&seq.tokens[q + 1..]));
        assert_eq!(seq.tokens[q], infini::tasks::recall::QUERY_CUE);
    }
}
