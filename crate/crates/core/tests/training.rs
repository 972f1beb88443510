mod common;

use common::*;
use infini::numerics::gradcheck::finite_diff_check;
use infini::numerics::Tensor;
use infini::par::Execution;
use infini::training::{
    batch_gradients, bptt_step, optimizer_step, sequence_gradients, AdamParams, BatchSource,
    OptimizerState, Sequence, TrainConfig, Trainer,
};
use infini::{InfiniError, Model, ModelConfig, UpdateRule};

fn rel_diff(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    let fa: Vec<f64> = a.iter().flat_map(|t| t.data().to_vec()).collect();
    let fb: Vec<f64> = b.iter().flat_map(|t| t.data().to_vec()).collect();
    let scale = fa.iter().map(|v| v.abs()).fold(0.0, f64::max);
    fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn checkpointed_matches_full_tape_over_three_segments() {
    for rule in [UpdateRule::Linear, UpdateRule::LinearDelta] {
        let model = tiny_model(1, rule);
        let tokens = random_tokens(2, 12, 13);
        let mut weighted = Sequence::plain(tokens.clone());
        weighted.weights = Some((0..12).map(|i| (i % 3) as f64).collect());
        for seq in [Sequence::plain(tokens), weighted] {
            let (la, ga) = sequence_gradients(&model, &seq, false).unwrap();
            let (lb, gb) = sequence_gradients(&model, &seq, true).unwrap();
            assert!((la - lb).abs() <= 1e-12 * la.abs());
            assert!(rel_diff(&ga, &gb) < 1e-12, "{}", rel_diff(&ga, &gb));
        }
    }
}

#[test]
fn single_segment_gradients_match_a_plain_transformer() {
    let mut model = tiny_model(3, UpdateRule::Linear);
    model.set_gates(-30.0);
    let tokens = random_tokens(4, 4, 13);
    let (loss, grads) = sequence_gradients(&model, &Sequence::plain(tokens.clone()), true).unwrap();
    assert!((loss - next_token_ce(&plain_transformer_logits(&model, &tokens), &tokens)).abs() < 1e-12);
    let report = finite_diff_check(
        |p: &[Tensor<f64>]| {
            let mut m = model.clone();
            m.params.set_tensors(p.to_vec()).unwrap();
            next_token_ce(&plain_transformer_logits(&m, &tokens), &tokens)
        },
        &model.params.tensors(),
        &grads,
        1e-5,
        1e-6,
        Execution::Parallel,
    );
    // The gate logits sit in saturation where both derivatives vanish.
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    for f in report.failures() {
        assert!(names[f.index].ends_with(".beta"), "{}: {f:?}", names[f.index]);
        assert!(f.analytic.abs() < 1e-12 && f.numeric.abs() < 1e-9);
    }
}

/// Gradient on embedding rows of tokens seen only before the last segment,
/// relative to rows of tokens inside it, when only the last segment is scored.
fn cross_segment_ratio(beta: Option<f64>) -> f64 {
    let mut cfg = ModelConfig::with_heads(2, 2, 8, 16, 4, 13);
    cfg.tie_embeddings = false;
    let mut model = Model::<f64>::new(cfg, 5).unwrap();
    if let Some(b) = beta {
        model.set_gates(b);
    }
    let early = [0, 1, 2, 3, 4, 5, 0, 1];
    let late = [9, 10, 11, 12];
    let tokens: Vec<usize> = early.iter().chain(&late).copied().collect();
    let mut weights = vec![0.0; 12];
    weights[8..11].iter_mut().for_each(|w| *w = 1.0);
    let seq = Sequence {
        tokens,
        weights: Some(weights),
    };
    let (_, grads) = sequence_gradients(&model, &seq, false).unwrap();
    let embed = &grads[0];
    let norm = |ids: &[usize]| -> f64 {
        ids.iter()
            .flat_map(|&i| embed.row(i).to_vec())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    norm(&[0, 1, 2, 3, 4, 5]) / norm(&late)
}

#[test]
fn memory_carries_gradient_across_segments_only_when_gates_open() {
    assert!(cross_segment_ratio(None) > 1e-3);
    assert!(cross_segment_ratio(Some(-30.0)) < 1e-9);
}

#[test]
fn adam_on_a_lone_scalar_follows_the_closed_form() {
    let model = tiny_model(6, UpdateRule::Linear);
    let mut params = model.params.clone();
    let mut state = OptimizerState::new(&params);
    let hp = AdamParams {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let (g, lr) = (0.37, 1e-3);
    let p0 = params.tensors()[3].data()[5];
    for k in 1..=7 {
        let mut grads: Vec<Tensor<f64>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        grads[3].data_mut()[5] = g;
        let out = optimizer_step(&mut params, &mut grads, &mut state, lr, None, hp).unwrap();
        assert!(out.applied && !out.clipped);
        let (mut m, mut v) = (0.0, 0.0);
        let mut p = p0;
        for t in 1..=k {
            m = hp.beta1 * m + (1.0 - hp.beta1) * g;
            v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
            let mh = m / (1.0 - hp.beta1.powi(t));
            let vh = v / (1.0 - hp.beta2.powi(t));
            p -= lr * mh / (vh.sqrt() + hp.eps);
        }
        assert!((params.tensors()[3].data()[5] - p).abs() < 1e-15);
    }
    let before = model.params.tensors();
    let after = params.tensors();
    for (i, (a, b)) in before.iter().zip(&after).enumerate() {
        for (e, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            if (i, e) != (3, 5) {
                assert_eq!(x, y);
            }
        }
    }
}

struct RandomText;

impl BatchSource for RandomText {
    fn batch(&self, step: u64, size: usize) -> infini::Result<Vec<Sequence>> {
        Ok((0..size)
            .map(|i| Sequence::plain(random_tokens(step * 100 + i as u64, 8, 13)))
            .collect())
    }
}

fn tiny_trainer(checkpointing: bool, exec: Execution) -> Trainer<f64> {
    let cfg = TrainConfig {
        peak_lr: 1e-2,
        warmup_steps: 2,
        total_steps: 6,
        batch_size: 3,
        seq_len: 8,
        checkpointing,
        execution: exec,
        ..TrainConfig::desk()
    };
    Trainer::new(tiny_model(7, UpdateRule::Linear), cfg).unwrap()
}

fn losses(t: &mut Trainer<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    t.run(&RandomText, |_, r| {
        out.push(r.loss);
        Ok(true)
    })
    .unwrap();
    out
}

#[test]
fn training_is_deterministic_across_modes() {
    let a = losses(&mut tiny_trainer(true, Execution::Parallel));
    let b = losses(&mut tiny_trainer(true, Execution::Parallel));
    let c = losses(&mut tiny_trainer(true, Execution::Sequential));
    assert_eq!(a.len(), 6);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn batch_gradients_do_not_depend_on_execution() {
    let model = tiny_model(8, UpdateRule::LinearDelta);
    let batch = RandomText.batch(3, 5).unwrap();
    let (la, ga) = batch_gradients(&model, &batch, true, Execution::Parallel).unwrap();
    let (lb, gb) = batch_gradients(&model, &batch, true, Execution::Sequential).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ga, gb);
}

#[test]
fn resumed_training_continues_the_same_trajectory() {
    let full = losses(&mut tiny_trainer(true, Execution::Parallel));
    let mut t = tiny_trainer(true, Execution::Parallel);
    let mut head = Vec::new();
    t.run(&RandomText, |_, r| {
        head.push(r.loss);
        Ok(r.step < 3)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trainer.bin");
    t.save(&path).unwrap();
    let mut resumed = Trainer::<f64>::load(&path).unwrap();
    assert_eq!(resumed.step, 3);
    assert_eq!(resumed.config, t.config);
    head.extend(losses(&mut resumed));
    assert_eq!(head, full);
}

#[test]
fn one_small_step_lowers_the_loss_on_its_batch() {
    let mut t = tiny_trainer(false, Execution::Parallel);
    let batch = RandomText.batch(0, 3).unwrap();
    let cfg = TrainConfig {
        peak_lr: 1e-3,
        warmup_steps: 0,
        ..t.config.clone()
    };
    let before = batch_gradients(&t.model, &batch, false, Execution::Parallel).unwrap().0;
    let r = bptt_step(&mut t.model, &batch, &cfg, &mut t.opt, 1).unwrap();
    assert!((r.loss - before).abs() < 1e-12);
    let after = batch_gradients(&t.model, &batch, false, Execution::Parallel).unwrap().0;
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn frozen_gates_stay_put() {
    let mut t = tiny_trainer(true, Execution::Parallel);
    t.config.freeze_gates = true;
    let gates = t.model.gate_scores();
    losses(&mut t);
    assert_eq!(t.model.gate_scores(), gates);
}

#[test]
fn non_finite_loss_names_the_batch_entry() {
    let mut cfg = ModelConfig::with_heads(2, 2, 8, 16, 4, 13);
    cfg.tie_embeddings = false;
    let mut model = Model::<f64>::new(cfg, 9).unwrap();
    model.params.embed.data_mut()[12 * 8] = f64::NAN;
    let batch = vec![
        Sequence::plain(vec![1, 2, 3, 4]),
        Sequence::plain(vec![5, 12, 3, 4]),
    ];
    assert!(matches!(
        batch_gradients(&model, &batch, true, Execution::Parallel),
        Err(InfiniError::NonFiniteLoss { batch_index: 1 })
    ));
}

#[test]
fn wrong_sequence_length_is_rejected() {
    let mut t = tiny_trainer(true, Execution::Parallel);
    let batch = vec![Sequence::plain(vec![1; 5])];
    let cfg = t.config.clone();
    assert!(bptt_step(&mut t.model, &batch, &cfg, &mut t.opt, 1).is_err());
}
