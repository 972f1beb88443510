use infini::numerics::{kernels, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values bounded away from zero with random sign.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.5..2.0);
        if r.random_bool(0.5) { m } else { -m }
    })
}

const KERNELS: usize = 27;

/// Inputs and graph of kernel `kind` on random shapes drawn from `r`.
fn case(kind: usize, r: &mut ChaCha8Rng) -> (&'static str, Vec<Tensor<f64>>, Build) {
    let rows = r.random_range(1..5);
    let cols = r.random_range(1..6);
    let x = rand_t(r, &[rows, cols], -2.0, 2.0);
    match kind {
        0 => {
            let (ta, tb) = (r.random_bool(0.5), r.random_bool(0.5));
            let k = r.random_range(1..5);
            let a = rand_t(r, &if ta { [k, rows] } else { [rows, k] }, -2.0, 2.0);
            let b = rand_t(r, &if tb { [cols, k] } else { [k, cols] }, -2.0, 2.0);
            ("matmul", vec![a, b], Box::new(move |t, v| t.matmul_t(v[0], ta, v[1], tb).unwrap()))
        }
        1 => ("transpose", vec![x], Box::new(|t, v| t.transpose(v[0]).unwrap())),
        2..=5 => {
            let shape: Vec<usize> = if r.random_bool(0.5) { vec![cols] } else { vec![rows, cols] };
            let b = if kind == 5 { away_from_zero(r, &shape) } else { rand_t(r, &shape, -2.0, 2.0) };
            let name = ["add", "sub", "mul", "div"][kind - 2];
            (name, vec![x, b], Box::new(move |t, v| match kind {
                2 => t.add(v[0], v[1]).unwrap(),
                3 => t.sub(v[0], v[1]).unwrap(),
                4 => t.mul(v[0], v[1]).unwrap(),
                _ => t.div(v[0], v[1]).unwrap(),
            }))
        }
        6 => {
            let (alpha, beta) = (r.random_range(-3.0..3.0), r.random_range(-1.0..1.0));
            ("affine", vec![x], Box::new(move |t, v| t.affine(v[0], alpha, beta)))
        }
        7 => ("sigmoid", vec![x], Box::new(|t, v| t.sigmoid(v[0]))),
        8 => ("elu_plus_one", vec![away_from_zero(r, &[rows, cols])], Box::new(|t, v| t.elu_plus_one(v[0]))),
        9 => ("gelu", vec![x], Box::new(|t, v| t.gelu(v[0]))),
        10 => {
            // Keep every element at least 0.05 from the kink.
            let y = Tensor::from_fn(&[rows, cols], |_| {
                let m = r.random_range(0.05..2.0);
                if r.random_bool(0.5) { 0.1 + m } else { 0.1 - m }
            });
            ("clamp_min", vec![y], Box::new(|t, v| t.clamp_min(v[0], 0.1)))
        }
        11 => ("softmax", vec![x], Box::new(|t, v| t.softmax(v[0]))),
        12 => {
            let sq = rand_t(r, &[rows, rows], -2.0, 2.0);
            ("causal_softmax", vec![sq], Box::new(|t, v| t.causal_softmax(v[0]).unwrap()))
        }
        13 => {
            let axis = r.random_range(0..2);
            ("sum_axis", vec![x], Box::new(move |t, v| t.sum_axis(v[0], axis).unwrap()))
        }
        14 => ("sum_all", vec![x], Box::new(|t, v| t.sum_all(v[0]))),
        15 => {
            let extra = r.random_range(1..4);
            let y = rand_t(r, &[rows, extra], -2.0, 2.0);
            ("concat_last", vec![x, y], Box::new(|t, v| t.concat_last(&[v[0], v[1]]).unwrap()))
        }
        16 => {
            let extra = r.random_range(1..4);
            let y = rand_t(r, &[extra, cols], -2.0, 2.0);
            ("concat_rows", vec![x, y], Box::new(|t, v| t.concat_rows(&[v[0], v[1]]).unwrap()))
        }
        17 => {
            let start = r.random_range(0..cols);
            let len = r.random_range(1..=cols - start);
            ("slice_last", vec![x], Box::new(move |t, v| t.slice_last(v[0], start, len).unwrap()))
        }
        18 => {
            let start = r.random_range(0..rows);
            let len = r.random_range(1..=rows - start);
            ("slice_rows", vec![x], Box::new(move |t, v| t.slice_rows(v[0], start, len).unwrap()))
        }
        19 => {
            let ids: Vec<usize> = (0..r.random_range(1..7)).map(|_| r.random_range(0..rows)).collect();
            ("embedding", vec![x], Box::new(move |t, v| t.embedding(v[0], &ids).unwrap()))
        }
        20 => {
            let targets: Vec<usize> = (0..rows).map(|_| r.random_range(0..cols)).collect();
            let weights: Vec<f64> = (0..rows).map(|_| r.random_range(0.0..2.0)).collect();
            let norm = weights.iter().sum::<f64>() + 0.5;
            ("cross_entropy", vec![x], Box::new(move |t, v| t.cross_entropy(v[0], &targets, &weights, norm).unwrap()))
        }
        21 => {
            let gain = rand_t(r, &[cols], 0.5, 1.5);
            ("rms_norm", vec![x, gain], Box::new(|t, v| t.rms_norm(v[0], v[1], 1e-6).unwrap()))
        }
        22 => {
            let y = rand_t(r, &[rows, 2 * cols], -2.0, 2.0);
            let offset = r.random_range(0..500);
            ("rotary", vec![y], Box::new(move |t, v| t.rotary(v[0], offset, 10_000.0).unwrap()))
        }
        23 => {
            let den = rand_t(r, &[rows, 1], 0.5, 2.0);
            ("div_rows", vec![x, den], Box::new(|t, v| t.div_rows(v[0], v[1]).unwrap()))
        }
        24 => {
            let s = rand_t(r, &[1], -2.0, 2.0);
            ("mul_scalar", vec![x, s], Box::new(|t, v| t.mul_scalar(v[0], v[1]).unwrap()))
        }
        25 => {
            let i = r.random_range(0..rows * cols);
            ("index", vec![x], Box::new(move |t, v| t.index(v[0], i).unwrap()))
        }
        _ => ("reshape", vec![x], Box::new(move |t, v| t.reshape(v[0], &[cols, rows]).unwrap())),
    }
}

/// `sum(out ∘ w)` for a fixed random weighting `w` of the output.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, w: &Tensor<f64>) -> Var {
    let w = tape.constant(w.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum_all(prod)
}

fn evaluate(build: &Build, inputs: &[Tensor<f64>], w: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let loss = weighted_sum(&mut tape, out, w);
    tape.value(loss).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn every_kernel_matches_central_differences(kind in 0..KERNELS, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (name, inputs, build) = case(kind, &mut r);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let w = rand_t(&mut r, tape.shape(out), -1.0, 1.0);
        let loss = weighted_sum(&mut tape, out, &w);
        let grads = tape.grad(loss, &vars).unwrap();
        let h = 1e-6;
        for (p, x) in inputs.iter().enumerate() {
            prop_assert_eq!(grads[p].shape(), x.shape());
            for e in 0..x.numel() {
                let shifted = |d: f64| {
                    let mut v = inputs.clone();
                    v[p].data_mut()[e] += d;
                    evaluate(&build, &v, &w)
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = grads[p].data()[e];
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
                prop_assert!(err < 1e-5 || (analytic - numeric).abs() < 1e-9,
                    "{name} input {p} element {e}: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..40, spread in 0.1f64..50.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_t(&mut r, &[rows, cols], -spread, spread);
        for row in kernels::softmax_rows(&x).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let xf: Tensor<f32> = x.cast();
        for row in kernels::softmax_rows(&xf).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn elu_plus_one_is_strictly_positive(x in prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
        prop_assert!(kernels::elu_plus_one_scalar(x) > 0.0);
        prop_assert!(kernels::elu_plus_one_scalar(x as f32) > 0.0 || !(x as f32).is_finite());
    }

    #[test]
    fn fan_out_doubles_the_gradient(kind in 0..KERNELS, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (_, inputs, build) = case(kind, &mut r);
        let mut once = Tape::new();
        let v1: Vec<Var> = inputs.iter().map(|x| once.leaf(x.clone())).collect();
        let o1 = build(&mut once, &v1);
        let w = rand_t(&mut r, once.shape(o1), -1.0, 1.0);
        let l1 = weighted_sum(&mut once, o1, &w);
        let g1 = once.grad(l1, &v1).unwrap();

        let mut twice = Tape::new();
        let v2: Vec<Var> = inputs.iter().map(|x| twice.leaf(x.clone())).collect();
        let a = build(&mut twice, &v2);
        let b = build(&mut twice, &v2);
        let la = weighted_sum(&mut twice, a, &w);
        let lb = weighted_sum(&mut twice, b, &w);
        let l2 = twice.add(la, lb).unwrap();
        let g2 = twice.grad(l2, &v2).unwrap();
        for (x, y) in g1.iter().zip(&g2) {
            for (p, q) in x.data().iter().zip(y.data()) {
                prop_assert!((2.0 * p - q).abs() <= 1e-12 * p.abs().max(1.0));
            }
        }
    }
}

#[test]
fn every_kernel_is_covered() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let names: std::collections::HashSet<&str> = (0..KERNELS).map(|k| case(k, &mut r).0).collect();
    assert_eq!(names.len(), KERNELS);
}
