//! Worked examples and properties of the adaptation engine, checked against
//! hand-derived values and second implementations.

use mint_core::engine::{
    adjust_text, ascent_step, batch_gradient, batch_objective, predict, MeanAccumulator,
};
use mint_core::linalg::{dot, norm, Matrix};
use mint_core::synthetic::{
    make_text_embeddings, sample_latents, LabelMode, NormWeights, TextEmbeddings,
};
use mint_core::theory::{LatentParams, DESK_SEGMENTS};
use mint_core::{GradAccumulator, MintConfig, MintState, TextPrior};
use proptest::prelude::*;

fn text2() -> TextEmbeddings {
    TextEmbeddings::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap()
}

#[test]
fn predict_scores_and_ties() {
    let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5f64.sqrt(), 0.5f64.sqrt()]]).unwrap();
    let (labels, scores) = predict(&z, &text2()).unwrap();
    assert_eq!(labels, vec![0, 0]);
    assert_eq!(scores.row(0), &[1.0, 0.0]);
}

#[test]
fn mean_update_unrolled_once() {
    let mut acc = MeanAccumulator::new(1, 2);
    for v in [[1.0, 2.0], [3.0, -1.0], [2.0, 2.0]] {
        acc.update(&v, 0).unwrap();
    }
    let m = acc.global_mean().to_vec();
    acc.update(&[6.0, 1.0], 0).unwrap();
    for j in 0..2 {
        let expect = (3.0 * m[j] + [6.0, 1.0][j]) / 4.0;
        assert!((acc.global_mean()[j] - expect).abs() < 1e-15);
    }
}

#[test]
fn grad_update_cancels() {
    let mut acc = GradAccumulator::new(3);
    acc.update(&[0.5, -2.0, 1.0]).unwrap();
    assert_eq!(acc.mean_grad(), &[0.5, -2.0, 1.0]);
    acc.update(&[-0.5, 2.0, -1.0]).unwrap();
    assert!(acc.mean_grad().iter().all(|&g| g.abs() < 1e-15));
}

#[test]
fn objective_examples() {
    // one sample sitting on its class mean, away from the global mean
    let mut acc = MeanAccumulator::new(2, 2);
    acc.update(&[0.0, 1.0], 1).unwrap();
    acc.update(&[1.0, 0.0], 0).unwrap();
    let z = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let v = batch_objective(&z, &[0], &acc).unwrap();
    assert!((v - 0.5).abs() < 1e-15);

    // global mean equal to every class mean: objective and gradient vanish
    let mut acc = MeanAccumulator::new(2, 2);
    acc.update(&[0.6, 0.8], 0).unwrap();
    let inputs = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
    assert_eq!(batch_objective(&inputs, &[0], &acc).unwrap(), 0.0);
    let g = batch_gradient(&inputs, &NormWeights::ones_flat(2), &[0], &acc).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn ascent_step_examples() {
    let cfg = MintConfig::default();
    let w0 = NormWeights::ones_flat(2);
    let w = ascent_step(&w0, &[0.5, 0.0], &cfg).unwrap();
    let dw = w.as_slice()[0] - 1.0;
    assert!((dw - 0.007 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    assert!(dw > 0.00699999 && dw < 0.007);
    assert_eq!(w.as_slice()[1], 1.0);

    let w10 = ascent_step(&w0, &[5.0, 0.0], &cfg).unwrap();
    assert!((w10.as_slice()[0] - w.as_slice()[0]).abs() < 1e-9);
}

#[test]
fn text_blend_bisects_at_equal_weight() {
    let mut acc = MeanAccumulator::new(2, 2);
    for _ in 0..10_000 {
        acc.update(&[0.0, 1.0], 0).unwrap();
    }
    let t = adjust_text(&text2(), &acc, 10_000.0, TextPrior::PerClass).unwrap();
    let h = 0.5f64.sqrt();
    assert!((t.row(0)[0] - h).abs() < 1e-12 && (t.row(0)[1] - h).abs() < 1e-12);
    assert_eq!(t.row(1), text2().row(1));

    let empty = MeanAccumulator::new(2, 2);
    assert_eq!(
        adjust_text(&text2(), &empty, 5.0, TextPrior::PerClass).unwrap(),
        text2()
    );
}

fn desk(cfg: MintConfig) -> (MintState, LatentParams) {
    let p = LatentParams::desk_default(4.0);
    let text = make_text_embeddings(&p, 0.3, 1).unwrap();
    (
        MintState::new(NormWeights::ones(DESK_SEGMENTS), text, cfg).unwrap(),
        p,
    )
}

#[test]
fn single_sample_first_batch_is_zero_shot() {
    let (mut state, p) = desk(MintConfig::default());
    for seed in 0..20 {
        let b = sample_latents(&p, 1, seed, LabelMode::Streaming).unwrap();
        let out = state.process_batch(&b.latents).unwrap();
        assert_eq!(out.diagnostics.classes_in_batch, 1);
        if seed == 0 {
            assert_eq!(out.diagnostics.grad_norm, 0.0);
            assert_eq!(out.predictions, out.zero_shot);
        }
        // objective for one sample is ‖z−z̃‖² − ‖z−z̃_c‖² with current means
        assert!(out.diagnostics.objective.unwrap().is_finite());
    }
}

#[test]
fn process_batch_is_pure_given_state() {
    let (mut state, p) = desk(MintConfig::default());
    for seed in 0..4 {
        state
            .process_batch(
                &sample_latents(&p, 20, seed, LabelMode::Streaming)
                    .unwrap()
                    .latents,
            )
            .unwrap();
    }
    let w0 = state.w0().clone();
    let mut copy = state.clone();
    let b = sample_latents(&p, 20, 99, LabelMode::Streaming).unwrap();
    let a = state.process_batch(&b.latents).unwrap();
    let c = copy.process_batch(&b.latents).unwrap();
    assert_eq!(a.predictions, c.predictions);
    assert_eq!(a.adapted_embeddings, c.adapted_embeddings);
    assert_eq!(a.diagnostics, c.diagnostics);
    let bits = |w: &NormWeights| w.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(state.w0()), bits(&w0));
}

#[test]
fn huge_prior_is_weight_only_adaptation() {
    let cfg = MintConfig {
        k_prior: 1e12,
        learning_rate: 0.3,
        ..MintConfig::default()
    };
    let off = MintConfig {
        use_text_adjust: false,
        ..cfg.clone()
    };
    let (mut a, p) = desk(cfg);
    let (mut b, _) = desk(off);
    for seed in 0..10 {
        let x = sample_latents(&p, 20, seed, LabelMode::Streaming)
            .unwrap()
            .latents;
        assert_eq!(
            a.process_batch(&x).unwrap().predictions,
            b.process_batch(&x).unwrap().predictions
        );
    }
    let mut acc = MeanAccumulator::new(2, 2);
    acc.update(&[0.0, 1.0], 0).unwrap();
    let t = adjust_text(&text2(), &acc, 1e12, TextPrior::PerClass).unwrap();
    assert!((t.row(0)[0] - 1.0).abs() < 1e-9 && t.row(0)[1].abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn argmax_ignores_positive_scaling(seed in 0u64..500, scale in 0.01f64..100.0) {
        let p = LatentParams::desk_default(3.0);
        let text = make_text_embeddings(&p, 0.3, seed).unwrap();
        let z = sample_latents(&p, 30, seed, LabelMode::Streaming).unwrap().latents;
        let (a, _) = predict(&z, &text).unwrap();
        let (b, _) = predict(&z.scaled(scale), &text).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adjusted_text_rows_are_unit(seed in 0u64..500, k in 0.0f64..1e5) {
        let p = LatentParams::desk_default(2.0);
        let text = make_text_embeddings(&p, 0.3, seed).unwrap();
        let b = sample_latents(&p, 40, seed, LabelMode::Streaming).unwrap();
        let z = mint_core::synthetic::embed_rows(&b.latents, &vec![1.0; p.dim()]).unwrap();
        let acc = MeanAccumulator::from_batch(&z, &b.gt_labels, 2).unwrap();
        for prior in [TextPrior::PerClass, TextPrior::Global] {
            let t = adjust_text(&text, &acc, k, prior).unwrap();
            for c in 0..2 {
                prop_assert!((norm(t.row(c)) - 1.0).abs() < 1e-12);
                // blending toward the class mean never lowers its alignment
                prop_assert!(dot(t.row(c), acc.class_mean(c)) >= dot(text.row(c), acc.class_mean(c)) - 1e-12);
            }
        }
    }
}
