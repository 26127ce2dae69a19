//! Randomized invariants across modules.

mod common;

use std::path::Path;

use cortinet::adaptive::CalibrationReport;
use cortinet::data::noise::{seeded_noise, NoiseKind};
use cortinet::data::seed::stream;
use cortinet::data::{augment, stratified_split, AugmentConfig, LabeledSample, DEFAULT_RATIOS};
use cortinet::evaluation::{binary_auc, confusion_matrix, per_class_metrics, EvaluationReport};
use cortinet::explain::{gradcam, gradcam_structural};
use cortinet::model::checkpoint::{from_bytes, to_bytes};
use cortinet::model::{LossWeights, ModelConfig, NetInput, Network, StructuralHead, Variant};
use cortinet::numerics::{
    adam_step, conv2d, cross_entropy, softmax, AdamConfig, AdamState, BnMode, Tensor,
};
use cortinet::wavelet::{daubechies_filters, dwt2_level1, idwt2_level1};
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    common::random_tensor(shape, &mut common::rng(seed))
}

fn small_net(seed: u64, head: StructuralHead) -> Network {
    let config = ModelConfig {
        num_classes: 4,
        channel_widths: vec![3, 4],
        hidden_width: 6,
        wavelet_order: 2,
        input_side: 16,
        aux_weight: 0.5,
        structural_head: head,
        variant: Variant::Full,
    };
    Network::build(&config, seed).unwrap()
}

fn unit_image(side: usize, seed: u64) -> Tensor {
    tensor(&[1, side, side], seed).map(|v| 0.5 + 0.5 * v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wavelet_reconstructs_and_conserves_energy(
        order in 1usize..=4, c in 1usize..=3, hh in 4usize..=12, hw in 4usize..=12, seed: u64,
    ) {
        let f = daubechies_filters(order).unwrap();
        let x = tensor(&[c, 2 * hh, 2 * hw], seed);
        let d = dwt2_level1(&x, &f).unwrap();
        for band in d.subbands() {
            prop_assert_eq!(band.shape(), &[c, hh, hw]);
        }
        let back = idwt2_level1(&d, &f).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-8);
        let e = x.norm_sq();
        prop_assert!((d.energy() - e).abs() <= 1e-10 * e);
    }

    #[test]
    fn wavelet_is_linear(order in 1usize..=4, a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
        let f = daubechies_filters(order).unwrap();
        let x = tensor(&[2, 12, 10], seed);
        let y = tensor(&[2, 12, 10], seed ^ 1);
        let mut mix = x.clone();
        mix.scale(a);
        mix.axpy(b, &y).unwrap();
        let (dm, dx, dy) = (
            dwt2_level1(&mix, &f).unwrap(),
            dwt2_level1(&x, &f).unwrap(),
            dwt2_level1(&y, &f).unwrap(),
        );
        for ((m, p), q) in dm.subbands().iter().zip(dx.subbands()).zip(dy.subbands()) {
            let mut expect = (*p).clone();
            expect.scale(a);
            expect.axpy(b, q).unwrap();
            prop_assert!(m.max_abs_diff(&expect) <= 1e-10);
        }
    }

    #[test]
    fn conv_is_linear_in_its_input(a in -2.0f64..2.0, b in -2.0f64..2.0, seed: u64) {
        let w = tensor(&[3, 2, 3, 3], seed);
        let zero = Tensor::zeros(&[3]);
        let x = tensor(&[2, 7, 6], seed ^ 2);
        let y = tensor(&[2, 7, 6], seed ^ 3);
        let mut mix = x.clone();
        mix.scale(a);
        mix.axpy(b, &y).unwrap();
        let mut expect = conv2d(&x, &w, &zero, 1, 1).unwrap();
        expect.scale(a);
        expect.axpy(b, &conv2d(&y, &w, &zero, 1, 1).unwrap()).unwrap();
        prop_assert!(conv2d(&mix, &w, &zero, 1, 1).unwrap().max_abs_diff(&expect) <= 1e-10);
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0,
    ) {
        let z = Tensor::vector(logits);
        let p = softmax(&z);
        prop_assert!(p.data().iter().all(|v| *v >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(p.max_abs_diff(&softmax(&z.map(|v| v + shift))) <= 1e-12);
    }

    #[test]
    fn cross_entropy_is_non_negative(logits in prop::collection::vec(-20.0f64..20.0, 2..8), pick: prop::sample::Index) {
        let k = logits.len();
        let y = pick.index(k);
        let p = softmax(&Tensor::vector(logits));
        let probs = Tensor::new(vec![1, k], p.data().to_vec()).unwrap();
        prop_assert!(cross_entropy(&probs, &[y]).unwrap() >= 0.0);
        let onehot = Tensor::from_fn(&[1, k], |i| (i == y) as u8 as f64);
        prop_assert_eq!(cross_entropy(&onehot, &[y]).unwrap(), 0.0);
    }

    #[test]
    fn adam_is_bit_reproducible(seed: u64) {
        let run = || {
            let mut p = tensor(&[5, 3], seed);
            let mut state = AdamState::new(AdamConfig::default(), [&p]);
            for step in 0..4 {
                let g = tensor(&[5, 3], seed.wrapping_add(step));
                adam_step(&mut [&mut p], &[g], &mut state).unwrap();
            }
            p
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn auc_matches_pair_counting(
        data in prop::collection::vec((0u8..6, any::<bool>()), 2..200),
    ) {
        // few distinct score levels, so ties are common
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
        let positive: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
        prop_assert_eq!(binary_auc(&scores, &positive), common::pair_counting_auc(&scores, &positive));
    }

    #[test]
    fn confusion_rows_sum_to_support(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..100)) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion_matrix(&preds, &labels, 5).unwrap();
        prop_assert_eq!(cm.total(), pairs.len());
        for (c, row) in cm.counts.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|y| **y == c).count());
        }
        for m in per_class_metrics(&cm).unwrap() {
            for v in [m.accuracy, m.precision, m.recall, m.specificity, m.npv, m.f1, m.misclassification] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision + m.recall == 0.0 {
                prop_assert_eq!(m.f1, 0.0);
            }
        }
        prop_assert_eq!(cm.accuracy(), cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn binary_views_are_consistent(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60)) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = per_class_metrics(&confusion_matrix(&preds, &labels, 2).unwrap()).unwrap();
        prop_assert_eq!(m[0].precision, m[1].npv);
        prop_assert_eq!(m[0].recall, m[1].specificity);
        prop_assert_eq!(m[0].accuracy, m[1].accuracy);
    }

    #[test]
    fn report_is_invariant_to_sample_order(
        rows in prop::collection::vec((prop::array::uniform3(0u8..10), 0usize..3), 3..40),
        perm_seed: u64,
    ) {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let build = |rows: &[([u8; 3], usize)]| {
            let scores = Tensor::new(
                vec![rows.len(), 3],
                rows.iter().flat_map(|(s, _)| s.iter().map(|v| *v as f64)).collect(),
            ).unwrap();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            EvaluationReport::from_scores(&scores, &labels, &names).unwrap()
        };
        let mut shuffled = rows.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut common::rng(perm_seed));
        prop_assert_eq!(build(&rows), build(&shuffled));
    }

    #[test]
    fn stratified_split_is_a_balanced_partition(counts in prop::collection::vec(5usize..30, 2..6), seed: u64) {
        let samples: Vec<LabeledSample> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| LabeledSample {
                image: Tensor::zeros(&[1, 1, 1]),
                label: c,
                source: format!("{c}/{i}"),
            }))
            .collect();
        let m = stratified_split(&samples, DEFAULT_RATIOS, seed).unwrap();
        prop_assert_eq!(&m, &stratified_split(&samples, DEFAULT_RATIOS, seed).unwrap());
        let mut ids: Vec<&String> = m.train.iter().chain(&m.validation).chain(&m.test).map(|(id, _)| id).collect();
        ids.sort();
        let before = ids.len();
        ids.dedup();
        prop_assert_eq!(before, ids.len());
        prop_assert_eq!(ids.len(), samples.len());
        for (c, got) in m.class_counts().iter().enumerate() {
            for (part, ratio) in got.iter().zip(DEFAULT_RATIOS) {
                prop_assert!((*part as f64 - ratio * counts[c] as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn augmentation_and_noise_stay_in_range(seed: u64, sigma in 0.0f64..0.5) {
        let s = LabeledSample { image: unit_image(12, seed), label: 0, source: "s".into() };
        let a = augment(&s, &AugmentConfig::default(), &mut stream(seed, "augment", "s", 0));
        let a2 = augment(&s, &AugmentConfig::default(), &mut stream(seed, "augment", "s", 0));
        prop_assert_eq!(&a, &a2);
        for kind in [NoiseKind::Gaussian, NoiseKind::Speckle] {
            let n = seeded_noise(&s, kind, sigma, seed);
            prop_assert_eq!(&n, &seeded_noise(&s, kind, sigma, seed));
            prop_assert!(n.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        prop_assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn calibration_report_round_trips(flags in prop::collection::vec(any::<bool>(), 1..80), gamma in 0.001f64..0.999, fp: u64) {
        let r = CalibrationReport::from_correct(flags.clone(), gamma, fp).unwrap();
        let correct = flags.iter().filter(|f| **f).count();
        prop_assert_eq!(r.a_a, correct as f64 / flags.len() as f64);
        prop_assert_eq!(r.decision == cortinet::adaptive::Decision::StructuralOnly, r.a_a >= gamma);
        prop_assert_eq!(CalibrationReport::from_text(&r.to_text(), Path::new("r")).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradcam_is_structural_and_normalized(seed: u64, class in 0usize..4, masked: bool) {
        let head = if masked { StructuralHead::MaskedFused } else { StructuralHead::Auxiliary };
        let net = small_net(seed, head);
        let image = unit_image(16, seed);
        let map = gradcam(&net, &image, class).unwrap();
        prop_assert!(map.raw.data().iter().all(|v| *v >= 0.0));
        prop_assert!(map.upsampled.data().iter().all(|v| (0.0..=1.0).contains(v)));

        // arbitrary detail-encoder parameters and detail subbands
        let mut other = net.clone();
        let n_detail = other.named_parameters().iter().filter(|(n, _)| n.starts_with("detail")).count();
        let first = other.named_parameters().iter().position(|(n, _)| n.starts_with("detail")).unwrap();
        for (i, p) in other.parameters_mut().into_iter().enumerate().skip(first).take(n_detail) {
            *p = tensor(p.shape(), seed ^ i as u64);
        }
        prop_assert_eq!(&gradcam(&other, &image, class).unwrap(), &map);
        let params = net.as_full().unwrap();
        let mut d = dwt2_level1(&image, &daubechies_filters(2).unwrap()).unwrap();
        let clean = gradcam_structural(params, &d, class).unwrap();
        d.hh = tensor(d.hh.shape(), seed ^ 9);
        d.hl = tensor(d.hl.shape(), seed ^ 10);
        prop_assert_eq!(gradcam_structural(params, &d, class).unwrap(), clean);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed: u64, masked: bool) {
        let head = if masked { StructuralHead::MaskedFused } else { StructuralHead::Auxiliary };
        let net = small_net(seed, head);
        let bytes = to_bytes(&net);
        let back = from_bytes(&bytes, Path::new("x")).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes);
        prop_assert_eq!(back, net);
    }

    #[test]
    fn zero_details_give_zero_detail_gradients(seed: u64) {
        // freshly built: zero biases and betas, identity running statistics
        let net = small_net(seed, StructuralHead::Auxiliary);
        let params = net.as_full().unwrap();
        let inputs: Vec<NetInput> = (0..3)
            .map(|i| NetInput { streams: vec![unit_image(8, seed ^ i), Tensor::zeros(&[3, 8, 8])] })
            .collect();
        let weights = LossWeights { primary: 1.0, structural: 0.0 };
        let g = params.gradients(&inputs, &[0, 1, 2], weights, [BnMode::Train, BnMode::Eval]).unwrap();
        for ((name, _), grad) in net.named_parameters().iter().zip(&g.grads) {
            if name.starts_with("detail") {
                prop_assert!(grad.data().iter().all(|v| *v == 0.0), "{}", name);
            }
        }
    }
}
