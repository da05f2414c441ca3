use cfx_core::analysis::sweep_row;
use cfx_core::io::{write_checkpoint, write_classifier_head, CfeCheckpoint};
use cfx_core::model::{additive_classify, argmax, masked_classify};
use cfx_core::oracle::{min_single_addition, min_sufficient_mask};
use cfx_core::train::synth::{synth_dataset, synth_problem, SynthConfig};
use cfx_core::{train_classifier_head, train_mc, train_mi, FeatureBundle, ImageRecord, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn head_bytes(head: &cfx_core::ClassifierHead) -> Vec<u8> {
    let mut buf = Vec::new();
    write_classifier_head(head, &mut buf).unwrap();
    buf
}

fn window_means(totals: &[f64]) -> (f64, f64) {
    let w = (totals.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&totals[..w]), mean(&totals[totals.len() - w..]))
}

#[test]
fn classifier_and_bundle_stay_frozen() {
    let bundle = synth_dataset(12, 3, 20, 4.0, 5).unwrap();
    let head = train_classifier_head(&bundle, 3, &TrainConfig::classifier_default().with_seed(5)).unwrap();
    let before = (head_bytes(&head), bundle.clone());
    train_mc(&bundle, &head, 1, &TrainConfig::mc_default().with_seed(5)).unwrap();
    train_mi(&bundle, &head, 2, &TrainConfig::mi_default().with_seed(5)).unwrap();
    assert_eq!(head_bytes(&head), before.0);
    assert_eq!(bundle, before.1);
}

#[test]
fn training_is_deterministic() {
    let bundle = synth_dataset(12, 3, 20, 4.0, 7).unwrap();
    let head = train_classifier_head(&bundle, 3, &TrainConfig::classifier_default().with_seed(7)).unwrap();
    let run = || {
        let config = TrainConfig::mc_default().with_seed(7);
        let (mc, report) = train_mc(&bundle, &head, 0, &config).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&CfeCheckpoint::from_mc(&mc, 0, config.lambda, config.epochs), &mut bytes).unwrap();
        (bytes, report)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);

    let (_, other) = train_mc(&bundle, &head, 0, &TrainConfig::mc_default().with_seed(8)).unwrap();
    assert_ne!(other.epochs, a.1.epochs);
}

#[test]
fn loss_descends_on_acceptance_data() {
    let mut cfg = SynthConfig::new(64, 10, 200, 4.0, 0);
    cfg.test_per_class = 0;
    let p = synth_problem(&cfg, &TrainConfig::classifier_default()).unwrap();

    let (_, mc) = train_mc(&p.train, &p.classifier, 3, &TrainConfig::mc_default()).unwrap();
    assert_eq!(mc.epochs.len(), 200);
    let totals: Vec<f64> = mc.epochs.iter().map(|e| e.total).collect();
    let (first, last) = window_means(&totals);
    assert!(last <= first, "MC loss {first} -> {last}");

    let (_, mi) = train_mi(&p.train, &p.classifier, 3, &TrainConfig::mi_default()).unwrap();
    let totals: Vec<f64> = mi.epochs.iter().map(|e| e.total).collect();
    let (first, last) = window_means(&totals);
    assert!(last <= first, "MI loss {first} -> {last}");
}

fn single_image_problem(n: usize, seed: u64) -> (FeatureBundle, cfx_core::ClassifierHead) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = synth_problem(&SynthConfig::new(n, 3, 20, 4.0, seed), &TrainConfig::classifier_default().with_seed(seed)).unwrap();
    let one = p.train.subset(&[rng.random_range(0..p.train.len())]).unwrap();
    (one, p.classifier)
}

// One image means one update per epoch, so these runs use more, larger
// steps. Starting every unit active keeps the needed ones trainable.
fn single_image_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        epochs: 2000,
        ..TrainConfig::mc_default().with_seed(seed)
    }
}

#[test]
fn single_image_mc_mask_is_sufficient_and_not_below_optimum() {
    for seed in 0..10 {
        let (one, classifier) = single_image_problem(8, seed);
        let g = &one.images[0].features;
        let target = one.images[0].inferred_label;
        let config = TrainConfig {
            init_bias: 2.0,
            ..single_image_config(seed)
        };
        let (head, _) = train_mc(&one, &classifier, target, &config).unwrap();
        let mask = head.forward_infer(g).unwrap();
        assert_eq!(masked_classify(g, &mask, &classifier).unwrap().top_class, target, "seed {seed}");
        let best = min_sufficient_mask(g, &classifier, target).unwrap();
        assert_eq!(best.enumerated, 256);
        assert!(mask.iter().sum::<f64>() >= best.objective, "seed {seed}");
    }
}

#[test]
fn single_image_mi_flip_against_closed_form() {
    let mut compared = 0;
    for seed in 0..10 {
        let (one, classifier) = single_image_problem(6, seed);
        let g = one.images[0].features.clone();
        let alter = (one.images[0].inferred_label + 1) % 3;
        let config = TrainConfig {
            lambda: 1.0,
            subset_policy: cfx_core::SubsetPolicy::InferredNotTarget,
            init_bias: 0.1,
            ..single_image_config(seed)
        };
        let (head, _) = train_mi(&one, &classifier, alter, &config).unwrap();
        let a = head.forward(&g).unwrap();
        assert_eq!(additive_classify(&g, &a, &classifier).unwrap().top_class, alter, "seed {seed}");

        // Keep only the largest coordinate of the learned addition.
        let k = argmax(&a);
        let mut single = vec![0.0; a.len()];
        single[k] = a[k];
        let oracle = min_single_addition(&g, &classifier, alter).unwrap();
        if oracle.feasible && additive_classify(&g, &single, &classifier).unwrap().top_class == alter {
            assert!(a[k] >= oracle.objective - 1e-9, "seed {seed}: {} < {}", a[k], oracle.objective);
            assert!(a.iter().sum::<f64>() >= oracle.objective - 1e-9);
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn mi_addition_shrinks_with_lambda() {
    let bundle = synth_dataset(16, 4, 30, 4.0, 2).unwrap();
    let head = train_classifier_head(&bundle, 4, &TrainConfig::classifier_default().with_seed(2)).unwrap();
    let l1 = |lambda: f64| {
        let (_, r) = train_mi(&bundle, &head, 1, &TrainConfig::mi_default().with_seed(2).with_lambda(lambda)).unwrap();
        r.evaluation.mean_addition_l1
    };
    assert!(l1(4.0) <= l1(1.0));
}

#[test]
fn two_gaussian_blobs_are_separated() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut bundle = FeatureBundle::new(2, 2);
    for i in 0..100 {
        let c = i % 2;
        let centre: [f64; 2] = if c == 0 { [3.0, 0.5] } else { [0.5, 3.0] };
        let features = centre.iter().map(|&m| f64::from((m + noise.sample(&mut rng)).max(0.0) as f32)).collect();
        bundle.images.push(ImageRecord {
            true_label: c,
            inferred_label: c,
            features,
            spatial: None,
            source_path: format!("blob/{i}"),
        });
    }
    let head = train_classifier_head(&bundle, 2, &TrainConfig::classifier_default()).unwrap();
    for img in &bundle.images {
        assert_eq!(argmax(&head.logits(&img.features).unwrap()), img.true_label);
    }
    let again = train_classifier_head(&bundle, 2, &TrainConfig::classifier_default()).unwrap();
    assert_eq!(head_bytes(&head), head_bytes(&again));
}

#[test]
fn single_lambda_sweep_row_equals_direct_training() {
    let bundle = synth_dataset(12, 3, 20, 4.0, 4).unwrap();
    let head = train_classifier_head(&bundle, 3, &TrainConfig::classifier_default().with_seed(4)).unwrap();
    let config = TrainConfig::mc_default().with_seed(4);
    let row = sweep_row(&bundle, None, &head, 2, 4.0, &config).unwrap();
    let (_, report) = train_mc(&bundle, &head, 2, &config.clone().with_lambda(4.0)).unwrap();
    assert_eq!(row.train.filters, report.evaluation.mean_filters);
    assert_eq!(row.train.accuracy, report.evaluation.accuracy);
    assert_eq!(row.train.ce, report.evaluation.loss.ce);
    assert!(row.test.is_none());
}
