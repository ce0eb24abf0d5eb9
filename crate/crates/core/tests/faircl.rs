use fairtab::cvae::{CounterfactualGenerator, GeneratorConfig};
use fairtab::faircl::{
    fair_contrastive_loss, fit_encoder_stack, swd, swd_with, tabmix, Augmentation, EncoderConfig, EncoderSnapshot,
    EncoderStack, MixLayout, MixMask, PriorSpec, Representation, StackArchitecture, SwdDraw,
};
use fairtab::neural::{checkpoint, Matrix};
use fairtab::tabular::{synth_generate, FeatureEncoder, FitOptions};
use ndarray::{array, Array1};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sorted-matching oracle for one direction: mean squared gap between the
/// order statistics of two equal-size samples.
fn sorted_gap(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[test]
fn swd_matches_sorted_matching_per_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sample = Matrix::from_shape_simple_fn((30, 3), || rng.random_range(-2.0..2.0));
    let draw = PriorSpec { n_projections: 7 }.draw(30, 3, &mut rng);
    let mut want = 0.0;
    for k in 0..7 {
        let d = draw.directions.column(k);
        want += sorted_gap(sample.dot(&d).to_vec(), draw.prior.dot(&d).to_vec());
    }
    want /= 7.0;
    assert!((swd_with(&sample, &draw).unwrap() - want).abs() < 1e-12);
}

#[test]
fn one_dimensional_hand_cases() {
    let unit = |prior: Matrix| SwdDraw {
        directions: array![[1.0]],
        prior,
    };
    // {0, 3} vs {1, 1}: gaps 1 and 2
    assert!((swd_with(&array![[3.0], [0.0]], &unit(array![[1.0], [1.0]])).unwrap() - 2.5).abs() < 1e-15);
    // a shift by c costs c²
    assert!((swd_with(&array![[1.5], [-0.5], [4.0]], &unit(array![[1.0], [-1.0], [3.5]])).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn sample_against_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = Matrix::from_shape_simple_fn((64, 5), || rng.random_range(-1.0..1.0));
    let mut draw = PriorSpec { n_projections: 50 }.draw(64, 5, &mut rng);
    draw.prior = s.clone();
    assert_eq!(swd_with(&s, &draw).unwrap(), 0.0);
}

#[test]
fn prior_samples_are_close_to_the_prior() {
    let prior = PriorSpec { n_projections: 50 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mean = (0..20)
        .map(|_| swd(&prior.sample(4096, 8, &mut rng), &prior, &mut rng).unwrap())
        .sum::<f64>()
        / 20.0;
    assert!(mean < 0.05, "{mean}");
}

#[test]
fn shifted_sample_is_far_from_the_prior() {
    let prior = PriorSpec { n_projections: 50 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = prior.sample(2048, 4, &mut rng) + 3.0;
    assert!(swd(&s, &prior, &mut rng).unwrap() > 1.0);
}

fn layout_strategy() -> impl Strategy<Value = MixLayout> {
    (1usize..4, prop::collection::vec(1usize..4, 1..9), 0usize..9).prop_map(|(groups, widths, at)| {
        let at = at.min(widths.len());
        let mut columns = Vec::new();
        let mut pos = 0;
        let mut sensitive = 0..0;
        for (i, w) in widths.iter().enumerate() {
            if i == at {
                sensitive = pos..pos + groups + 1;
                pos = sensitive.end;
            }
            columns.push(pos..pos + w);
            pos += w;
        }
        if at == widths.len() {
            sensitive = pos..pos + groups + 1;
            pos = sensitive.end;
        }
        MixLayout {
            width: pos,
            sensitive,
            continuous: widths.iter().map(|&w| w == 1).collect(),
            columns,
        }
    })
}

proptest! {
    #[test]
    fn tabmix_replaces_half_the_columns_whole(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = Array1::from_shape_fn(layout.width, |j| j as f64);
        let partner = Array1::from_shape_fn(layout.width, |j| -1.0 - j as f64);
        let mask = MixMask::sample(&layout, &mut rng);
        prop_assert!(mask.validate(&layout).is_ok());
        let out = tabmix(anchor.view(), partner.view(), &mask, &layout).unwrap();
        let mut replaced = 0;
        for span in &layout.columns {
            let from_partner = out[span.start] < 0.0;
            for j in span.clone() {
                prop_assert_eq!(out[j], if from_partner { partner[j] } else { anchor[j] });
            }
            replaced += usize::from(from_partner);
        }
        prop_assert_eq!(replaced, layout.columns.len().div_ceil(2));
        for j in layout.sensitive.clone() {
            prop_assert_eq!(out[j], anchor[j]);
        }
    }

    #[test]
    fn augmentations_never_touch_the_group(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = Array1::from_shape_fn(layout.width, |j| 1.0 + j as f64);
        let partner = Array1::from_shape_fn(layout.width, |j| -1.0 - j as f64);
        for aug in [Augmentation::TabMix, Augmentation::Gaussian, Augmentation::Dropout] {
            let out = aug.apply(anchor.view(), partner.view(), &layout, &mut rng).unwrap();
            for j in layout.sensitive.clone() {
                prop_assert_eq!(out[j], anchor[j]);
            }
        }
    }
}

#[test]
fn mixed_group_batch_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let arch = StackArchitecture {
        hidden: 8,
        embed_dim: 4,
    };
    let stack = EncoderStack::new(5, &arch, &mut rng).unwrap();
    let x = Matrix::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
    let prior = PriorSpec { n_projections: 5 };
    assert!(fair_contrastive_loss(&stack, &x, &[0, 0, 1, 0], &x, &prior, &mut rng).is_err());
    let same = fair_contrastive_loss(&stack, &x, &[1; 4], &x, &prior, &mut rng).unwrap();
    assert!(same.is_finite() && same >= 0.0);
}

fn small_generator(ds: &fairtab::tabular::Dataset) -> CounterfactualGenerator {
    let cfg = GeneratorConfig {
        epochs: 20,
        hidden: 16,
        latent_dim: 4,
        max_modes: 3,
        ..Default::default()
    };
    CounterfactualGenerator::fit(ds, &cfg).unwrap().0
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        epochs: 6,
        hidden: 16,
        embed_dim: 4,
        snapshots: 3,
        n_projections: 10,
        batch_size: 64,
        ..Default::default()
    }
}

#[test]
fn encoder_training_is_deterministic_and_keeps_the_last_epochs() {
    let ds = synth_generate(400, 2.0, 1).unwrap();
    let gen = small_generator(&ds);
    let cfg = small_encoder();
    let a = fit_encoder_stack(&ds, &gen, &cfg).unwrap();
    let b = fit_encoder_stack(&ds, &gen, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.snapshots.iter().map(|s| s.epoch).collect::<Vec<_>>(), vec![4, 5, 6]);
    assert_eq!(a.history.len(), 6);
    for e in &a.history {
        assert!(e.total.is_finite() && e.swd >= 0.0 && e.align >= 0.0);
        assert!(e.self_kd >= -1.0 && e.self_kd <= 1.0);
    }
    let c = fit_encoder_stack(&ds, &gen, &EncoderConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn disabled_terms_are_recorded_as_zero() {
    let ds = synth_generate(200, 1.0, 3).unwrap();
    let gen = small_generator(&ds);
    let mut cfg = small_encoder();
    cfg.epochs = 2;
    cfg.toggles.align = false;
    cfg.toggles.self_kd = false;
    let run = fit_encoder_stack(&ds, &gen, &cfg).unwrap();
    assert!(run.history.iter().all(|e| e.align == 0.0 && e.self_kd == 0.0 && e.swd > 0.0));
    cfg.toggles.distribution = false;
    assert!(fit_encoder_stack(&ds, &gen, &cfg).is_err());
}

#[test]
fn snapshot_serves_the_configured_representation() {
    let ds = synth_generate(200, 1.0, 4).unwrap();
    let gen = small_generator(&ds);
    let mut cfg = small_encoder();
    cfg.epochs = 1;
    cfg.snapshots = 1;
    let snap = fit_encoder_stack(&ds, &gen, &cfg).unwrap().last().clone();
    let x = FeatureEncoder::fit(&ds, FitOptions::encoder_path()).unwrap().encode(&ds).unwrap().matrix;
    assert_eq!(snap.embed(&x).unwrap(), snap.stack.contrastive_embed(&x).unwrap());
    let proj = EncoderSnapshot {
        representation: Representation::Projection,
        ..snap.clone()
    };
    assert_eq!(proj.embed(&x).unwrap(), snap.stack.embed(&x).unwrap());
    assert!(snap.embed(&x.slice(ndarray::s![.., 1..]).to_owned()).is_err());

    let text = checkpoint::to_string(&snap).unwrap();
    let back: EncoderSnapshot = checkpoint::from_str(&text).unwrap();
    assert_eq!(back, snap);
    assert!(checkpoint::from_str::<fairtab::cvae::CounterfactualGenerator>(&text).is_err());
}
