use super::*;
use crate::error::ForgeError;
use crate::tensor::{Rng, Tensor};

fn random_image(rng: &mut Rng, h: usize, w: usize) -> Tensor<f32> {
    let data = (0..3 * h * w).map(|_| rng.uniform() as f32).collect();
    Tensor::new(&[3, h, w], data).unwrap()
}

#[test]
fn imagenet_normalization_values() {
    let spec = NormalizationSpec::imagenet();
    let img = Tensor::new(&[3, 1, 1], vec![0.485f32, 0.456, 0.406]).unwrap();
    let out = normalize_image(&img, &spec).unwrap();
    assert!(out.data().iter().all(|v| v.abs() < 1e-7));
    let img = Tensor::new(&[3, 1, 1], vec![1.0f32, 0.0, 0.0]).unwrap();
    let out = normalize_image(&img, &spec).unwrap();
    assert!((out.data()[0] as f64 - (1.0 - 0.485) / 0.229).abs() < 1e-6);
    assert!((out.data()[0] - 2.248_908).abs() < 1e-5);
}

#[test]
fn inception_normalization_stays_in_range() {
    let spec = NormalizationSpec::inception();
    let mut rng = Rng::new(0);
    for _ in 0..100_000 {
        let out = normalize_image(&random_image(&mut rng, 2, 2), &spec).unwrap();
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let extremes = Tensor::new(&[3, 1, 2], vec![0.0f32, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let out = normalize_image(&extremes, &spec).unwrap();
    assert_eq!(out.data(), &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
}

#[test]
fn normalization_names() {
    assert_eq!("imagenet".parse::<NormalizationSpec>().unwrap(), NormalizationSpec::imagenet());
    assert_eq!("inception".parse::<NormalizationSpec>().unwrap().name(), "inception");
    assert!(matches!("zca".parse::<NormalizationSpec>(), Err(ForgeError::Config(_))));
    assert!(NormalizationSpec::custom([0.0; 3], [0.0, 1.0, 1.0]).is_err());
}

#[test]
fn flip_is_an_involution() {
    let mut rng = Rng::new(1);
    let img = random_image(&mut rng, 4, 5);
    let once = horizontal_flip(&img, &mut rng, 1.0).unwrap();
    assert_ne!(once.data(), img.data());
    assert_eq!(&once.data()[..5], &[img.data()[4], img.data()[3], img.data()[2], img.data()[1], img.data()[0]]);
    let twice = horizontal_flip(&once, &mut rng, 1.0).unwrap();
    assert_eq!(twice.data(), img.data());
    assert_eq!(horizontal_flip(&img, &mut rng, 0.0).unwrap().data(), img.data());
}

#[test]
fn resize_identity_and_halving() {
    let mut rng = Rng::new(2);
    let img = random_image(&mut rng, 6, 6);
    let same = resize(&img, 6).unwrap();
    for (a, b) in same.data().iter().zip(img.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let half = resize(&img, 3).unwrap();
    // Output pixel (i, j) sits between source pixels 2i, 2i+1 on both axes.
    let src = |c: usize, y: usize, x: usize| img.data()[c * 36 + y * 6 + x] as f64;
    for c in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let want = (src(c, 2 * i, 2 * j) + src(c, 2 * i, 2 * j + 1) + src(c, 2 * i + 1, 2 * j) + src(c, 2 * i + 1, 2 * j + 1)) / 4.0;
                assert!((half.data()[c * 9 + i * 3 + j] as f64 - want).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn full_area_crop_equals_resize() {
    let mut rng = Rng::new(3);
    let img = random_image(&mut rng, 10, 10);
    assert_eq!(crop_resize(&img, 0, 0, 10, 10, 7).unwrap().data(), resize(&img, 7).unwrap().data());
}

#[test]
fn degenerate_sizes_are_contract_errors() {
    let mut rng = Rng::new(4);
    let img = random_image(&mut rng, 4, 4);
    assert!(matches!(resize(&img, 0), Err(ForgeError::Contract(_))));
    assert!(matches!(crop_resize(&img, 2, 2, 3, 3, 4), Err(ForgeError::Contract(_))));
    assert!(matches!(random_resized_crop(&img, 0, &mut rng), Err(ForgeError::Contract(_))));
}

#[test]
fn crop_parameters_stay_in_range() {
    let mut rng = Rng::new(5);
    for _ in 0..2000 {
        let (top, left, h, w) = sample_crop(64, 64, &mut rng);
        assert!(top + h <= 64 && left + w <= 64);
        let area = (h * w) as f64 / 4096.0;
        assert!((0.07..=1.0).contains(&area), "area {area}");
        let aspect = w as f64 / h as f64;
        if h * w < 4096 {
            assert!((0.7..=1.43).contains(&aspect), "aspect {aspect}");
        }
    }
}

#[test]
fn augmentation_is_seed_deterministic_and_eval_is_plain() {
    let mut rng = Rng::new(6);
    let samples = (0..4).map(|i| Sample { image: random_image(&mut rng, 12, 12), label: i % 2 }).collect();
    let data = Dataset::new(samples, 2, Split::Train).unwrap();
    let prep = Preprocess::new(NormalizationSpec::imagenet(), AugmentationSpec::fgvc(8));
    let (a, la) = prep.batch::<f32>(&data, &[0, 1, 2, 3], Some(&mut Rng::new(9))).unwrap();
    let (b, lb) = prep.batch::<f32>(&data, &[0, 1, 2, 3], Some(&mut Rng::new(9))).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(la, lb);
    assert_eq!(a.shape(), &[4, 3, 8, 8]);
    let (e, _) = prep.batch::<f32>(&data, &[2], None).unwrap();
    let plain = normalize_image(&resize(&data.samples[2].image, 8).unwrap(), &NormalizationSpec::imagenet()).unwrap();
    assert_eq!(e.data(), plain.data());
}

#[test]
fn dataset_rejects_out_of_range_labels() {
    let img = Tensor::zeros(&[3, 2, 2]);
    let err = Dataset::new(vec![Sample { image: img, label: 3 }], 3, Split::Train).unwrap_err();
    assert!(matches!(err, ForgeError::Index { .. }));
}

#[test]
fn synthetic_pair_shapes_and_balance() {
    let spec = SynthSpec { n_train: 40, n_val: 10, n_test: 20, ..SynthSpec::default() };
    let pair = synth_transfer_pair(&Rng::new(7), &spec).unwrap();
    for (d, n) in [(&pair.source.train, 40), (&pair.source.val, 10), (&pair.target.test, 20)] {
        assert_eq!(d.len(), n);
        assert_eq!(d.num_classes, 10);
        assert_eq!(d.samples[0].image.shape(), &[3, 32, 32]);
        assert!(d.samples.iter().all(|s| s.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
    let mut counts = [0; 10];
    for l in pair.source.train.labels() {
        counts[l] += 1;
    }
    assert!(counts.iter().all(|&c| c == 4));
    assert_eq!(SynthSpec::default().n_train, 800);
    assert_eq!(SynthSpec::default().n_val, 200);
}

#[test]
fn synthetic_pair_needs_two_classes() {
    let spec = SynthSpec { num_classes: 1, ..SynthSpec::default() };
    assert!(matches!(synth_transfer_pair(&Rng::new(0), &spec), Err(ForgeError::Contract(_))));
}

#[test]
fn zero_shift_keeps_the_source_distribution() {
    assert_eq!(prototypes(6, &Shift::none()), prototypes(6, &Shift::default()));
    let shifted = prototypes(6, &Shift { rotation_deg: 30.0, ..Shift::none() });
    assert_ne!(shifted, prototypes(6, &Shift::none()));
    let spec = SynthSpec { num_classes: 6, n_train: 12, n_val: 6, n_test: 6, shift: Shift::none(), ..SynthSpec::default() };
    let protos = prototypes(6, &spec.shift);
    let a = synth_task(&protos, &spec, &Rng::new(4)).unwrap();
    let b = synth_task(&prototypes(6, &Shift::none()), &spec, &Rng::new(4)).unwrap();
    for (x, y) in a.train.samples.iter().zip(&b.train.samples) {
        assert_eq!(x.image.data(), y.image.data());
        assert_eq!(x.label, y.label);
    }
}

#[test]
fn splits_are_disjoint() {
    let spec = SynthSpec { n_train: 60, n_val: 20, n_test: 20, ..SynthSpec::default() };
    let pair = synth_transfer_pair(&Rng::new(8), &spec).unwrap();
    let key = |s: &Sample| s.image.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut seen = std::collections::HashSet::new();
    for task in [&pair.source, &pair.target] {
        for d in [&task.train, &task.val, &task.test] {
            for s in &d.samples {
                assert!(seen.insert(key(s)), "duplicate image across splits");
            }
        }
    }
}

#[test]
fn linear_probe_on_random_features_beats_chance() {
    use crate::adapter::AdaptedModel;
    use crate::training::{evaluate, fit, TrainConfig, TuneMode};
    use crate::vit::{BackboneConfig, VisionTransformer};
    let bb_cfg = BackboneConfig { image_size: 16, patch_size: 8, hidden_dim: 32, num_layers: 2, num_heads: 2, ffn_expansion: 2, drop_path_max: 0.0 };
    let spec = SynthSpec { num_classes: 4, image_size: 16, n_train: 80, n_val: 8, n_test: 80, ..SynthSpec::default() };
    for seed in 0..3 {
        let mut rng = Rng::new(seed);
        let pair = synth_transfer_pair(&rng.derive(1), &spec).unwrap();
        let bb = VisionTransformer::<f32>::new(bb_cfg.clone(), &mut rng).unwrap();
        let mut model = AdaptedModel::new(bb, None, 4, &mut rng).unwrap();
        let prep = Preprocess::new(NormalizationSpec::inception(), AugmentationSpec::vtab(16));
        let cfg = TrainConfig { mode: TuneMode::Linear, total_epochs: 15, warmup_epochs: 1, batch_size: 16, base_lr: 1e-2, ..TrainConfig::default() };
        fit(&mut model, &pair.source.train, &prep, &cfg, &mut rng).unwrap();
        let acc = evaluate(&model, &pair.source.test, &prep).unwrap();
        assert!(acc > 0.25, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn image_folder_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (class, color) in [("zebra", [255u8, 0, 0]), ("ant", [0, 0, 255])] {
        std::fs::create_dir(root.join(class)).unwrap();
        for i in 0..2 {
            let img = image::RgbImage::from_pixel(3, 2, image::Rgb(color));
            img.save(root.join(class).join(format!("{i}.png"))).unwrap();
        }
    }
    std::fs::create_dir(root.join("empty")).unwrap();
    let loaded = load_image_folder(root, Split::Train).unwrap();
    assert_eq!(loaded.classes, vec!["ant", "empty", "zebra"]);
    assert_eq!(loaded.empty_classes, vec!["empty"]);
    assert_eq!(loaded.dataset.len(), 4);
    let first = &loaded.dataset.samples[0];
    assert_eq!(first.label, 0);
    assert_eq!(first.image.shape(), &[3, 2, 3]);
    assert_eq!(&first.image.data()[12..], &[1.0; 6]);
    assert_eq!(loaded.dataset.samples[3].label, 2);

    std::fs::write(root.join("zebra").join("broken.png"), b"not a png").unwrap();
    let err = load_image_folder(root, Split::Train).unwrap_err();
    assert!(matches!(&err, ForgeError::Ingest { path, .. } if path.ends_with("broken.png")), "{err}");
}

#[test]
fn decorrelated_classes_vary_in_color() {
    let mean_rgb = |p: &Prototype, seed: u64| {
        let img = render(p, 16, 0.0, &mut Rng::new(seed));
        let d = img.data();
        let m = [0, 1, 2].map(|c| d[c * 256..(c + 1) * 256].iter().map(|&v| v as f64).sum::<f64>() / 256.0);
        let gray = m.iter().sum::<f64>() / 3.0;
        m.map(|v| v - gray)
    };
    let spread = |shift: Shift| {
        let p = prototypes(4, &shift)[1];
        let colors: Vec<[f64; 3]> = (0..20).map(|s| mean_rgb(&p, s)).collect();
        (0..3)
            .map(|c| {
                let (lo, hi) = colors.iter().fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x[c]), hi.max(x[c])));
                hi - lo
            })
            .fold(0.0, f64::max)
    };
    let fixed = Shift { decorrelate: false, ..SynthSpec::default().shift };
    let free = Shift { decorrelate: true, ..fixed };
    assert!(!free.is_zero());
    assert!(spread(free) > 2.0 * spread(fixed), "{} vs {}", spread(free), spread(fixed));
}
