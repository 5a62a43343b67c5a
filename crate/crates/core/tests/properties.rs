use hcn_core::image::procedural::random_image;
use hcn_core::image::{pyramid_build, pyramid_collapse, synthesize_rain, Image, RainConfig};
use hcn_core::metrics::{self, HistogramKlParams, SsimParams};
use hcn_core::network::{model_init, ModelConfig};
use hcn_core::tensor::kernels::attention_weights;
use hcn_core::tensor::{Shape, Tape, Tensor};
use hcn_core::training::{lr_schedule, TrainConfig};
use proptest::prelude::*;

fn tensor(shape: [usize; 4], values: &[f64]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = values.iter().cycle().take(n).copied().collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn unit_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fold_inverts_unfold_for_disjoint_patches(
        p in 1usize..4, gh in 1usize..4, gw in 1usize..4, c in 1usize..3,
        values in prop::collection::vec(-10.0f64..10.0, 1..64),
    ) {
        let shape = Shape::new(1, c, p * gh, p * gw);
        let x = tensor(shape.0, &values);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let u = tape.unfold_patches(v, p, p).unwrap();
        let f = tape.fold_patches(u, shape, p, p).unwrap();
        prop_assert_eq!(tape.value(f), &x);
    }

    #[test]
    fn attention_rows_are_distributions(
        rows in 1usize..6, keys in 1usize..7, d in 1usize..5,
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let q = tensor([2, 1, rows, d], &values);
        let k = tensor([2, 1, keys, d], &values.iter().rev().copied().collect::<Vec<_>>());
        let w = attention_weights(&q, &k).unwrap();
        for row in w.data().chunks(keys) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn laplacian_round_trip(h in 1usize..5, w in 1usize..5, c in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let img = random_image(4 * w, 4 * h, c, seed);
        let back = pyramid_collapse(&pyramid_build(&img).unwrap()).unwrap();
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(err < 1e-5);
    }

    #[test]
    fn constant_pyramid_has_flat_bands(v in 0.0f32..1.0, h in 1usize..4, w in 1usize..4) {
        let p = pyramid_build(&Image::filled(4 * w, 4 * h, 3, v)).unwrap();
        prop_assert!(p.band_full.data().iter().chain(p.band_half.data()).all(|b| b.abs() < 1e-6));
    }

    #[test]
    fn rain_is_additive_and_non_negative(
        seed in any::<u64>(), count in 0usize..60, angle in -20.0f64..20.0,
        length in 1usize..12, intensity in 0.0f64..1.0,
    ) {
        let clean = random_image(24, 20, 3, seed);
        let cfg = RainConfig { streak_count: count, angle_deg: angle, length_px: length, width_px: 1, intensity, seed };
        let (rainy, rain) = synthesize_rain(&clean, &cfg).unwrap();
        prop_assert!(rain.data().iter().all(|&r| r >= 0.0));
        for ((&o, &b), &r) in rainy.data().iter().zip(clean.data()).zip(rain.data()) {
            prop_assert_eq!(o, (b + r).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in unit_values(192), b in unit_values(192)) {
        let (x, y) = (tensor([1, 3, 8, 8], &a), tensor([1, 3, 8, 8], &b));
        let params = SsimParams::default().fitted(8, 8);
        let score = |p: &Tensor<f64>, q: &Tensor<f64>| {
            let mut tape = Tape::new();
            let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
            let s = metrics::ssim(&mut tape, pv, qv, &params).unwrap();
            tape.value(s).item()
        };
        let (xy, yx) = (score(&x, &y), score(&y, &x));
        prop_assert!((xy - yx).abs() < 1e-9);
        prop_assert!(xy > -1.0 && xy <= 1.0 + 1e-12);
        prop_assert!((score(&x, &x) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kl_is_non_negative(a in unit_values(64), b in unit_values(64)) {
        let mut tape = Tape::new();
        let x = tape.constant(tensor([1, 1, 8, 8], &a));
        let y = tape.constant(tensor([1, 1, 8, 8], &b));
        let params = HistogramKlParams::default();
        let kl = metrics::kl_histogram(&mut tape, x, y, &params).unwrap();
        let same = metrics::kl_histogram(&mut tape, x, x, &params).unwrap();
        prop_assert!(tape.value(kl).item() >= -1e-12);
        prop_assert!(tape.value(same).item().abs() < 1e-9);
    }

    #[test]
    fn collaborative_loss_is_bounded_below(
        a in unit_values(192), b in unit_values(192),
        alphas in prop::collection::vec(0.0f64..2.0, 1..4),
    ) {
        let mut tape = Tape::new();
        let target = tape.constant(tensor([1, 3, 8, 8], &a));
        let pred = tape.constant(tensor([1, 3, 8, 8], &b));
        let preds = vec![pred; alphas.len()];
        let params = SsimParams::default().fitted(8, 8);
        let loss = metrics::loss_collaborative(&mut tape, &preds, target, &alphas, &params).unwrap();
        let exact = vec![target; alphas.len()];
        let best = metrics::loss_collaborative(&mut tape, &exact, target, &alphas, &params).unwrap();
        let floor: f64 = -alphas.iter().sum::<f64>();
        prop_assert!(tape.value(loss).item() >= floor - 1e-9);
        prop_assert!((tape.value(best).item() - floor).abs() < 1e-9);
    }

    #[test]
    fn real_loss_vanishes_on_unchanged_labels(b in unit_values(192), r in unit_values(192), lambda in 0.0f64..1.0) {
        let mut tape = Tape::new();
        let bv = tape.constant(tensor([1, 3, 8, 8], &b));
        let rv = tape.constant(tensor([1, 3, 8, 8], &r));
        let loss = metrics::loss_real(&mut tape, bv, bv, rv, rv, lambda, &HistogramKlParams::default()).unwrap();
        prop_assert!(tape.value(loss).item().abs() < 1e-9);
    }

    #[test]
    fn schedule_never_increases(
        lr in 1e-6f64..1e-1, drops in prop::collection::vec(0usize..200, 0..4), factor in 1.0f64..20.0,
    ) {
        let cfg = TrainConfig { lr, lr_drops: drops, lr_drop_factor: factor, ..TrainConfig::toy() };
        let mut prev = f64::INFINITY;
        for epoch in 0..220 {
            let now = lr_schedule(epoch, &cfg);
            prop_assert!(now <= prev);
            prev = now;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn forward_is_deterministic_and_shape_preserving(seed in any::<u64>(), h in 12usize..26, w in 12usize..26) {
        let cfg = ModelConfig { channels: 3, position_grid: 4, ..ModelConfig::default() };
        let model = model_init(&cfg, seed).unwrap();
        let img = random_image(w, h, 3, seed);
        let a = model.derain(&img).unwrap();
        let b = model.derain(&img).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.same_dims(&img));
    }
}
