use proptest::prelude::*;
use ual_core::config::TrainConfig;
use ual_core::cswp::{self, CswpMode, CANVAS, PAD_VALUE};
use ual_core::grid::{BoxTuple, Grid};
use ual_core::metrics::{box_iou, dsc, mask_iou, pixel_accuracy};
use ual_core::objectives::{smooth_l1, smooth_l1_grad};
use ual_core::phantom::{generate_corpus, ClassMix, CorpusSpec};
use ual_core::sweep::SweepKind;
use ual_core::uald;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = Grid> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Grid::from_vec(h, w, bits.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
}

fn box_strategy() -> impl Strategy<Value = BoxTuple> {
    (-10.0..80.0f64, -10.0..80.0f64, 0.6..90.0f64).prop_map(|(cx, cy, side)| BoxTuple { cx, cy, side })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canvas_partitions_into_window_and_sentinel(mask in mask_strategy(40, 48), b in box_strategy()) {
        let c = cswp::integrate(&mask, &b).unwrap();
        let s = c.side();
        prop_assert!((1..=CANVAS).contains(&s));
        let twos = c.values.data.iter().filter(|&&v| v == PAD_VALUE).count();
        let binary = c.values.data.iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        prop_assert_eq!(twos, CANVAS * CANVAS - s * s);
        prop_assert_eq!(binary, s * s);
    }

    #[test]
    fn hard_soft_canvas_equals_exact_crop(mask in mask_strategy(32, 32), b in box_strategy()) {
        let hard = cswp::integrate(&mask, &b).unwrap().values;
        prop_assert_eq!(cswp::integrate_soft(&mask, &b, CswpMode::Hard).unwrap(), hard);
    }

    #[test]
    fn soft_canvas_lies_between_probabilities_and_sentinel(mask in mask_strategy(24, 24), b in box_strategy()) {
        let c = cswp::integrate_soft(&mask, &b, CswpMode::Soft).unwrap();
        prop_assert!(c.data.iter().all(|&v| (0.0..=PAD_VALUE).contains(&v)));
    }

    #[test]
    fn overlap_metrics_are_symmetric_and_bounded(a in mask_strategy(12, 10), b in mask_strategy(12, 10)) {
        let (d, j, p) = (dsc(&a, &b).unwrap(), mask_iou(&a, &b).unwrap(), pixel_accuracy(&a, &b).unwrap());
        prop_assert_eq!(d, dsc(&b, &a).unwrap());
        prop_assert_eq!(j, mask_iou(&b, &a).unwrap());
        for v in [d, j, p] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        // Dice dominates Jaccard: D = 2J / (1 + J).
        prop_assert!(d + 1e-9 >= j);
        prop_assert!((d / 100.0 - 2.0 * (j / 100.0) / (1.0 + j / 100.0)).abs() < 1e-9);
        prop_assert_eq!(dsc(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn box_iou_is_symmetric_and_maximal_on_identity(a in box_strategy(), b in box_strategy()) {
        let v = box_iou(&a, &b);
        prop_assert!((v - box_iou(&b, &a)).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        prop_assert!((box_iou(&a, &a) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn smooth_l1_is_even_convex_and_lipschitz(x in -5.0..5.0f64, y in -5.0..5.0f64) {
        prop_assert_eq!(smooth_l1(x), smooth_l1(-x));
        prop_assert!(smooth_l1(x) >= 0.0);
        prop_assert!(smooth_l1_grad(x).abs() <= 1.0);
        prop_assert!((smooth_l1(x) - smooth_l1(y)).abs() <= (x - y).abs() + 1e-12);
        let m = 0.5 * (x + y);
        prop_assert!(smooth_l1(m) <= 0.5 * (smooth_l1(x) + smooth_l1(y)) + 1e-12);
    }

    #[test]
    fn config_text_round_trips(
        batch in 1usize..9,
        lr in 1e-6..1e-1f64,
        l1 in 0.0..3.0f64,
        seed in any::<u64>(),
        swap in any::<bool>(),
        variant in 0usize..7,
        hard in any::<bool>(),
    ) {
        let mut cfg = SweepKind::Modality.default_variants()[variant].apply(&TrainConfig::default());
        cfg.batch_size = batch;
        cfg.learning_rate = lr;
        cfg.weights.lambda1 = l1;
        cfg.seed = seed;
        cfg.swap_disc_labels = swap;
        cfg.cswp_mode = if hard { CswpMode::Hard } else { CswpMode::Soft };
        prop_assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn uald_round_trips_f32_values(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
        let n: usize = dims.iter().product();
        let values: Vec<f64> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 as f64 / 7.0).map(|v| v as f32 as f64).collect();
        let (d, v) = uald::decode(&uald::encode(&dims, &values), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(d, dims);
        prop_assert_eq!(v, values);
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let corpus = generate_corpus(&CorpusSpec::new(4, 3, 32, 40, ClassMix::default())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    uald::write_dataset(&corpus, dir.path()).unwrap();
    let back = uald::read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), corpus.len());
    for (a, b) in corpus.iter().zip(&back) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.cls, b.cls);
        assert_eq!(a.bbox, b.bbox);
        assert_eq!(a.mask, b.mask);
        let f32_exact = |g: &Grid| g.map(|v| v as f32 as f64);
        assert_eq!(f32_exact(&a.t1), b.t1);
        assert_eq!(f32_exact(&a.cemri_delay), b.cemri_delay);
    }
}
