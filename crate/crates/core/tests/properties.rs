//! Property tests over the geometric and probabilistic invariants.

use proptest::prelude::*;

use phenotile_core::classify::PosteriorVector;
use phenotile_core::detect::{
    binary_cross_entropy, focal_loss, iou, postprocess, BBox, Detection, FocalParams, MatchConfig,
};
use phenotile_core::imgcore::{augment_geometric, reflect_index, split_tiles, AugmentSpec, Image, TileGrid};

fn arb_bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..500.0, 0.0f64..500.0, 1.0f64..80.0, 1.0f64..80.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    (arb_bbox(), 0.0f64..=1.0).prop_map(|(b, s)| Detection::new(b, s).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_reflexive(a in arb_bbox(), b in arb_bbox()) {
        let ab = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn postprocess_invariants(
        dets in prop::collection::vec(arb_detection(), 0..60),
        threshold in 0.0f64..1.0,
        nms_iou in 0.05f64..0.95,
    ) {
        let cfg = MatchConfig { iou_threshold: 0.5, max_detections: 25 };
        let kept = postprocess(&dets, threshold, &cfg, nms_iou);
        prop_assert!(kept.len() <= cfg.max_detections);
        for pair in kept.windows(2) {
            prop_assert!(pair[0].score >= pair[1].score);
        }
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(a.score >= threshold);
            prop_assert!(dets.contains(a));
            for b in kept.iter().skip(i + 1) {
                prop_assert!(iou(&a.bbox, &b.bbox) <= nms_iou);
            }
        }
    }

    #[test]
    fn reflect_index_lands_in_range(i in -10_000i64..10_000, n in 1i64..500) {
        let r = reflect_index(i, n);
        prop_assert!((0..n).contains(&r));
        // In-range indices are fixed points.
        if (0..n).contains(&i) {
            prop_assert_eq!(r, i);
        }
    }

    #[test]
    fn focal_loss_is_bounded_by_cross_entropy(p in 0.001f64..0.999, gamma in 0.0f64..5.0) {
        let fp = FocalParams { alpha: 1.0, gamma };
        for y in [false, true] {
            prop_assert!(focal_loss(p, y, &fp) <= binary_cross_entropy(p, y) + 1e-12);
            prop_assert!(focal_loss(p, y, &fp) >= 0.0);
        }
    }

    #[test]
    fn softmax_posterior_is_a_distribution(logits in prop::array::uniform5(-30.0f64..30.0)) {
        let p = PosteriorVector::from_logits(logits);
        let sum: f64 = p.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tile_split_covers_floor_area(
        w in 8u32..200, h in 8u32..200, tw in 4u32..40, th in 4u32..40,
    ) {
        prop_assume!(tw <= w && th <= h);
        let img = Image::filled(w, h, [1, 2, 3]);
        let tiles = split_tiles(&img, &TileGrid { tile_width: tw, tile_height: th }).unwrap();
        prop_assert_eq!(tiles.len() as u32, (w / tw) * (h / th));
        let area: u64 = tiles.iter().map(|(o, _)| o.width as u64 * o.height as u64).sum();
        prop_assert_eq!(area, (w / tw) as u64 * (h / th) as u64 * tw as u64 * th as u64);
    }

    #[test]
    fn flips_are_involutions(seed in 0u64..50, hflip in any::<bool>(), vflip in any::<bool>()) {
        let mut rng = phenotile_core::rng::seeded_rng(seed);
        use rand::Rng;
        let data: Vec<u8> = (0..16 * 12 * 3).map(|_| rng.gen()).collect();
        let img = Image::from_raw(16, 12, data).unwrap();
        let spec = AugmentSpec { hflip, vflip, ..Default::default() };
        let twice = augment_geometric(&augment_geometric(&img, &spec), &spec);
        prop_assert_eq!(twice, img);
    }
}
