//! Detector regression: strongly elongated nuclei are the known hard case
//! for blob-style detection. Fixed-size DoG boxes cannot cover extreme
//! aspect ratios, so AP on an elongated-only corpus must fall well below AP
//! on a round-only corpus of the same density.

use phenotile_core::detect::{dog_detect, pooled_average_precision, DogParams, MatchConfig};
use phenotile_core::stain::StainMatrix;
use phenotile_core::synthgen::{generate_tile, SynthSpec};

fn pooled_ap(spec: &SynthSpec, seeds: std::ops::Range<u64>) -> f64 {
    let matrix = StainMatrix::he_dab();
    let params = DogParams::default();
    let per_image: Vec<_> = seeds
        .map(|seed| {
            let tile = generate_tile(spec, seed).unwrap();
            let dets = dog_detect(&tile.image, &matrix, &params).unwrap();
            (dets, tile.gt_boxes)
        })
        .collect();
    pooled_average_precision(&per_image, &MatchConfig::default())
}

#[test]
fn extreme_elongation_degrades_detection() {
    // Round-only corpus: keep each class's hue band, make every shape round.
    let mut round = SynthSpec::default();
    for style in &mut round.styles {
        style.axis_range = (13.0, 16.0);
        style.ratio_range = (0.85, 1.0);
    }

    // Elongated-only corpus: same hues, extreme aspect ratios.
    let mut elongated = SynthSpec::default();
    for style in &mut elongated.styles {
        style.axis_range = (21.0, 24.0);
        style.ratio_range = (0.22, 0.30);
    }
    elongated.min_separation = 52.0;

    let ap_round = pooled_ap(&round, 500..515);
    let ap_elongated = pooled_ap(&elongated, 500..515);

    assert!(ap_round >= 0.9, "round-nuclei AP {ap_round} unexpectedly low");
    assert!(
        ap_elongated < ap_round - 0.2,
        "elongated AP {ap_elongated} should fall well below round AP {ap_round}"
    );
}
