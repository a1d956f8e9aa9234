mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waypart::loop_model::{merge_nest_attributes, FootprintValue, ReuseClass};
use waypart::sensitivity::{compute_alpha, detect_max_ways, PhaseTiming, ProbeAttributes, WayTimeCurve};

#[test]
fn alpha_matches_the_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let pts = common::random_monotone_curve(&mut rng, 11);
        let curve = WayTimeCurve::new(pts.clone()).unwrap();
        let m = detect_max_ways(&curve, 0.05);
        let direct = common::alpha_by_definition(&pts, m);
        let alpha = compute_alpha(&curve, m).unwrap();
        assert!((alpha - direct).abs() <= 1e-12 * direct.max(1.0), "{alpha} vs {direct}");
    }
}

#[test]
fn flat_curves_saturate_at_two() {
    for t in [0.5, 1.0, 7.25] {
        let curve = WayTimeCurve::new((2..=11).map(|w| (w, t))).unwrap();
        assert_eq!(detect_max_ways(&curve, 0.05), 2);
        assert_eq!(compute_alpha(&curve, 2).unwrap(), 0.0);
    }
}

fn attrs(seed: u64) -> ProbeAttributes {
    let bytes = 64 * (seed % 1000 + 1);
    ProbeAttributes {
        phase_id: format!("p{seed}"),
        footprint: FootprintValue { bytes, lines: bytes / 64, exact: !seed.is_multiple_of(3) },
        reuse: if seed.is_multiple_of(2) { ReuseClass::Reuse } else { ReuseClass::Stream },
        timing: PhaseTiming::Fixed { ns: 1e6 },
        alpha: (seed % 17) as f64 / 4.0,
        max_ways: 2 + (seed % 9) as u32,
    }
}

proptest! {
    #[test]
    fn max_ways_shrinks_as_epsilon_grows(seed in any::<u64>(), e1 in 0.001f64..0.5, e2 in 0.001f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = WayTimeCurve::new(common::random_monotone_curve(&mut rng, 11)).unwrap();
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        prop_assert!(detect_max_ways(&curve, hi) <= detect_max_ways(&curve, lo));
    }

    #[test]
    fn alpha_grows_with_max_ways(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curve = WayTimeCurve::new((2..=11).map(|w| (w, 10.0 - w as f64 * rand::Rng::gen_range(&mut rng, 0.0..0.5)))).unwrap();
        let alphas: Vec<f64> = (2..=11).map(|m| compute_alpha(&curve, m).unwrap()).collect();
        prop_assert!(alphas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn merging_a_merge_changes_nothing(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let all = merge_nest_attributes(&[attrs(a), attrs(b), attrs(c)]).unwrap();
        let staged = merge_nest_attributes(&[merge_nest_attributes(&[attrs(a), attrs(b)]).unwrap(), attrs(c)]).unwrap();
        prop_assert_eq!(&all, &staged);
        prop_assert_eq!(merge_nest_attributes(std::slice::from_ref(&all)).unwrap(), all);
    }
}
