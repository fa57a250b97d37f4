use localtime_lab::convexcalc::{Anchor, ConvexCombo, SmoothTerm};
use localtime_lab::localtime::{band_local_time, tanaka_local_time, BandConfig};
use localtime_lab::occupation::{occupation_histogram, occupation_time, IntervalUnion, OccupationWeight};
use localtime_lab::paths::{wiener_path, SamplePath, TimeGrid};
use localtime_lab::reflection::{skorohod_map, verify_skorohod};
use localtime_lab::timechange::{build_time_change, ClockDensity};
use localtime_lab::verify::{ks_two_sample, minimal_staircase, EmpiricalDistribution};
use proptest::prelude::*;

fn walk(steps: &[f64]) -> SamplePath {
    let mut x = vec![0.0];
    for s in steps {
        x.push(x[x.len() - 1] + s);
    }
    SamplePath::new(TimeGrid::new(1.0, steps.len()).unwrap(), x).unwrap()
}

fn steps(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn skorohod_regulator_is_the_minimal_staircase(s in steps(20)) {
        let p = walk(&s);
        let pair = skorohod_map(&p).unwrap();
        prop_assert_eq!(minimal_staircase(p.values()).unwrap(), pair.f().values().to_vec());
        prop_assert!(verify_skorohod(&pair, pair.grid_tolerance()).passed());
        let again = skorohod_map(pair.z()).unwrap();
        prop_assert_eq!(again.z().values(), pair.z().values());
        prop_assert!(again.f().values().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn feasible_staircases_dominate_the_regulator(s in steps(60), bumps in prop::collection::vec(0.0f64..0.3, 60)) {
        let p = walk(&s);
        let pair = skorohod_map(&p).unwrap();
        let mut g = 0.0_f64;
        for (k, (&x, &f)) in p.values().iter().zip(pair.f().values()).enumerate() {
            if k > 0 {
                g += bumps[k - 1];
            }
            g = g.max(-x);
            prop_assert!(g >= f);
        }
    }

    #[test]
    fn occupation_is_additive_over_disjoint_sets(s in steps(200), a in -1.0f64..0.0, w1 in 0.01f64..1.0, gap in 0.0f64..0.5, w2 in 0.01f64..1.0) {
        let p = walk(&s);
        let (b, c) = (a + w1, a + w1 + gap);
        let d = c + w2;
        for weight in [OccupationWeight::Lebesgue, OccupationWeight::QuadraticVariation] {
            let left = occupation_time(&p, &IntervalUnion::interval(a, b).unwrap(), weight, 1.0).unwrap();
            let right = occupation_time(&p, &IntervalUnion::interval(c, d).unwrap(), weight, 1.0).unwrap();
            let both = occupation_time(&p, &IntervalUnion::new(vec![(a, b), (c, d)]).unwrap(), weight, 1.0).unwrap();
            prop_assert!((both - left - right).abs() <= 1e-12 * (1.0 + both.abs()));
        }
    }

    #[test]
    fn histogram_mass_is_the_total_weight_inside_the_edges(s in steps(200)) {
        let p = walk(&s);
        let edges: Vec<f64> = (0..=80).map(|k| -200.0 + 5.0 * k as f64).collect();
        let h = occupation_histogram(&p, &edges, OccupationWeight::Lebesgue).unwrap();
        prop_assert!((h.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_local_time_is_nonnegative_and_nondecreasing(s in steps(300), x in -2.0f64..2.0, eps in 0.01f64..0.5) {
        let p = walk(&s);
        let band = BandConfig::new(eps).unwrap();
        for weight in [OccupationWeight::Lebesgue, OccupationWeight::QuadraticVariation] {
            let l = band_local_time(&p, x, &band, weight);
            prop_assert_eq!(l.values()[0], 0.0);
            prop_assert!(l.values().windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn tanaka_vanishes_without_crossings(s in prop::collection::vec(0.0f64..1.0, 1..100), a in -3.0f64..-0.001) {
        let p = walk(&s);
        let l = tanaka_local_time(&p, a);
        prop_assert!(l.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn left_derivative_differences_are_the_measure(
        amp in 0.0f64..3.0, center in -1.0f64..1.0, width in 0.05f64..2.0,
        atom in -1.0f64..1.0, mass in 0.0f64..2.0,
        x in -2.0f64..2.0, dx in 0.0f64..2.0,
    ) {
        let f = ConvexCombo::new(
            vec![SmoothTerm::GaussianBump { amplitude: amp, center, width }, SmoothTerm::Constant(0.5)],
            vec![(atom, mass)],
            Anchor { x0: 0.2, value: -1.0, left_derivative: 0.4 },
        ).unwrap();
        let y = x + dx;
        let lhs = f.eval_left_derivative(y) - f.eval_left_derivative(x);
        prop_assert!((lhs - f.measure(x, y)).abs() < 1e-10);
        // convex input: remainders are nonnegative
        prop_assert!(f.step_remainder(x, y) >= -1e-12);
        prop_assert!(f.step_remainder(y, x) >= -1e-12);
    }

    #[test]
    fn combine_is_linear_pointwise(alpha in -2.0f64..2.0, beta in -2.0f64..2.0, a in -1.0f64..1.0, x in -3.0f64..3.0) {
        let f1 = ConvexCombo::absolute_value(a);
        let f2 = ConvexCombo::square();
        let g = ConvexCombo::combine(alpha, &f1, beta, &f2);
        let expect = alpha * f1.eval_f(x) + beta * f2.eval_f(x);
        prop_assert!((g.eval_f(x) - expect).abs() < 1e-10);
    }

    #[test]
    fn two_sample_ks_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 2..50),
        b in prop::collection::vec(-5.0f64..5.0, 2..50),
    ) {
        let ea = EmpiricalDistribution::new(a).unwrap();
        let eb = EmpiricalDistribution::new(b).unwrap();
        let ab = ks_two_sample(&ea, &eb, 0.01).statistic;
        let ba = ks_two_sample(&eb, &ea, 0.01).statistic;
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ks_two_sample(&ea, &ea, 0.01).statistic, 0.0);
    }

    #[test]
    fn time_change_round_trips(seed in 0u64..1000, c in 0.3f64..3.0, k in 0.0f64..1.0) {
        let p = wiener_path(TimeGrid::new(1.0, 512).unwrap(), seed, 0);
        let map = build_time_change(&p, &ClockDensity::new(move |x: f64| c + 0.2 * x.sin())).unwrap();
        let t = k * map.max_attained();
        let s = map.forward(t);
        prop_assert!((map.measured(s) - t).abs() <= 2.0 * map.max_attained() / 512.0);
        prop_assert!(map.clock().windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn same_seed_same_path_distinct_replicates_differ() {
    let g = TimeGrid::new(1.0, 1000).unwrap();
    assert_eq!(wiener_path(g, 5, 3).values(), wiener_path(g, 5, 3).values());
    assert_ne!(wiener_path(g, 5, 3).values(), wiener_path(g, 5, 4).values());
    assert_ne!(wiener_path(g, 5, 3).values(), wiener_path(g, 6, 3).values());
}
