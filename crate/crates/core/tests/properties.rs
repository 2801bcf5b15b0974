use hcount::arithmetic::{build_r2q_prefix, chi4, isqrt_u128, r2, r2_weighted, r2_weighted_chi};
use hcount::distribution::component_law;
use hcount::empirical::{
    empirical_lambda_moment, histogram, ks_distance_with, SampleSeries, SampleStats,
};
use hcount::lattice::{count_points, count_points_bruteforce, GroupParams, Radius};
use hcount::moments::power_mean;
use hcount::numeric::pairwise_sum;
use hcount::phi::{phi, tail_bound_for, PhiSeries, PhiTruncation};
use hcount::voronoi::{coeff_ah, coeff_ah_chi};
use num_complex::Complex64;
use proptest::prelude::*;

/// m square-free with no prime factor 3 mod 4, so phi_{q,m} does not vanish.
fn live_m() -> impl Strategy<Value = u64> {
    prop::sample::select(vec![1u64, 2, 5, 10, 13, 17, 26, 29, 34, 37, 41])
}

fn thresholds(x: &Radius) -> Vec<u128> {
    let top = x.floor_x2() as u128;
    let (a, b) = (x.num as u128 * x.num as u128, x.den as u128 * x.den as u128);
    (0..=top)
        .map(|w| isqrt_u128(a - w * w * b) / x.den as u128)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_counts_are_ordered(m in 1u64..5000, d in 1u64..40, q in 3u32..7) {
        let full = r2_weighted(m, 1, q);
        let part = r2_weighted(m, d, q);
        prop_assert!(part >= 0.0 && part <= full + 1e-12);
        prop_assert!(full <= r2(m) as f64 + 1e-12);
        prop_assert!(r2_weighted_chi(m, d, q).abs() <= part + 1e-12);
    }

    #[test]
    fn scaling_laws(m in 1u64..2000, d in 1u64..12, s in 1u64..8, q in 3u32..7) {
        prop_assert_eq!(r2_weighted(m * s * s, d * s, q), r2_weighted(m, d, q));
        prop_assert_eq!(r2_weighted_chi(m * s * s, d * s, q), chi4(s as i64) as f64 * r2_weighted_chi(m, d, q));
    }

    #[test]
    fn isqrt_is_floor(n in any::<u128>()) {
        let r = isqrt_u128(n);
        prop_assert!(r * r <= n);
        prop_assert!((r + 1).checked_mul(r + 1).is_none_or(|s| s > n));
    }

    #[test]
    fn radius_display_round_trips(num in 1u64..1_000_000, den in 1u64..1000) {
        let x = Radius::from_square(num, den).unwrap();
        prop_assert_eq!(x.to_string().parse::<Radius>().unwrap(), x);
    }

    #[test]
    fn counts_match_brute_force(p in 1u64..24, r in 1u64..12) {
        prop_assume!(p * p <= 4 * r * r);
        let x = Radius::from_ratio(p, r).unwrap();
        let params = GroupParams::new(3).unwrap();
        let t = build_r2q_prefix(3, 4).unwrap();
        prop_assert_eq!(count_points(&params, &t, &x).unwrap(), count_points_bruteforce(3, &x).unwrap());
    }

    #[test]
    fn counts_grow_with_radius(a in 1u64..4000, b in 1u64..4000, den in 1u64..200) {
        let params = GroupParams::new(4).unwrap();
        let t = build_r2q_prefix(4, 100).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let x = Radius::from_square(lo, den).unwrap();
        let y = Radius::from_square(hi, den).unwrap();
        prop_assume!(y.floor_x2() <= 100);
        prop_assert!(count_points(&params, &t, &x).unwrap() <= count_points(&params, &t, &y).unwrap());
    }

    #[test]
    fn counts_depend_only_on_thresholds(num in 1u64..5000, den in 1u64..100, bump in 1u64..50) {
        let params = GroupParams::new(3).unwrap();
        let t = build_r2q_prefix(3, 100).unwrap();
        let x = Radius::from_square(num * 1000, den * 1000).unwrap();
        let y = Radius::from_square(num * 1000 + bump, den * 1000).unwrap();
        prop_assume!(y.floor_x2() <= 100);
        let same = thresholds(&x) == thresholds(&y);
        let cx = count_points(&params, &t, &x).unwrap();
        let cy = count_points(&params, &t, &y).unwrap();
        if same {
            prop_assert_eq!(cx, cy);
        } else {
            prop_assert!(cx <= cy);
        }
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers(v in prop::collection::vec(-1_000_000i64..1_000_000, 0..3000)) {
        let xs: Vec<f64> = v.iter().map(|&i| i as f64).collect();
        prop_assert_eq!(pairwise_sum(&xs), v.iter().sum::<i64>() as f64);
    }

    #[test]
    fn chi_coefficient_is_dominated(m in 1u64..400, d in 1u64..6, h in 5.0f64..60.0) {
        let a = coeff_ah(m, d, 3, h);
        prop_assert!(a >= 0.0);
        prop_assert!(coeff_ah_chi(m, d, 3, h).abs() <= 2.0 * a + 1e-12);
    }
}

#[test]
fn chi_coefficient_can_exceed_the_plain_one() {
    // 53 = 2^2 + 7^2: chi kills the n = 2 side and the leading factor 2 is not compensated
    let (a, c) = (coeff_ah(53, 1, 3, 36.8), coeff_ah_chi(53, 1, 3, 36.8));
    assert!(c.abs() > 1.8 * a && c.abs() <= 2.0 * a, "{c} {a}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truncation_certificate(m in live_m(), q in 3u32..6, d in 2u32..6, k in 2u32..6, t in 0.0f64..1e4) {
        let lo = PhiTruncation::new(q, m, d, k).unwrap();
        let hi = PhiTruncation::new(q, m, 4 * d, 4 * k).unwrap();
        let gap = (phi(q, m, t, &hi).unwrap() - phi(q, m, t, &lo).unwrap()).abs();
        prop_assert!(gap <= lo.tail_bound, "{} > {}", gap, lo.tail_bound);
        prop_assert_eq!(tail_bound_for(q, m, d, k).unwrap(), lo.tail_bound);
    }

    #[test]
    fn series_is_periodic(m in live_m(), q in 3u32..6, d in 1u32..8, k in 1u32..8, t in 0.0f64..100.0) {
        let s = PhiSeries::resummed(q, m, d, k).unwrap();
        let p = s.period().unwrap() as f64;
        prop_assert!((s.eval(t + p) - s.eval(t)).abs() <= 1e-9 * (1.0 + s.abs_sum()));
    }

    #[test]
    fn low_power_means(m in live_m(), q in 3u32..6, d in 1u32..8, k in 1u32..8) {
        let s = PhiSeries::resummed(q, m, d, k).unwrap();
        let scale = s.abs_sum().max(1.0);
        prop_assert!(power_mean(&s, 1).unwrap().abs() <= 1e-12 * scale);
        let ms = s.mean_square();
        prop_assert!((power_mean(&s, 2).unwrap() - ms).abs() <= 1e-12 * scale * scale);
        prop_assert!(ms >= 0.0);
    }

    #[test]
    fn component_averages_are_bounded(m in live_m(), sigma in -3.0f64..3.0) {
        let law = component_law(3, m, 4, 6, &[0.1, 1.0]).unwrap();
        let z = law.char_value(Complex64::new(sigma, 0.0));
        let w = law.char_value(Complex64::new(-sigma, 0.0));
        prop_assert!(z.norm() <= 1.0 + 1e-12);
        prop_assert!((z - w.conj()).norm() <= 1e-12);
    }

    #[test]
    fn sample_statistics(v in prop::collection::vec(-30.0f64..30.0, 1..500), l1 in 0.1f64..2.0, l2 in 0.1f64..2.0) {
        let s = SampleSeries { q: 3, x_lo: (1, 1), n: v.len(), xs: vec![0.0; v.len()], stats: SampleStats::of(&v), errors: v.clone() };
        let (a, b) = (l1.min(l2), l1.max(l2));
        let ma = empirical_lambda_moment(&s, a).unwrap().powf(1.0 / a);
        let mb = empirical_lambda_moment(&s, b).unwrap().powf(1.0 / b);
        prop_assert!(ma <= mb * (1.0 + 1e-12) + 1e-300);
        let h = histogram(&v, None).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>(), v.len() as u64);
        let ks = ks_distance_with(&s, |x| ((x + 30.0) / 60.0).clamp(0.0, 1.0));
        prop_assert!((0.0..=1.0).contains(&ks));
    }
}
