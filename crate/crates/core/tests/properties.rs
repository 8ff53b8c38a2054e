use aaflow::flow_sim::{ReturnRecord, SectionPoint};
use aaflow::io::{read_returns, write_returns};
use aaflow::operator::log_grid;
use aaflow::statistics::{ks_distance, normal_cdf, tail_fit, RunningStats, TailMethod};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = ReturnRecord> {
    (-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64, 1.0..1e9f64, -1e3..1e3f64, 1u64..1u64 << 40, any::<bool>()).prop_map(
        |(a, b, c, d, tau, psi_bar, r, passed_neutral)| ReturnRecord {
            start: SectionPoint { x: a, y: b },
            end: SectionPoint { x: c, y: d },
            r,
            tau,
            psi_bar,
            passed_neutral,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn return_stream_round_trip(recs in prop::collection::vec(record(), 0..50)) {
        let mut buf = Vec::new();
        write_returns(&mut buf, &recs).unwrap();
        let back = read_returns(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(a.start, b.start);
            prop_assert_eq!(a.end, b.end);
            prop_assert_eq!(a.tau.to_bits(), b.tau.to_bits());
            prop_assert_eq!(a.psi_bar.to_bits(), b.psi_bar.to_bits());
            prop_assert_eq!(a.passed_neutral, b.passed_neutral);
            prop_assert_eq!(b.r, a.r.min(u32::MAX as u64));
        }
    }

    #[test]
    fn truncated_stream_is_rejected(recs in prop::collection::vec(record(), 1..10), cut in 1usize..53) {
        let mut buf = Vec::new();
        write_returns(&mut buf, &recs).unwrap();
        buf.truncate(buf.len() - cut);
        prop_assert!(read_returns(buf.as_slice()).is_err());
    }

    #[test]
    fn hill_is_scale_invariant(seed in any::<u64>(), scale in 0.01..100.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..20_000).map(|_| (1.0 - rng.gen::<f64>()).powf(-0.5)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        let a = tail_fit(&xs, TailMethod::Hill, 0.05).unwrap();
        let b = tail_fit(&ys, TailMethod::Hill, 0.05).unwrap();
        prop_assert!((a.beta_hat - b.beta_hat).abs() < 1e-9 * a.beta_hat);
    }

    #[test]
    fn running_stats_merge_matches_single_pass(xs in prop::collection::vec(-1e3..1e3f64, 2..200), split in 0usize..200) {
        let split = split.min(xs.len());
        let mut all = RunningStats::default();
        let (mut a, mut b) = (RunningStats::default(), RunningStats::default());
        for (i, &x) in xs.iter().enumerate() {
            all.push(x);
            if i < split { a.push(x) } else { b.push(x) }
        }
        let m = a.merge(&b);
        prop_assert_eq!(m.count, all.count);
        prop_assert!((m.mean - all.mean).abs() < 1e-9 * (1.0 + all.mean.abs()));
        prop_assert!((m.variance() - all.variance()).abs() < 1e-8 * (1.0 + all.variance()));
    }

    #[test]
    fn ks_distance_is_a_probability(xs in prop::collection::vec(-10.0..10.0f64, 1..100), mu in -5.0..5.0f64) {
        let d = ks_distance(&xs, |x| Ok(normal_cdf(x - mu))).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-12);
    }

    #[test]
    fn normal_cdf_is_monotone(a in -40.0..40.0f64, b in -40.0..40.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(normal_cdf(lo) <= normal_cdf(hi));
        prop_assert!((normal_cdf(a) + normal_cdf(-a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_grid_is_increasing_with_exact_ends(lo_exp in -8.0..2.0f64, span in 0.1..6.0f64, n in 2usize..40) {
        let (lo, hi) = (10f64.powf(lo_exp), 10f64.powf(lo_exp + span));
        let g = log_grid(lo, hi, n);
        prop_assert_eq!(g.len(), n);
        prop_assert_eq!(g[0], lo);
        prop_assert_eq!(g[n - 1], hi);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
