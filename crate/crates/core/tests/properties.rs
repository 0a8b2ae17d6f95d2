use proptest::prelude::*;

use nodal_sheet::config::{self, ConfigMap};
use nodal_sheet::covariance::make_model;
use nodal_sheet::experiments::SampleRow;
use nodal_sheet::io;
use nodal_sheet::nodal::{cumulative, rectangle_increment, IncrementGrid, Rect};
use nodal_sheet::rng::derive_seed;
use nodal_sheet::sheet::{yeh_h, CurveParam};
use nodal_sheet::stats::ks_statistic;

fn curve_param() -> impl Strategy<Value = CurveParam> {
    prop_oneof![Just(CurveParam::Infinite), (1.01f64..50.0).prop_map(CurveParam::Finite)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rectangle_increments_are_additive(
        cells in prop::collection::vec(-2.0f64..2.0, 64),
        lo in 0usize..4, mid in 4usize..6, hi in 6usize..=8, y0 in 0usize..4, y1 in 4usize..=8,
    ) {
        let m = 8;
        let inc = IncrementGrid { dim: 2, m, cells, side: 1.0, model: String::new(), seed: 0, degenerate_nodes: 0 };
        let lat = cumulative(&inc);
        let f = |i: usize| i as f64 / m as f64;
        let rect = |a: usize, b: usize| Rect::new(vec![f(a), f(y0)], vec![f(b), f(y1)]);
        let whole = rectangle_increment(&lat, &rect(lo, hi)).unwrap();
        let parts = rectangle_increment(&lat, &rect(lo, mid)).unwrap() + rectangle_increment(&lat, &rect(mid, hi)).unwrap();
        prop_assert!((whole - parts).abs() < 1e-10);
    }

    #[test]
    fn yeh_h_is_a_distribution_function(a in curve_param(), b in curve_param(), l1 in 0.0f64..5.0, dl in 0.0f64..2.0) {
        let h1 = yeh_h(a, b, l1).unwrap();
        let h2 = yeh_h(a, b, l1 + dl).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&h1));
        prop_assert!(h2 >= h1 - 1e-12);
    }

    #[test]
    fn yeh_h_is_symmetric_under_reflection(a in curve_param(), b in curve_param(), l in 0.0f64..4.0) {
        // Reflecting the unit square across its diagonal swaps the roles of a and b.
        let ab = yeh_h(a, b, l).unwrap();
        let ba = yeh_h(b, a, l).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10, "{} vs {}", ab, ba);
    }

    #[test]
    fn ks_ignores_sample_order(mut x in prop::collection::vec(-3.0f64..3.0, 20..200), seed in any::<u64>()) {
        let cdf = |v: f64| 0.5 * nodal_sheet::special::erfc(-v / std::f64::consts::SQRT_2);
        let d1 = ks_statistic(&x, cdf).unwrap().distance;
        let n = x.len();
        for i in 0..n {
            let j = (derive_seed(seed, i as u64) % n as u64) as usize;
            x.swap(i, j);
        }
        prop_assert_eq!(d1, ks_statistic(&x, cdf).unwrap().distance);
        prop_assert!((0.0..=1.0).contains(&d1));
    }

    #[test]
    fn bargmann_fock_covariance_is_even_and_bounded(x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let m = make_model("bargmann-fock", 2).unwrap();
        let r = m.covariance(&[x, y]);
        prop_assert_eq!(r, m.covariance(&[-x, -y]));
        prop_assert!(r <= m.covariance(&[0.0, 0.0]));
        prop_assert!((r - (-(x * x + y * y)).exp()).abs() < 1e-15);
    }

    #[test]
    fn config_values_survive_parsing(n in 100usize..100_000, seed in any::<u64>(), h in 0.001f64..1.0) {
        let text = format!("experiment.N={n}\nexperiment.seed={seed}\nexperiment.h={h}\n");
        let c = config::resolve(&ConfigMap::parse(&text).unwrap()).unwrap();
        prop_assert_eq!((c.replications, c.seed, c.spacing), (n, seed, h));
    }

    #[test]
    fn samples_csv_round_trips(values in prop::collection::vec((any::<u64>(), -1e300f64..1e300, "[a-z(), =.0-9]{0,12}"), 0..30)) {
        let rows: Vec<SampleRow> = values
            .into_iter()
            .enumerate()
            .map(|(rep, (seed, value, stat))| SampleRow { rep, seed, stat, value })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        io::write_samples_csv(&rows, &path).unwrap();
        prop_assert_eq!(io::read_samples_csv(&path).unwrap(), rows);
    }

    #[test]
    fn seeds_do_not_collide(base in any::<u64>(), i in 0u64..10_000, j in 0u64..10_000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(base, i), derive_seed(base, j));
    }
}
