use coarse_bezout::grid::coarse_count;
use coarse_bezout::maps::{builtin, EntireMap};
use coarse_bezout::persist::{barcode0, count_long_bars};
use coarse_bezout::taylor::{bezout_bound, tau_bound};
use coarse_bezout::zeros::tau;
use proptest::prelude::*;
use serde_json::json;

fn poly_from(roots: &[(f64, f64)]) -> EntireMap {
    let r: Vec<[f64; 2]> = roots.iter().map(|&(a, b)| [a, b]).collect();
    builtin("polynomial", 1, &json!({ "roots": r })).unwrap()
}

fn exp_shift() -> EntireMap {
    builtin("exp_shift", 1, &json!({})).unwrap()
}

#[test]
fn long_bars_below_bezout_rhs() {
    let maps = [exp_shift(), poly_from(&[(0.5, 0.0), (0.0, 1.0), (-2.0, 0.0)])];
    for m in &maps {
        for r in [2.0, 5.0, 10.0] {
            let bc = barcode0::<f64>(m, r, 128).unwrap();
            for d in [0.01, 0.1, 0.5] {
                let n = count_long_bars(&bc, d);
                let rhs = bezout_bound(1, 2.0, m.log2_mu_upper(2.0 * r).unwrap(), d).unwrap();
                assert!(n as u128 <= rhs, "{:?} r={r} d={d}: {n} > {rhs}", m.config.name);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tau_dominates_islands(roots in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 1..5), d in 0.02f64..0.6) {
        let m = poly_from(&roots);
        let t = tau(&m, 2.0, d, 128).unwrap();
        prop_assert!(t.tau >= t.zeta0);
        prop_assert!(t.per_island.iter().all(|&k| k >= 1));
        prop_assert_eq!(t.islands_without_zero, 0);
    }

    #[test]
    fn tau_below_degree_power(a in 1.2f64..4.0, r in 1.0f64..9.0, d in 0.02f64..0.9) {
        let m = exp_shift();
        let t = tau(&m, r, d, 128).unwrap();
        let b = tau_bound(1, a, m.log2_mu_upper(a * r).unwrap(), d).unwrap();
        prop_assert!(t.tau as u128 <= b);
    }

    #[test]
    fn count_zeta0_le_zeta(r in 1.0f64..12.0, d in 0.02f64..0.9) {
        let rep = coarse_count(&exp_shift(), r, d, 64).unwrap();
        prop_assert!(rep.zeta0 <= rep.zeta);
        prop_assert!(rep.verdicts.iter().all(|v| v.holds));
    }
}
