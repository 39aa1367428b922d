use cfmoe::fbl::{
    achievable_rate, bottom_set, dispersion, energy_eff, error_prob, joint_delta, usp_bottom,
    Objective, ObjectiveGroups, UePowerModel,
};
use proptest::prelude::*;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

proptest! {
    #[test]
    fn rate_error_round_trip(g in log_uniform(0.01, 100.0), eps in log_uniform(1e-7, 0.4), tau in 1usize..5000) {
        let r = achievable_rate(g, tau as f64, eps).unwrap();
        let e = error_prob(g, tau as f64, r).unwrap();
        prop_assert!((e / eps - 1.0).abs() < 1e-6, "eps {} back {}", eps, e);
    }

    #[test]
    fn rate_monotone_in_sinr_and_blocklength(g in log_uniform(1e-3, 1e3), f in 1.001f64..3.0, eps in log_uniform(1e-7, 0.49), tau in 1usize..5000) {
        let t = tau as f64;
        // Near γ = 0 the dispersion penalty grows like √γ and outpaces the
        // capacity, so monotonicity in γ holds on the positive-rate region.
        prop_assume!(achievable_rate(g, t, eps).unwrap() > 0.0);
        prop_assert!(achievable_rate(g * f, t, eps).unwrap() > achievable_rate(g, t, eps).unwrap());
    }

    #[test]
    fn rate_monotone_in_blocklength(g in log_uniform(1e-3, 1e3), eps in log_uniform(1e-7, 0.49), tau in 1usize..5000) {
        let t = tau as f64;
        prop_assert!(achievable_rate(g, t + 1.0, eps).unwrap() > achievable_rate(g, t, eps).unwrap());
    }

    #[test]
    fn error_prob_decreasing_in_sinr(g in log_uniform(1e-2, 10.0), f in 1.01f64..2.0, rate in 0.0f64..0.5, tau in 10usize..3000) {
        let c = g.ln_1p() * std::f64::consts::LOG2_E;
        prop_assume!(c > rate);
        let a = error_prob(g, tau as f64, rate).unwrap();
        let b = error_prob(g * f, tau as f64, rate).unwrap();
        prop_assert!(b < a || (a == 0.0 && b == 0.0));
    }

    #[test]
    fn dispersion_bounded(g in 0.0f64..1e6) {
        let v = dispersion(g);
        let lim = std::f64::consts::LOG2_E.powi(2);
        prop_assert!((0.0..lim).contains(&v));
    }

    #[test]
    fn energy_efficiency_decreasing_in_power(p in 1e-4f64..1.0, f in 1.01f64..5.0, r in 1e-3f64..5.0) {
        let m = UePowerModel::default();
        prop_assert!(energy_eff(1e7, r, p * f, &m).unwrap() < energy_eff(1e7, r, p, &m).unwrap());
    }

    #[test]
    fn delta_bounded_and_permutation_invariant(
        se in prop::collection::vec(-1.0f64..3.0, 1..12),
        seed in 0u64..1000,
    ) {
        let k = se.len();
        let ee: Vec<f64> = se.iter().map(|x| 2.0 - x).collect();
        let mut g = ObjectiveGroups::round_robin(k, 1.5, 1.2);
        g.beta = [0.2, 0.5, 0.3];
        let d = joint_delta(&se, &ee, &g).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        // Swap two members of the SE group.
        let members = g.members(Objective::Se);
        if members.len() >= 2 {
            let (a, b) = (members[0], members[members.len() - 1 - (seed as usize % (members.len() - 1))]);
            let mut se2 = se.clone();
            let mut ee2 = ee.clone();
            se2.swap(a, b);
            ee2.swap(a, b);
            let d2 = joint_delta(&se2, &ee2, &g).unwrap();
            prop_assert!((d - d2).abs() < 1e-14);
        }
    }

    #[test]
    fn bottom_set_size(sinr in prop::collection::vec(0.0f64..10.0, 1..64), frac in 0.01f64..1.0) {
        let set = bottom_set(&sinr, frac).unwrap();
        let want = ((sinr.len() as f64 * frac - 1e-9).ceil() as usize).max(1);
        prop_assert_eq!(set.len(), want);
        let worst = set.iter().map(|&k| sinr[k]).fold(f64::MIN, f64::max);
        let outside = (0..sinr.len()).filter(|k| !set.contains(k)).map(|k| sinr[k]).fold(f64::MAX, f64::min);
        prop_assert!(worst <= outside);
        let eps = vec![1e-3; sinr.len()];
        let u = usp_bottom(&eps, 1e-2, &sinr, frac).unwrap();
        prop_assert!(u <= 1.0);
    }
}
