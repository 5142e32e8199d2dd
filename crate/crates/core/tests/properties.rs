use proptest::prelude::*;
use ratecate::contrast::kernel;
use ratecate::contrast::{RowTerms, Weighting};
use ratecate::survival::{ipcw_weight_with, KaplanMeier};
use ratecate::validate::{quantile_threshold, subgroup_rows, DiscretePopulation};

proptest! {
    #[test]
    fn threshold_keeps_the_top_fraction(scores in prop::collection::vec(-5.0..5.0f64, 1..200), q in 0.01..1.0f64) {
        let c = quantile_threshold(&scores, q).unwrap();
        let kept = subgroup_rows(&scores, c).len();
        let n = scores.len();
        let target = ((q * n as f64).ceil() as usize).clamp(1, n);
        prop_assert!(kept >= target);
        let above = scores.iter().filter(|&&s| s > c).count();
        prop_assert!(above < target);
    }

    #[test]
    fn kaplan_meier_is_a_survival_curve(
        obs in prop::collection::vec((0.01..10.0f64, any::<bool>()), 1..100),
        probes in prop::collection::vec(0.0..12.0f64, 1..20),
    ) {
        let (time, event): (Vec<f64>, Vec<bool>) = obs.into_iter().unzip();
        let km = KaplanMeier::fit(&time, &event).unwrap();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let mut last = 1.0;
        for t in probes {
            let s = km.at(t);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(s <= last + 1e-15);
            prop_assert!(km.before(t) >= s);
            last = s;
        }
    }

    #[test]
    fn censoring_weights_are_zero_or_inverse_survival(
        time in 0.0..2.0f64, status in 0u8..=1, k in 0.0..1.0f64,
    ) {
        let tau = 0.75;
        let (w, floored) = ipcw_weight_with(time, status, tau, 0.05, |_| k);
        let observed = status == 1 || time >= tau;
        if observed {
            prop_assert!((w - 1.0 / k.max(0.05)).abs() < 1e-12);
            prop_assert_eq!(floored, k < 0.05);
        } else {
            prop_assert_eq!(w, 0.0);
        }
    }

    #[test]
    fn ratio_of_subgroup_means_dominates_threshold(seed in any::<u64>(), k in 2usize..30) {
        let mut rng = ratecate::seed::rng(seed);
        let pop = DiscretePopulation::random(k, &mut rng);
        let d = pop.cate();
        for &c in &d {
            let ad = pop.ad(&d, c).unwrap();
            prop_assert!(ad >= c - 1e-12);
        }
    }

    #[test]
    fn kernel_vanishes_at_zero_residual(mu0 in 0.1..10.0f64, pi1 in 0.05..0.95f64, eta in -2.0..2.0f64) {
        let mu1 = mu0 * eta.exp();
        for r in [0u8, 1] {
            let y = if r == 1 { mu1 } else { mu0 };
            let t = RowTerms { y, r, mu0, mu1, pi1 };
            for symmetric in [false, true] {
                let (h, _) = kernel(&t, eta, symmetric, Weighting::Optimal);
                prop_assert!(h.abs() < 1e-9 * (1.0 + y), "r={} sym={} h={}", r, symmetric, h);
            }
        }
    }
}
