use std::sync::Arc;

use mpml::asymptotics::{order_fit, prior_split_residual};
use mpml::cli::ingest::ingest_reader;
use mpml::estimators::{conditional_mle, Estimand};
use mpml::families::{lookup, Base, LocationScale, TwoBinomial};
use mpml::priors::{Prior, PriorKind};
use mpml::quadrature::QuadratureConfig;
use mpml::{Dataset, Family, ParamPoint};
use proptest::prelude::*;

fn family(id: &str) -> Arc<dyn Family> {
    lookup(id, None).unwrap().single().unwrap().clone()
}

fn sample(fam: &dyn Family, theta: ParamPoint, n: usize, seed: u64) -> Dataset {
    let mut rng = mpml::exec::replicate_rng(seed, 0, 0);
    fam.sample(theta, n, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(
        l1 in 0.2f64..5.0, p1 in 0.2f64..5.0,
        l2 in 0.2f64..5.0, p2 in 0.2f64..5.0,
        n in 1usize..50,
    ) {
        for id in ["normal", "gamma", "invgauss", "laplace", "locscale:normal"] {
            let f = family(id);
            let (a, b) = (ParamPoint::new(l1, p1), ParamPoint::new(l2, p2));
            prop_assert_eq!(f.kl(a, a, n).unwrap(), 0.0);
            let d = f.kl(a, b, n).unwrap();
            prop_assert!(d >= 0.0, "{} KL {}", id, d);
        }
        let tb = TwoBinomial::new(12, 9).unwrap();
        let (a, b) = (ParamPoint::new(l1 * 3.0, p1 - 2.0), ParamPoint::new(l2 * 3.0, p2 - 2.0));
        prop_assert_eq!(tb.kl(a, a, 0).unwrap(), 0.0);
        prop_assert!(tb.kl(a, b, 0).unwrap() >= 0.0);
    }

    #[test]
    fn order_fit_recovers_power_laws(c in 1e-6f64..1e3, alpha in -3.0f64..-0.5) {
        let ns = [8usize, 16, 32, 64, 128];
        let diffs: Vec<f64> = ns.iter().map(|&n| c * (n as f64).powf(alpha)).collect();
        let fit = order_fit(&ns, &diffs).unwrap();
        prop_assert!((fit.slope - alpha).abs() < 1e-10);
        prop_assert!(fit.slope_se < 1e-8);
        prop_assert_eq!(fit.dropped, 0);
    }

    #[test]
    fn normal_pml_is_lambda_flat_with_root_law(
        seed in any::<u64>(), n in 3usize..30,
        l1 in -10.0f64..10.0, l2 in -10.0f64..10.0,
        p1 in 0.01f64..50.0, p2 in 0.01f64..50.0,
    ) {
        let f = family("normal");
        let d = sample(f.as_ref(), ParamPoint::new(0.0, 1.0), n, seed);
        let p = Prior::new(PriorKind::Pml, f).unwrap().capture(&d).unwrap();
        let a = p.log(ParamPoint::new(l1, p1)).unwrap();
        prop_assert_eq!(a, p.log(ParamPoint::new(l2, p1)).unwrap());
        let b = p.log(ParamPoint::new(l1, p2)).unwrap();
        prop_assert!((b - a + 0.5 * (p2 / p1).ln()).abs() < 1e-12);
    }

    #[test]
    fn median_pml_is_inverse_scale_for_any_power(
        seed in any::<u64>(), n in 3usize..20, r in 1.05f64..4.0,
        l in -5.0f64..5.0, p1 in 0.05f64..20.0, p2 in 0.05f64..20.0,
    ) {
        let f: Arc<dyn Family> = Arc::new(LocationScale::new(Base::ExpPower(r)).unwrap());
        let d = sample(f.as_ref(), ParamPoint::new(0.0, 1.0), n, seed);
        let p = Prior::new(PriorKind::Pml, f).unwrap().capture(&d).unwrap();
        let a = p.log(ParamPoint::new(0.0, p1)).unwrap();
        prop_assert_eq!(a, p.log(ParamPoint::new(l, p1)).unwrap());
        // ψ is a rate in exp(-ψ|x-λ|^r), so the prior is 1/scale = ψ^{-1/r}
        let b = p.log(ParamPoint::new(0.0, p2)).unwrap();
        prop_assert!((b - a + (p2 / p1).ln() / r).abs() < 1e-12);
    }

    #[test]
    fn mpml_is_pml_times_jeffreys(
        seed in any::<u64>(), n in 3usize..30,
        l1 in 0.3f64..4.0, l2 in 0.3f64..4.0,
        p1 in 0.2f64..8.0, p2 in 0.2f64..8.0,
    ) {
        for id in ["normal", "gamma", "invgauss"] {
            let f = family(id);
            let d = sample(f.as_ref(), ParamPoint::new(1.0, 2.0), n, seed);
            let m = Prior::new(PriorKind::Mpml, f.clone()).unwrap().capture(&d).unwrap();
            let prod = Prior::product(
                Prior::new(PriorKind::Pml, f.clone()).unwrap(),
                Prior::new(PriorKind::Jeffreys, f.clone()).unwrap(),
            )
            .capture(&d)
            .unwrap();
            // equal up to a constant
            let gap = |t: ParamPoint| m.log(t).unwrap() - prod.log(t).unwrap();
            let (a, b) = (gap(ParamPoint::new(l1, p1)), gap(ParamPoint::new(l2, p2)));
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{}: {} vs {}", id, a, b);
        }
    }

    #[test]
    fn canonical_coordinates_round_trip(l in 0.1f64..20.0, p in 0.05f64..20.0) {
        for id in ["normal", "gamma", "invgauss"] {
            let f = family(id);
            let t = ParamPoint::new(l, p);
            let back = f.from_canonical(f.canonical_of(t).unwrap()).unwrap();
            prop_assert!((back.lambda - l).abs() < 1e-12 * l.max(1.0));
            prop_assert!((back.psi - p).abs() < 1e-12 * p.max(1.0));
        }
    }

    #[test]
    fn normal_conditional_mle_is_unbiased_precision(seed in any::<u64>(), n in 2usize..40) {
        let f = family("normal");
        let d = sample(f.as_ref(), ParamPoint::new(0.5, 3.0), n, seed);
        let cml = conditional_mle(f.as_ref(), &d).unwrap().interior().unwrap();
        let want = (n as f64 - 1.0) / d.summary().ss;
        prop_assert!((cml - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn csv_round_trip_is_exact(xs in prop::collection::vec(-1e6f64..1e6, 2..40)) {
        let body: String = xs.iter().map(|x| format!("{x}\n")).collect();
        let got = ingest_reader(body.as_bytes(), "prop.csv").unwrap();
        prop_assert_eq!(got.dataset.values(), &xs[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flat_split_residual_is_exactly_zero(seed in any::<u64>(), n in 4usize..20) {
        let f = family("gamma");
        let d = sample(f.as_ref(), ParamPoint::new(1.0, 2.0), n, seed);
        let r = prior_split_residual(
            f.as_ref(),
            &d,
            &Prior::flat(f.clone()),
            &Prior::new(PriorKind::Mpml, f.clone()).unwrap(),
            &Estimand::Canonical,
            &QuadratureConfig::default(),
        )
        .unwrap();
        prop_assert_eq!(r.residual, [0.0, 0.0]);
    }
}
