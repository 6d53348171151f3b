use std::collections::BTreeSet;

use proptest::prelude::*;
use simlab::theory::{self, LemmaId, Phase, TheoryConstants};

fn constants(p: f64, beta: f64, omega: f64) -> TheoryConstants {
    TheoryConstants {
        alpha: 1.0,
        gamma: 2.0,
        beta,
        omega,
        k: 20.0,
        p,
        kappa: 1.2,
        c: 2.0,
        eta: 0.001,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_configs_satisfy_every_assumption(d in 2usize..5, seed in any::<u64>()) {
        let cfg = theory::sample_assumption_config(d, seed).unwrap();
        let report = theory::check_assumptions(&cfg.constants, &cfg.a, d, Some(&cfg.w0));
        prop_assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
        prop_assert!(report.descending);
    }

    #[test]
    fn smaller_steps_keep_passing(
        d in 2usize..5,
        seed in 0u64..1000,
        first in 0.0f64..3.0,
        second in 0.0f64..3.0,
    ) {
        let cfg = theory::sample_assumption_config(d, seed).unwrap();
        let limit = cfg.constants.eta;
        let (big, small) = (first.max(second) * limit, first.min(second) * limit);
        prop_assume!(small > 0.0);
        let at = |eta: f64| {
            let c = TheoryConstants { eta, ..cfg.constants.clone() };
            theory::check_assumptions(&c, &cfg.a, d, Some(&cfg.w0)).all_pass()
        };
        if at(big) {
            prop_assert!(at(small));
        }
        prop_assert_eq!(at(big), big <= limit);
    }

    #[test]
    fn phase_is_monotone_in_magnitude(
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
        p in 2.0f64..50.0,
        beta in 1.01f64..5.0,
        omega in 1e-4f64..1e-2,
    ) {
        let c = constants(p, beta, omega);
        let (small, large) = if x.abs() <= y.abs() { (x, y) } else { (y, x) };
        if theory::classify_phase(large, &c) == Phase::Initial {
            prop_assert_eq!(theory::classify_phase(small, &c), Phase::Initial);
        }
    }
}

#[test]
fn every_lemma_is_exercised_by_some_sampled_run() {
    let mut exercised = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for seed in 0..3u64 {
        let cfg = theory::sample_assumption_config(2 + seed as usize, seed).unwrap();
        for report in theory::check_sampled_config(&cfg, 0.85).unwrap() {
            assert_eq!(report.violations(), 0, "seed {seed}: {:?}", report.lemma);
            seen.insert(report.lemma);
            if report.checked_steps() > 0 {
                exercised.insert(report.lemma);
            }
            for entry in &report.entries {
                assert!(entry.min_margin.is_none_or(f64::is_finite));
            }
        }
    }
    assert_eq!(
        exercised,
        seen,
        "lemmas never checked: {:?}",
        seen.difference(&exercised).collect::<Vec<_>>()
    );
    assert_eq!(seen.len(), 12);
    assert!(seen.contains(&LemmaId::Suppression));
}

#[test]
fn assumption_report_is_deterministic() {
    let cfg = theory::sample_assumption_config(3, 77).unwrap();
    let again = theory::sample_assumption_config(3, 77).unwrap();
    assert_eq!(cfg, again);
    let first = theory::check_assumptions(&cfg.constants, &cfg.a, 3, Some(&cfg.w0));
    let second = theory::check_assumptions(&cfg.constants, &cfg.a, 3, Some(&cfg.w0));
    assert_eq!(first, second);
}

#[test]
fn fitted_constants_are_the_tightest() {
    let cfg = theory::sample_assumption_config(3, 5).unwrap();
    let fitted = theory::fit_constants(&cfg.a, &cfg.w0).unwrap();
    assert!(fitted.alpha >= cfg.constants.alpha);
    assert!(fitted.gamma <= cfg.constants.gamma * (1.0 + 1e-12));
    assert!(fitted.omega >= cfg.constants.omega);
    assert!(fitted.beta * fitted.omega <= cfg.constants.beta * cfg.constants.omega);
}
