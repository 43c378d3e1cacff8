use fluctlab::kac::{
    boltzmann_entropy, entropy_track, finite_entropy, irreversibility_count, is_near_monotone,
    lln_experiment, macro_trajectory, sample_ensemble, Direction, Ensemble, IrreversibilityWindows,
    KacMacro, Window,
};
use fluctlab::kmc::RngSeed;
use fluctlab::qkac::{self, BlochMacro, ScatterField};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn lln_deviation_small_at_large_n() {
    for kind in [Ensemble::Microcanonical, Ensemble::Canonical] {
        let dev = lln_experiment(10_000, 1.0, 0.3, 20, kind, 100, RngSeed::new(1)).unwrap();
        let ok = dev.iter().filter(|&&d| d <= 0.05).count();
        assert!(ok >= 95, "{kind:?}: {ok}");
    }
}

#[test]
fn lln_deviation_shrinks_with_n() {
    let small =
        lln_experiment(100, 1.0, 0.3, 20, Ensemble::Canonical, 100, RngSeed::new(2)).unwrap();
    let large = lln_experiment(
        10_000,
        1.0,
        0.3,
        20,
        Ensemble::Canonical,
        100,
        RngSeed::new(3),
    )
    .unwrap();
    assert!(median(large) < median(small));
}

#[test]
fn irreversibility_counts_at_ten_sites() {
    let windows = IrreversibilityWindows {
        initial: Window::new(0.8, 1.0).unwrap(),
        evolved: Window::centered(0.9 * 0.4f64.powi(3), 0.1).unwrap(),
        scatterers: Window::new(0.2, 0.4).unwrap(),
    };
    let c = irreversibility_count(10, &windows, 3).unwrap();
    assert_eq!(c.forward, c.backward);
    assert!(c.forward > 0);

    let centered = IrreversibilityWindows::centered(0.6, 0.25, 2, 0.15).unwrap();
    let c = irreversibility_count(10, &centered, 2).unwrap();
    assert_eq!(c.forward, c.backward);
}

#[test]
fn backward_fraction_tracks_entropy_difference() {
    // P[return to m0 | evolved shell] ~ exp(N [s(m0) - s(m_t)]), up to O(log N) in the exponent
    let (n, m0, rho, t) = (12, 2.0 / 3.0, 1.0 / 3.0, 1);
    let mt = macro_trajectory(m0, rho, t).unwrap()[t];
    let windows = IrreversibilityWindows {
        initial: Window::centered(m0, 0.01).unwrap(),
        evolved: Window::centered(mt, 0.15).unwrap(),
        scatterers: Window::centered(rho, 0.01).unwrap(),
    };
    let c = irreversibility_count(n, &windows, t).unwrap();
    let log_fraction = (c.backward as f64 / c.evolved_shell as f64).ln();
    let predicted = n as f64 * (boltzmann_entropy(m0, rho) - boltzmann_entropy(mt, rho));
    assert!(log_fraction < 0.0);
    assert!(
        (log_fraction - predicted).abs() <= 2.0 * (n as f64).ln(),
        "{log_fraction} vs {predicted}"
    );
}

#[test]
fn finite_entropy_near_monotone_from_full_magnetisation() {
    let mut ok = 0;
    for k in 0..100 {
        let mut rng = RngSeed::new(4).with_stream(k).rng();
        let s = sample_ensemble(
            10_000,
            KacMacro { m: 1.0, rho: 0.3 },
            Ensemble::Microcanonical,
            &mut rng,
        )
        .unwrap();
        let track = entropy_track(&s, 20, Direction::Forward);
        ok += usize::from(is_near_monotone(&track, 0.01 * 10_000.0));
    }
    assert!(ok >= 95);
}

#[test]
fn entropy_track_recurs_and_retraces() {
    let mut rng = RngSeed::new(5).rng();
    let s = sample_ensemble(
        32,
        KacMacro { m: 0.75, rho: 0.25 },
        Ensemble::Microcanonical,
        &mut rng,
    )
    .unwrap();
    let track = entropy_track(&s, 64, Direction::Forward);
    assert_eq!(track[64], track[0]);

    let later = s.evolve(10, Direction::Forward);
    let mut back = entropy_track(&later, 10, Direction::Backward);
    back.reverse();
    assert_eq!(back, entropy_track(&s, 10, Direction::Forward));
}

#[test]
fn canonical_samples_match_boltzmann_entropy() {
    let target = KacMacro { m: 0.4, rho: 0.3 };
    let mut last = f64::INFINITY;
    for n in [100, 1000, 10_000, 100_000] {
        let s =
            sample_ensemble(n, target, Ensemble::Canonical, &mut RngSeed::new(6).rng()).unwrap();
        let got = s.macro_observables();
        let gap = (finite_entropy(&s) / n as f64 - boltzmann_entropy(got.m, got.rho)).abs();
        assert!(gap < last);
        last = gap;
    }
}

#[test]
fn quantum_reduces_to_classical() {
    let field = ScatterField::new([std::f64::consts::FRAC_PI_2, 0.0, 0.0]).unwrap();
    let m = BlochMacro::new(0.3, [0.2, -0.4, 0.8]).unwrap();
    let q = qkac::macro_trajectory(&m, &field, 20);
    let c = macro_trajectory(0.8, 0.3, 20).unwrap();
    for (a, b) in q.iter().zip(&c) {
        assert!((a.mvec[2] - b).abs() < 1e-12);
    }
}

#[test]
fn quantum_micro_macro_gap_is_small() {
    let field = ScatterField::new([0.3, 0.4, 0.5]).unwrap();
    let m = BlochMacro::new(0.4, [0.9, 0.0, 0.0]).unwrap();
    let gap = qkac::lln_gap(100_000, &m, &field, 40, RngSeed::new(7)).unwrap();
    assert!(gap <= 0.01, "{gap}");
    let small = qkac::lln_gap(100, &m, &field, 40, RngSeed::new(7)).unwrap();
    assert!(small > gap);
}
