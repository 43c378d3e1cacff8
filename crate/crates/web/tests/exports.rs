use fluctlab::kac::boltzmann_entropy;
use fluctlab_web::{kac_trajectory, qkac_spiral, scgf_curve};

#[test]
fn scgf_curve_is_mirror_symmetric() {
    let v = scgf_curve(4, 1.0, 0.5, 0.3, 0.1, -1.0, 2.0, 7).unwrap();
    assert_eq!(v.len(), 21);
    for r in v.chunks(3) {
        assert!((r[1] - r[2]).abs() < 1e-8, "{r:?}");
    }
    assert!(scgf_curve(0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 5).is_err());
}

#[test]
fn kac_trajectory_follows_macro_law() {
    let v = kac_trajectory(20_000, 0.8, 0.3, 15, 1).unwrap();
    assert_eq!(v.len(), 64);
    for r in v.chunks(4) {
        assert!((r[1] - r[2]).abs() < 0.05, "{r:?}");
        assert!((r[3] - boltzmann_entropy(r[1], 0.3)).abs() < 0.01, "{r:?}");
    }
}

#[test]
fn qkac_spiral_contracts() {
    let v = qkac_spiral(0.4, 0.9, 0.0, 0.0, 0.3, 0.4, 0.5, 30).unwrap();
    let norms: Vec<f64> = v
        .chunks(4)
        .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    assert!(qkac_spiral(1.5, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 3).is_err());
}
