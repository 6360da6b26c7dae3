use robust_crl::envs::{garnet, resolve_threshold, ThresholdRule};
use robust_crl::robust::ContaminationSet;

#[test]
fn garnet_seed_zero_is_frozen() {
    let m = garnet(2, 1, 0).unwrap();
    let p = [0.9615317637517834, 0.03846823624821653, 0.6639194361843915, 0.3360805638156086];
    assert_eq!(m.kernel().as_slice(), &p);
    assert_eq!(m.reward(), &[0.854046112887315, 0.24488470250998717]);
    assert_eq!(m.utilities()[0], vec![0.24994083494573482, 0.6654410020479848]);
    assert_eq!(m.rho(), &[0.5, 0.5]);
}

#[test]
fn garnet_rows_are_distributions() {
    for seed in 0..20 {
        let m = garnet(7, 4, seed).unwrap();
        for s in 0..7 {
            for a in 0..4 {
                let row = m.kernel().row(s, a);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(m.reward().iter().chain(&m.utilities()[0]).all(|&x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn thresholds_are_within_value_range() {
    let set = ContaminationSet::new(0.2).unwrap();
    for seed in 0..5 {
        let m = garnet(6, 3, seed).unwrap();
        for rule in [ThresholdRule::HalfRandomMax, ThresholdRule::Active] {
            let b = resolve_threshold(rule, &m, &set, seed).unwrap();
            assert!(b > 0.0 && b < m.value_range());
        }
        assert_eq!(resolve_threshold(ThresholdRule::Fixed { b: 3.5 }, &m, &set, 0).unwrap(), 3.5);
    }
    assert!(garnet(1, 2, 0).is_err());
}
