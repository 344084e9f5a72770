mod common;

use contraction_core::interconnect::{
    build_gain_matrix, network_certificate, network_rate, subsystem_gains_from_fields, GainMatrix, GainMode,
};
use contraction_core::norms::spectral_abscissa;
use contraction_core::system::{BoxDomain, Sampler, VectorFieldSpec};
use contraction_core::{Matrix, NormSpec, Vector};
use proptest::prelude::*;
use rand::Rng;

fn random_gamma(rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> Matrix {
    let mut g = common::uniform_matrix(rng, k, k, 0.0, 1.0);
    for i in 0..k {
        g[(i, i)] = -rng.random_range(0.5..3.0);
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn network_rate_matches_perron_weight(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = common::rng(seed);
        let g = random_gamma(&mut rng, k);
        let gm = GainMatrix::new(g.clone(), None, GainMode::Continuous).unwrap();
        match network_rate(&gm).unwrap() {
            Some(rate) => {
                let cert = network_certificate(&gm).unwrap().unwrap();
                prop_assert!((cert.eta_value - rate).abs() <= 1e-8);
                prop_assert!((rate + spectral_abscissa(&g).unwrap()).abs() <= 1e-12);
                // η certifies Γη < 0 row by row
                let slack = &g * &cert.eta;
                prop_assert!(slack.iter().all(|v| *v < 0.0));
            }
            None => prop_assert!(network_certificate(&gm).unwrap().is_none()),
        }
    }

    #[test]
    fn small_gain_never_beats_the_monolithic_rate(seed in any::<u64>(), split in 1usize..3) {
        let mut rng = common::rng(seed);
        let n = 4;
        let mut a = common::uniform_matrix(&mut rng, n, n, -0.6, 0.6);
        for i in 0..n {
            a[(i, i)] -= 2.0;
        }
        let partition = vec![split, n - split];
        let f = VectorFieldSpec::affine(a.clone(), Vector::zeros(n), BoxDomain::symmetric(n, 1.0).unwrap()).unwrap();
        let specs = [NormSpec::L2, NormSpec::Linf];
        let est = subsystem_gains_from_fields(&f, &partition, &specs, &Sampler::RandomUniform { count: 3, seed }).unwrap();
        if est.rates.iter().all(|c| *c > 0.0) {
            if let Some(rate) = network_rate(&est.gain_matrix().unwrap()).unwrap() {
                prop_assert!(rate <= -spectral_abscissa(&a).unwrap() + 1e-3);
            }
        }
    }

    #[test]
    fn discrete_gains_use_the_perron_root(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = common::rng(seed);
        let g = common::uniform_matrix(&mut rng, k, k, 0.0, 0.9 / k as f64);
        let rates: Vec<f64> = (0..k).map(|i| g[(i, i)]).collect();
        let gm = build_gain_matrix(&rates, &g, None, GainMode::Discrete).unwrap();
        let rho = network_rate(&gm).unwrap().expect("row sums below 0.9");
        let cert = network_certificate(&gm).unwrap().unwrap();
        prop_assert!((cert.eta_value - rho).abs() <= 1e-8);
        prop_assert!(rho < 0.9 + 1e-12);
    }
}

#[test]
fn rejects_non_metzler_and_negative_gains() {
    let bad = Matrix::from_row_slice(2, 2, &[-1.0, -0.1, 0.2, -1.0]);
    assert!(GainMatrix::new(bad, None, GainMode::Continuous).is_err());
    let positive_diag = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, -1.0]);
    assert!(GainMatrix::new(positive_diag, None, GainMode::Continuous).is_err());
    let negative = Matrix::from_row_slice(2, 2, &[0.5, -0.1, 0.2, 0.1]);
    assert!(GainMatrix::new(negative, None, GainMode::Discrete).is_err());
    assert!(build_gain_matrix(&[1.0, -1.0], &Matrix::zeros(2, 2), None, GainMode::Continuous).is_err());
}

#[test]
fn unstable_gain_matrix_has_no_rate() {
    let g = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0]);
    let gm = GainMatrix::new(g, None, GainMode::Continuous).unwrap();
    assert_eq!(network_rate(&gm).unwrap(), None);
}
