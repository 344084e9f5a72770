mod common;

use contraction_core::certificates::{
    firing_rate_osl, implicit_nn_analyze, lti_l2_certificate, lure_lmi_search, metzler_linf_certificate,
    riemannian_pointwise_check, Activation, FiringRateSpec, ImplicitNNSpec, LureSpec, Method, Witness,
};
use contraction_core::discretization::{banach_iterate, empirical_factor};
use contraction_core::norms::{log_norm, spectral_abscissa};
use contraction_core::simulate::{default_dt, empirical_contraction_rate};
use contraction_core::system::{estimate_osl, BoxDomain, Differentiable, Sampler, VectorFieldSpec};
use contraction_core::{Matrix, NormSpec, Vector};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::Rng;

fn lambda_max(s: &Matrix) -> f64 {
    SymmetricEigen::new((s + s.transpose()) * 0.5).eigenvalues.max()
}

/// `max_i aᵢᵢ + Σ_{j≠i} |aᵢⱼ| ηⱼ/ηᵢ` written out by hand.
fn weighted_row_measure(a: &Matrix, eta: &Vector) -> f64 {
    (0..a.nrows())
        .map(|i| a[(i, i)] + (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs() * eta[j] / eta[i]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn plain_row_measure(a: &Matrix) -> f64 {
    weighted_row_measure(a, &Vector::from_element(a.nrows(), 1.0))
}

fn random_firing_rate(rng: &mut rand_chacha::ChaCha8Rng, n: usize, act: Activation) -> FiringRateSpec {
    loop {
        let c = Matrix::from_diagonal(&common::uniform_vector(rng, n, 0.8, 2.0));
        let a = common::uniform_matrix(rng, n, n, -1.0, 1.0) * (1.0 / n as f64);
        let u = common::uniform_vector(rng, n, -1.0, 1.0);
        let s = FiringRateSpec::new(c, a, act, u).unwrap();
        if s.osl_bound().unwrap() < -0.05 {
            return s;
        }
    }
}

fn random_implicit(rng: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize) -> ImplicitNNSpec {
    loop {
        let mut a = common::uniform_matrix(rng, n, n, -1.0, 1.0) * (0.9 / n as f64);
        for i in 0..n {
            a[(i, i)] = rng.random_range(-1.5..0.4);
        }
        let b = common::uniform_matrix(rng, n, m, -1.0, 1.0);
        let bias = common::uniform_vector(rng, n, -0.5, 0.5);
        let s = ImplicitNNSpec::new(a, b, bias, Activation::Relu).unwrap();
        if implicit_nn_analyze(&s).unwrap().well_posed {
            return s;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn lyapunov_weight_satisfies_its_inequality(seed in any::<u64>(), n in 2usize..6, frac in 0.1..0.95f64) {
        let mut rng = common::rng(seed);
        let a = common::hurwitz(&mut rng, n);
        let rate = frac * -spectral_abscissa(&a).unwrap();
        let cert = lti_l2_certificate(&a, rate).unwrap();
        let Some(Witness::Weight { p }) = cert.witness.clone() else { panic!("weight witness") };
        let lhs = a.transpose() * &p + &p * &a + &p * (2.0 * rate);
        prop_assert!(lambda_max(&lhs) <= 1e-8 * lambda_max(&p));
        prop_assert!(SymmetricEigen::new(p.clone()).eigenvalues.min() > 0.0);
        prop_assert!(cert.certified && cert.margin >= -1e-8 * lambda_max(&p));
        prop_assert!(log_norm(&a, &cert.norm).unwrap() <= -rate + 1e-8);
    }

    #[test]
    fn perron_weight_is_optimal(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = common::rng(seed);
        let a = common::hurwitz_metzler(&mut rng, n);
        let cert = metzler_linf_certificate(&a).unwrap();
        let Some(Witness::Eta { eta }) = cert.witness.clone() else { panic!("eta witness") };
        prop_assert!(eta.iter().all(|v| *v > 0.0));
        let alpha = spectral_abscissa(&a).unwrap();
        let by_hand = weighted_row_measure(&a, &eta);
        prop_assert!((by_hand - alpha).abs() <= 1e-8, "{by_hand} vs {alpha}");
        prop_assert!((cert.rate().unwrap() + by_hand).abs() <= 1e-12);
        prop_assert_eq!(cert.method, Method::Perron);
    }

    #[test]
    fn firing_rate_bound_dominates_sampled_osl(seed in any::<u64>(), n in 2usize..4, relu in any::<bool>(), radius in 0.1..5.0f64) {
        let mut rng = common::rng(seed);
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let s = random_firing_rate(&mut rng, n, act);
        let centre = common::uniform_vector(&mut rng, n, -3.0, 3.0);
        let half = Vector::from_element(n, radius);
        let f = s.vector_field(BoxDomain::new(&centre - &half, &centre + &half).unwrap()).unwrap();
        let sampled = estimate_osl(&f, &NormSpec::Linf, &Sampler::UniformGrid { points_per_axis: 7 }).unwrap();
        let bound = s.osl_bound().unwrap();
        prop_assert!(sampled.value <= bound + 1e-3);
        // the slope box [0,1]ⁿ has its worst case at a vertex
        let mut worst = f64::NEG_INFINITY;
        for mask in 0..(1u32 << n) {
            let d = Vector::from_fn(n, |i, _| if mask & (1 << i) != 0 { 1.0 } else { 0.0 });
            worst = worst.max(plain_row_measure(&(-&s.c + Matrix::from_diagonal(&d) * &s.a)));
        }
        prop_assert!((worst - bound).abs() <= 1e-12);
        prop_assert!((firing_rate_osl(&s).unwrap().rate().unwrap() + bound).abs() <= 1e-15);
    }
}

#[test]
fn lure_certificates_verify_and_contract() {
    let mut rng = common::rng(404);
    let mut verified = 0;
    for _ in 0..40 {
        let n = rng.random_range(2..4);
        let a = common::hurwitz(&mut rng, n);
        let b = common::uniform_matrix(&mut rng, n, 1, -1.0, 1.0);
        let c = common::uniform_matrix(&mut rng, 1, n, -1.0, 1.0);
        let eta = 0.3 * -spectral_abscissa(&a).unwrap();
        let s = LureSpec::new(a.clone(), b.clone(), c.clone(), 1.0, eta).unwrap();
        let Some(cert) = lure_lmi_search(&s) else { continue };
        verified += 1;
        let Some(Witness::WeightMultiplier { p, lambda }) = cert.witness.clone() else { panic!("multiplier") };
        let mut blk = Matrix::zeros(n + 1, n + 1);
        blk.view_mut((0, 0), (n, n)).copy_from(&(a.transpose() * &p + &p * &a + &p * (2.0 * eta)));
        let off = &p * &b + c.transpose() * lambda;
        blk.view_mut((0, n), (n, 1)).copy_from(&off);
        blk.view_mut((n, 0), (1, n)).copy_from(&off.transpose());
        blk[(n, n)] = -2.0 * lambda;
        assert!(lambda_max(&blk) <= 1e-9 * (1.0 + lambda_max(&blk).abs().max(1.0)));

        let f = s.relu_field(BoxDomain::symmetric(n, 2.0).unwrap()).unwrap();
        let pairs = common::random_pairs(&mut rng, n, 6, 2.0);
        let horizon = 5.0 / eta;
        let est = empirical_contraction_rate(
            &f,
            &cert.norm,
            &pairs,
            (0.0, horizon),
            default_dt(eta).max(horizon / 5000.0),
            Some((eta, 1e-2)),
        )
        .unwrap();
        assert!(est.overshoot.as_ref().unwrap().passes, "{:?}", est.overshoot);
        assert!(est.rate >= eta * (1.0 - 1e-2), "rate {} < {eta}", est.rate);
    }
    assert!(verified >= 5, "only {verified} Lur'e systems verified");
}

#[test]
fn implicit_network_constants_hold() {
    let mut rng = common::rng(77);
    for _ in 0..6 {
        let (n, m) = (rng.random_range(2..6), rng.random_range(1..4));
        let s = random_implicit(&mut rng, n, m);
        let report = implicit_nn_analyze(&s).unwrap();
        let (alpha, factor, lip) = (report.alpha_star.unwrap(), report.dt_factor.unwrap(), report.lip_u_to_x.unwrap());
        let u = common::uniform_vector(&mut rng, m, -1.0, 1.0);
        let map = s.iteration_map(&u, alpha).unwrap();
        let pairs = common::random_pairs(&mut rng, n, 200, 3.0);
        assert!(empirical_factor(&map, &NormSpec::Linf, &pairs).unwrap() <= factor + 1e-2);

        let solve = |u: &Vector| {
            let map = s.iteration_map(u, alpha).unwrap();
            banach_iterate(&map, &Vector::zeros(n), &NormSpec::Linf, 1e-13, 1_000_000).unwrap().x_star
        };
        for _ in 0..10 {
            let (u1, u2) =
                (common::uniform_vector(&mut rng, m, -2.0, 2.0), common::uniform_vector(&mut rng, m, -2.0, 2.0));
            let ratio = (solve(&u1) - solve(&u2)).amax() / (&u1 - &u2).amax();
            assert!(ratio <= lip + 1e-6, "{ratio} > {lip}");
        }
    }
}

#[test]
fn riemannian_check_matches_variational_derivative() {
    let f = VectorFieldSpec::new(
        2,
        |x| Vector::from_vec(vec![-x[0] + 0.2 * x[1].sin(), -2.0 * x[1] + 0.3 * x[0] * x[0]]),
        BoxDomain::symmetric(2, 1.0).unwrap(),
    )
    .unwrap()
    .with_jacobian(|x| Matrix::from_row_slice(2, 2, &[-1.0, 0.2 * x[1].cos(), 0.6 * x[0], -2.0]));
    let metric = |x: &Vector| Matrix::identity(2, 2) * (1.0 + x[0] * x[0]);
    let field = f.clone();
    let metric_dot = move |x: &Vector| Matrix::identity(2, 2) * (2.0 * x[0] * field.eval(x).unwrap()[0]);
    let c = 0.4;
    // d/dt (vᵀM(x)v) + 2c·vᵀMv along (ẋ, v̇) = (F(x), DF(x)v), by central differences
    let rate_form = |x: &Vector, v: &Vector| {
        let h = 1e-5;
        let (fx, jv) = (f.eval(x).unwrap(), f.jacobian_at(x).unwrap() * v);
        let energy = |x: Vector, v: Vector| v.dot(&(metric(&x) * &v));
        (energy(x + &fx * h, v + &jv * h) - energy(x - &fx * h, v - &jv * h)) / (2.0 * h)
            + 2.0 * c * v.dot(&(metric(x) * v))
    };
    let pts = Sampler::RandomUniform { count: 25, seed: 3 }.points(f.domain()).unwrap();
    for x in pts {
        let e = |i: usize| Vector::from_fn(2, |k, _| if k == i { 1.0 } else { 0.0 });
        let mut s = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                s[(i, j)] = 0.5 * (rate_form(&x, &(e(i) + e(j))) - rate_form(&x, &e(i)) - rate_form(&x, &e(j)));
            }
        }
        let got = riemannian_pointwise_check(&f, metric, &metric_dot, &x, c).unwrap();
        assert!((got - lambda_max(&s)).abs() < 1e-6, "{got} vs {}", lambda_max(&s));
    }
}
