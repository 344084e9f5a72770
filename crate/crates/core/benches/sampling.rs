//! Parallel vs sequential execution of the sampling hot loops.

use std::hint::black_box;

use contraction_core::exec;
use contraction_core::simulate::integrate_many;
use contraction_core::system::{
    estimate_osl, pair_condition_sup, BoxDomain, ConditionSampling, Sampler, VectorFieldSpec,
};
use contraction_core::{Matrix, NormSpec, Vector};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tanh_field(n: usize) -> VectorFieldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Matrix::from_fn(n, n, |i, j| if i == j { -2.0 } else { rng.random_range(-0.3..0.3) });
    let jac_a = a.clone();
    VectorFieldSpec::new(n, move |x| &a * x + x.map(f64::tanh), BoxDomain::symmetric(n, 1.0).unwrap())
        .unwrap()
        .with_jacobian(move |x| {
            let mut j = jac_a.clone();
            for i in 0..x.len() {
                j[(i, i)] += 1.0 - x[i].tanh().powi(2);
            }
            j
        })
}

fn both<R>(c: &mut Criterion, group: &str, param: usize, mut f: impl FnMut() -> R) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", param), |b| b.iter(|| black_box(f())));
    g.bench_function(BenchmarkId::new("sequential", param), |b| b.iter(|| exec::sequential(|| black_box(f()))));
    g.finish();
}

fn osl(c: &mut Criterion) {
    for n in [3, 8] {
        let field = tanh_field(n);
        let sampler = Sampler::LatinHypercube { count: 2000, seed: 0 };
        both(c, "estimate_osl", n, || estimate_osl(&field, &NormSpec::L2, &sampler).unwrap().value);
    }
}

fn pairs(c: &mut Criterion) {
    let field = tanh_field(4);
    let config = ConditionSampling { refine: false, ..ConditionSampling::default() };
    both(c, "pair_condition_sup", 4, || pair_condition_sup(&field, &NormSpec::Linf, &config).unwrap().value);
}

fn trajectories(c: &mut Criterion) {
    let field = tanh_field(4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0s: Vec<Vector> = (0..64).map(|_| Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0))).collect();
    both(c, "integrate_many", x0s.len(), || integrate_many(&field, &x0s, (0.0, 5.0), 1e-2, None).unwrap().len());
}

criterion_group!(benches, osl, pairs, trajectories);
criterion_main!(benches);
