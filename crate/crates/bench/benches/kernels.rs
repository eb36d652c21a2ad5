use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rdlab_core::attractors::{attractor_ode, hausdorff_distance, long_time_sampling_ode, LongTimeParams, OdeAttractorParams};
use rdlab_core::dynamics::{evolve_pde, EvolveParams, Problem, Scheme};
use rdlab_core::{CosineBasis, DiffusionSpec, DomainSpec, EnergyNorm, Nonlinearity, SpectralField};

fn basis(k: usize) -> CosineBasis {
    CosineBasis::new(&DomainSpec::new(1).unwrap(), k).unwrap()
}

fn transforms(c: &mut Criterion) {
    let mut group = c.benchmark_group("transforms");
    for k in [32, 128, 512] {
        let b = basis(k);
        let mut u = SpectralField::constant(&[0.5], &b);
        for j in 1..=k {
            u.coeffs[[0, j]] = 1.0 / (j * j) as f64;
        }
        let grid = b.to_grid(&u).unwrap();
        group.bench_with_input(BenchmarkId::new("to_grid", k), &k, |bench, _| bench.iter(|| b.to_grid(black_box(&u)).unwrap()));
        group.bench_with_input(BenchmarkId::new("to_spectral", k), &k, |bench, _| {
            bench.iter(|| b.to_spectral(black_box(&grid)).unwrap())
        });
    }
    group.finish();
}

fn etd_steps(c: &mut Criterion) {
    let f = Nonlinearity::pitchfork(2.0);
    let diff = DiffusionSpec::uniform(1, 1.0).unwrap();
    let mut group = c.benchmark_group("evolve_pde_100_steps");
    for k in [32, 128] {
        let b = basis(k);
        let problem = Problem::new(&b, &diff, &f).unwrap();
        let mut u0 = SpectralField::constant(&[0.5], &b);
        u0.coeffs[[0, 1]] = 0.5;
        for scheme in [Scheme::Etd1, Scheme::Etd2rk] {
            let params = EvolveParams {
                t_end: 1.0,
                dt: 1e-2,
                scheme,
                stride: 100,
            };
            group.bench_with_input(BenchmarkId::new(format!("{scheme:?}"), k), &k, |bench, _| {
                bench.iter(|| evolve_pde(black_box(&u0), problem, &params).unwrap())
            });
        }
    }
    group.finish();
}

fn hausdorff(c: &mut Criterion) {
    let f = Nonlinearity::pitchfork(2.0);
    let ode = attractor_ode(&f, &OdeAttractorParams::default()).unwrap();
    let long_time = long_time_sampling_ode(&f, &LongTimeParams::default()).unwrap();
    let b = basis(32);
    let norm = EnergyNorm::new(&DiffusionSpec::uniform(1, 1.0).unwrap(), &b);
    c.bench_function("hausdorff_ode_clouds", |bench| {
        bench.iter(|| hausdorff_distance(black_box(&ode.cloud), black_box(&long_time), Some(&norm)).unwrap())
    });
}

criterion_group!(benches, transforms, etd_steps, hausdorff);
criterion_main!(benches);
