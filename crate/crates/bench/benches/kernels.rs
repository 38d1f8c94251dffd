use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbm_core::forms::{form_c, FormWorkspace};
use rbm_core::grid::{GramKind, H12Gram};
use rbm_core::identities::{run_identity_suite, SuiteOptions};
use rbm_core::{BoxGrid, RegionTag, VelocityField};

fn random_velocity(g: &BoxGrid, rng: &mut ChaCha8Rng) -> VelocityField {
    let mut v = VelocityField::zeros(g);
    for c in &mut v.c {
        c.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    }
    v
}

fn trilinear(c: &mut Criterion) {
    let g = BoxGrid::cube(24).unwrap();
    let ws = FormWorkspace::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (u, v, z) = (random_velocity(&g, &mut rng), random_velocity(&g, &mut rng), random_velocity(&g, &mut rng));
    c.bench_function("form_c_skew_24", |b| b.iter(|| form_c(&ws, black_box(&u), &v, &z, true).unwrap()));
}

fn boundary_gram(c: &mut Criterion) {
    let g = BoxGrid::cube(16).unwrap();
    let region = g.region(RegionTag::Lateral);
    let gram = H12Gram::new(&region, GramKind::Gagliardo).unwrap();
    let x: Vec<f64> = (0..gram.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("gagliardo_apply_lateral_16", |b| b.iter(|| gram.apply(black_box(&x))));
    c.bench_function("gagliardo_assemble_lateral_16", |b| {
        b.iter(|| H12Gram::new(black_box(&region), GramKind::Gagliardo).unwrap())
    });
}

fn identities(c: &mut Criterion) {
    let g = BoxGrid::cube(8).unwrap();
    let opts = SuiteOptions::default();
    c.bench_function("identity_suite_8", |b| b.iter(|| run_identity_suite(black_box(&g), &opts).unwrap()));
}

criterion_group!(benches, trilinear, boundary_gram, identities);
criterion_main!(benches);
