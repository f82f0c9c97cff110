use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ptc_core::linalg::RMat;
use ptc_core::mesh::{build_unitary, BlockView, CouplerColumn};
use ptc_core::pdk::count_crossings;
use ptc_core::perm::{reparametrize, spl_legalize, Permutation, SplConfig, DEFAULT_EPSILON};
use ptc_core::search::{Objective, SteMode, SuperMesh};
use ptc_core::train::{Batch, MatrixFitTask, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn near_permutation(k: usize, rng: &mut ChaCha8Rng) -> RMat {
    let mut map: Vec<usize> = (0..k).collect();
    for a in (1..k).rev() {
        map.swap(a, rng.random_range(0..=a));
    }
    Permutation::new(map).unwrap().to_matrix() + RMat::from_fn(k, k, |_, _| rng.random_range(0.0..0.9))
}

fn bench_reparametrize(c: &mut Criterion) {
    let mut g = c.benchmark_group("reparametrize");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [8, 16, 32] {
        let raw = RMat::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        g.bench_with_input(BenchmarkId::from_parameter(k), &raw, |b, raw| {
            b.iter(|| reparametrize(black_box(raw), DEFAULT_EPSILON).unwrap())
        });
    }
    g.finish();
}

fn bench_build_unitary(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_unitary");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [8, 16, 32] {
        let blocks = k;
        let phases: Vec<Vec<f64>> =
            (0..blocks).map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let offsets: Vec<usize> = (0..blocks).map(CouplerColumn::offset_for_block).collect();
        let t: Vec<Vec<f64>> =
            offsets.iter().map(|&o| vec![std::f64::consts::FRAC_1_SQRT_2; CouplerColumn::slots(k, o)]).collect();
        let p: Vec<RMat> = (0..blocks).map(|_| near_permutation(k, &mut rng)).collect();
        let views: Vec<BlockView<'_>> = (0..blocks)
            .map(|i| BlockView { phases: &phases[i], offset: offsets[i], t_q: &t[i], p_tilde: &p[i], gate: [0.3, 0.7] })
            .collect();
        g.bench_function(BenchmarkId::from_parameter(k), |b| b.iter(|| build_unitary(k, black_box(&views)).unwrap()));
    }
    g.finish();
}

fn bench_spl(c: &mut Criterion) {
    let mut g = c.benchmark_group("spl_legalize");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [8, 16, 32] {
        // rows 0 and 1 peak in the same column so the polar path runs
        let mut raw = near_permutation(k, &mut rng);
        let col = raw.row(0).iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        raw[(1, col)] += 3.0;
        let p = reparametrize(&raw, DEFAULT_EPSILON).unwrap().p_tilde;
        let cfg = SplConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(k), &p, |b, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            b.iter(|| spl_legalize(black_box(p), &cfg, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn bench_crossings(c: &mut Criterion) {
    let mut g = c.benchmark_group("count_crossings");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in [8, 32, 128] {
        let mut map: Vec<usize> = (0..k).collect();
        for a in (1..k).rev() {
            map.swap(a, rng.random_range(0..=a));
        }
        g.bench_with_input(BenchmarkId::from_parameter(k), &map, |b, map| {
            b.iter(|| count_crossings(black_box(map)).unwrap())
        });
    }
    g.finish();
}

fn bench_loss_and_grad(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let task = Task::MatrixFit(MatrixFitTask::random_unitaries(8, 1, &mut rng).unwrap());
    let mesh = SuperMesh::new(8, 3, 1, &task.layer_shapes(), 100, &mut rng).unwrap();
    let gates = mesh.draw_gates(1.0, &mut rng).unwrap();
    let obj = Objective::task_only(SteMode::Binarized);
    c.bench_function("supermesh_loss_and_grad/8", |b| {
        b.iter(|| mesh.loss_and_grad(&task, &Batch::Full, black_box(&gates), &obj).unwrap())
    });
}

criterion_group!(benches, bench_reparametrize, bench_build_unitary, bench_spl, bench_crossings, bench_loss_and_grad);
criterion_main!(benches);
