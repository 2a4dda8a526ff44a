use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use triscale::cell::{isotropic_field, solve_cell_problem, CellSolveOptions};
use triscale::geometry::{
    build_standard_cell, tile_microdomain, CellKind, InclusionShape, Label, TiledDomainSpec,
};
use triscale::unfolding;

fn bench_corrector_solve(c: &mut Criterion) {
    let cell = build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 64).unwrap();
    let tf = isotropic_field(&cell, 1.0);
    let opts = CellSolveOptions::default();
    c.bench_function("corrector_solve_64", |b| {
        b.iter(|| solve_cell_problem(&cell, &tf, Label::Cyto, black_box(0), &opts).unwrap())
    });
}

fn bench_stiffness_apply(c: &mut Criterion) {
    use triscale::fem::VoxelMesh;
    use triscale::tensor::SpdTensor;
    let mesh = VoxelMesh::full(&[128, 128], &[1.0 / 128.0; 2], true);
    let t = SpdTensor::identity(2);
    let u: Vec<f64> = (0..mesh.n_nodes()).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; mesh.n_nodes()];
    c.bench_function("stiffness_apply_128", |b| {
        b.iter(|| {
            mesh.apply_stiffness(&|_| &t, black_box(&u), &mut out);
            black_box(out[0])
        })
    });
}

fn bench_unfold(c: &mut Criterion) {
    let meso = build_standard_cell(CellKind::Meso, 2, InclusionShape::Square, 0.5, 16).unwrap();
    let micro = build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 4).unwrap();
    let spec = TiledDomainSpec::new(&[1.0, 1.0], 0.125, 0.03125, meso, micro).unwrap();
    let grid = tile_microdomain(&spec).unwrap();
    let field: Vec<f64> = (0..grid.shape().len()).map(|i| (i as f64 * 0.11).cos()).collect();
    c.bench_function("unfold_128", |b| {
        b.iter_batched(
            || field.clone(),
            |f| unfolding::unfold(&grid, black_box(&f)).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_corrector_solve, bench_stiffness_apply, bench_unfold);
criterion_main!(benches);
