use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxent_ebe::quadrature::smolyak_sparse_grid;
use maxent_ebe::{BasisSet, Execution, MomentProblem};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn problem(d: usize, level: u32, exec: Execution) -> (MomentProblem, Vec<f64>) {
    let basis = BasisSet::enumerate(d, 4).unwrap();
    let lambda: Vec<f64> = basis
        .indices()
        .iter()
        .map(|m| if m.pure_axis().is_some() && m.total_order() == 4 { -1.0 } else { 0.1 })
        .collect();
    let p = MomentProblem::from_density(basis, &lambda, smolyak_sparse_grid(d, level).unwrap()).unwrap();
    (p.with_execution(exec), lambda.iter().map(|v| v * 0.9).collect())
}

fn residual_and_jacobian(c: &mut Criterion) {
    let mut group = c.benchmark_group("residual_jacobian");
    group.sample_size(20);
    for (d, level) in [(2, 11), (4, 8)] {
        for (name, exec) in POLICIES {
            let (p, lambda) = problem(d, level, exec);
            let active = p.all_indices();
            group.bench_with_input(BenchmarkId::new(name, format!("d{d}_l{level}")), &lambda, |b, l| {
                b.iter(|| black_box(p.eval_residuals_and_jacobian(l, &active).unwrap()))
            });
        }
    }
    group.finish();
}

fn basis_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("basis_matrix");
    group.sample_size(20);
    let rule = smolyak_sparse_grid(4, 8).unwrap();
    let basis = BasisSet::enumerate(4, 4).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| black_box(basis.eval_matrix(rule.nodes(), exec).unwrap())));
    }
    group.finish();
}

fn integration(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate");
    let rule = smolyak_sparse_grid(5, 8).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(rule.integrate(|x| (-x.iter().map(|v| v * v).sum::<f64>()).exp(), exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, residual_and_jacobian, basis_matrix, integration);
criterion_main!(benches);
