//! Throughput of the coefficient sweep and the pathwise oracle under the
//! rayon lane vs the sequential fallback, on a workload small enough to
//! iterate but wide enough (15 coefficients, 500 paths) for the split to
//! show.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polychaos::basis::{BasisSpec, TimeBasis};
use polychaos::exec::ExecMode;
use polychaos::multiindex::TruncationSpec;
use polychaos::propagator::{sweep_unbiased, ChaosField, PropagatorRun, SweepMode};
use polychaos::spectral::{Grid, GridField, PdeCoeffs};
use polychaos::stats::{euler_maruyama_oracle, EmRun, MCSampler};

fn modes() -> [(&'static str, ExecMode); 2] {
    [
        ("parallel", ExecMode::Parallel),
        ("serial", ExecMode::Serial),
    ]
}

fn forced_coeffs(grid: Grid) -> PdeCoeffs {
    let mut coeffs = PdeCoeffs::new(0.25, 1);
    coeffs
        .g
        .push(GridField::from_fn(grid, 1, |_, x| 0.8 * x[0].sin()));
    coeffs
}

fn bench_sweep(c: &mut Criterion) {
    let grid = Grid::new(1, 64).expect("grid");
    let truncation = TruncationSpec::new(2, 4);
    let run = PropagatorRun {
        mode: SweepMode::UnbiasedWick,
        coeffs: forced_coeffs(grid),
        basis: BasisSpec::new(TimeBasis::Haar, 0.25, 4, 1).expect("basis"),
        truncation,
        dt: 1.0 / 128.0,
        t_end: 0.25,
        snapshots: 1,
        initial: ChaosField::deterministic(
            truncation,
            GridField::from_fn(grid, 1, |_, x| 0.4 * x[0].sin()),
        ),
    };
    let mut group = c.benchmark_group("unbiased_sweep");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sweep_unbiased(&run, exec).expect("sweep"));
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let grid = Grid::new(1, 64).expect("grid");
    let coeffs = forced_coeffs(grid);
    let basis = BasisSpec::new(TimeBasis::Haar, 0.25, 4, 1).expect("basis");
    let initial = GridField::from_fn(grid, 1, |_, x| 0.4 * x[0].sin());
    let probes = [5usize, 16, 57];
    let em = EmRun {
        coeffs: &coeffs,
        basis: &basis,
        initial: &initial,
        dt: 1.0 / 128.0,
        linear_only: false,
        probes: &probes,
    };
    let sampler = MCSampler::new(11, 500);
    let mut group = c.benchmark_group("pathwise_oracle");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| euler_maruyama_oracle(&em, &sampler, exec).expect("oracle"));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_oracle);
criterion_main!(benches);
