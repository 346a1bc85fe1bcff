use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kmslab::config::ObservableId;
use kmslab::correlations::{kms_check, random_probes, wok_correlation, PreparedProbes};
use kmslab::dynamics::TimeGrid;
use kmslab::exec::ExecMode;
use kmslab::hamiltonian::{assemble, catalog, BoundaryMode, Model};
use kmslab::lattice::BoxRegion;
use kmslab::states::{spectral_decompose, Beta, SpectralData};

const MODES: [(&str, ExecMode); 2] = [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)];

fn tfi(n: usize) -> SpectralData {
    let terms = catalog(Model::Tfi { j: 1.0, g: 1.0 }, 1).unwrap();
    let h = assemble(&terms, BoxRegion::chain(n).unwrap().region(), BoundaryMode::Embedded, 12).unwrap();
    spectral_decompose(&h).unwrap()
}

fn wok(c: &mut Criterion) {
    let sd = tfi(8);
    let grid = TimeGrid::uniform(0.0, 2.0, 41).unwrap();
    let z = ObservableId::Sz.family(1).unwrap();
    let mut g = c.benchmark_group("wok_correlation_n8");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| wok_correlation(&sd, Beta::Finite(1.0), &z, &z, &grid, mode).unwrap())
        });
    }
    g.finish();
}

fn kms(c: &mut Criterion) {
    let sd = tfi(6);
    let probes = random_probes(sd.lambda(), 8, 3).unwrap();
    let prepared = PreparedProbes::new(&sd, &probes, ExecMode::Sequential).unwrap();
    let times = TimeGrid::uniform(-2.0, 2.0, 21).unwrap();
    let mut g = c.benchmark_group("kms_check_n6");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kms_check(&sd, 1.0, &prepared, times.times(), mode).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = wok, kms
}
criterion_main!(benches);
