use criterion::{Criterion, criterion_group, criterion_main};
use nonce_audit_core::SiteTarget;
use nonce_audit_core::scan::scan_targets_sequential;
use nonce_audit_sim::{Simulator, builtin_matrix};

fn scan(c: &mut Criterion) {
    let matrix = builtin_matrix();
    let sim = Simulator::serve(matrix.clone(), 0).expect("simulator starts");
    let config = sim.scan_config();
    let targets: Vec<SiteTarget> = matrix.iter().map(|s| SiteTarget::new(&s.domain(), None).unwrap()).collect();

    let mut group = c.benchmark_group("scan_matrix");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| scan_targets_sequential(&targets, &config, |_| Ok::<(), ()>(())).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| nonce_audit_core::scan::scan_targets_parallel(&targets, &config, |_| Ok::<(), ()>(())).unwrap())
    });
    group.finish();
}

criterion_group!(benches, scan);
criterion_main!(benches);
