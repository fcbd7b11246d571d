use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pltanh_bench::preactivations;
use pltanh_core::activations::{activation_backward_from_output, apply_activation, pltanh_fwd};
use pltanh_core::ActivationKind;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// One MNIST conv feature map at batch 128.
const LEN: usize = 128 * 26 * 26 * 32;

fn tensors(c: &mut Criterion) {
    let x = preactivations(LEN, 1);
    let g = preactivations(LEN, 2);
    let mut group = c.benchmark_group("activation");
    group.sample_size(20);
    group.throughput(Throughput::Elements(LEN as u64));
    for kind in ActivationKind::all(0.01) {
        group.bench_function(BenchmarkId::new("forward", kind.name()), |b| {
            b.iter(|| apply_activation(kind, &x).unwrap())
        });
        let y = apply_activation(kind, &x).unwrap();
        group.bench_function(BenchmarkId::new("backward", kind.name()), |b| {
            b.iter(|| activation_backward_from_output(kind, &x, &y, &g).unwrap())
        });
    }
    group.finish();
}

fn scalar(c: &mut Criterion) {
    let xs: Vec<f64> = preactivations(4096, 3).data().iter().map(|&v| f64::from(v)).collect();
    c.bench_function("pltanh_fwd/f64_scalar", |b| {
        b.iter(|| xs.iter().map(|&x| pltanh_fwd(x, 0.01)).sum::<f64>())
    });
}

criterion_group!(benches, tensors, scalar);
criterion_main!(benches);
