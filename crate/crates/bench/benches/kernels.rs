use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pltanh_bench::uniform;
use pltanh_core::tensor::{conv2d, conv2d_backward, maxpool2d, Padding};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// (label, input, kernel, padding) at the MNIST and CIFAR-10 model sizes.
const CONVS: [(&str, [usize; 4], [usize; 4], Padding); 3] = [
    ("mnist", [128, 28, 28, 1], [3, 3, 1, 32], Padding::Valid),
    ("cifar_1", [32, 32, 32, 3], [3, 3, 3, 32], Padding::Same),
    ("cifar_2", [32, 16, 16, 32], [3, 3, 32, 64], Padding::Same),
];

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(20);
    for (name, input, kernel, padding) in CONVS {
        let x = uniform(&input, 1);
        let k = uniform(&kernel, 2);
        let b = uniform(&[kernel[3]], 3);
        group.bench_function(BenchmarkId::new("forward", name), |bench| {
            bench.iter(|| conv2d(&x, &k, &b, padding).unwrap())
        });
        let y = conv2d(&x, &k, &b, padding).unwrap();
        let g = uniform(y.shape(), 4);
        group.bench_function(BenchmarkId::new("backward", name), |bench| {
            bench.iter(|| conv2d_backward(&x, &k, &g, padding, true).unwrap())
        });
    }
    group.finish();
}

fn pool(c: &mut Criterion) {
    let x = uniform(&[128, 26, 26, 32], 5);
    c.bench_function("maxpool2d/mnist", |b| b.iter(|| maxpool2d(&x).unwrap()));
}

criterion_group!(benches, conv, pool);
criterion_main!(benches);
