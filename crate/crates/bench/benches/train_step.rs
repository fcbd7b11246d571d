use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pltanh_bench::{labels, uniform};
use pltanh_core::autodiff::Tape;
use pltanh_core::data::one_hot;
use pltanh_core::model::{init_params, record_forward};
use pltanh_core::train::{adam_step, AdamConfig, AdamState};
use pltanh_core::{ActivationKind, Architecture, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Forward, backward and Adam on one MNIST batch of 128.
fn mnist_step(c: &mut Criterion) {
    let x = uniform(&[128, 28, 28, 1], 1).map(|v| v.abs());
    let y = one_hot::<f32>(&labels(128, 10), 10);
    let mut group = c.benchmark_group("train_step/mnist");
    group.sample_size(10);
    for kind in [ActivationKind::Relu, ActivationKind::PlTanh { alpha: 0.01 }] {
        let spec = Architecture::MnistCnn.build(kind, 10).unwrap();
        let mut params = init_params::<f32>(&spec, 0).unwrap();
        let mut adam = AdamState::new(&params.trainable(), AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        group.bench_function(BenchmarkId::from_parameter(kind.name()), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let input = tape.constant(x.clone());
                let pass = record_forward(&spec, &params, &mut tape, input, Mode::Train, &mut rng, true).unwrap();
                let loss = tape.softmax_cross_entropy(pass.logits, y.clone()).unwrap();
                let mut grads = tape.backward(loss).unwrap();
                let grads: Vec<_> = pass.params.iter().map(|&id| grads.take(id).unwrap()).collect();
                adam_step(&mut params.trainable_mut(), &grads, &mut adam).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, mnist_step);
criterion_main!(benches);
