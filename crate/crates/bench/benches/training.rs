use criterion::{criterion_group, criterion_main, Criterion};
use dsgnn_bench::{bench_dataset, bench_model};
use dsgnn_core::autodiff::Tape;
use dsgnn_core::models::{model_loss, TargetsRef};
use dsgnn_core::Variant;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::hint::black_box;

fn bench_training(c: &mut Criterion) {
    let ds = bench_dataset();
    let classes: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();

    for (label, variant, depth) in [
        ("standard_k2", Variant::Standard, 2),
        ("standard_k8", Variant::Standard, 8),
        ("dsgnn_k8", Variant::Dsgnn, 8),
    ] {
        let model = bench_model(variant, depth);
        c.bench_function(&format!("forward_{label}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                black_box(model.eval_trace_node(&tape, &ds));
            })
        });
        c.bench_function(&format!("forward_backward_{label}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let mut rng = ChaCha12Rng::seed_from_u64(0);
                let trace = model.forward_node(&tape, &ds, true, &mut rng);
                let loss = model_loss(
                    &model,
                    &trace,
                    TargetsRef::Classes(&classes),
                    &ds.splits.train,
                );
                loss.backward();
                black_box(trace.leaves.last().unwrap().grad());
            })
        });
    }
}

criterion_group!(benches, bench_training);
criterion_main!(benches);
