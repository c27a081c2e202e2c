use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use csab::model::{forward, init_params};
use csab::{HeadKind, ModelSpec, Padding, Tape};
use csab_bench::fixture;
use std::hint::black_box;

fn conv2d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for (size, cin, cout) in [(32, 3, 8), (16, 8, 16), (8, 16, 16)] {
        let x = fixture(8, size, size, cin);
        let k = fixture(3, 3, cin, cout);
        let b = fixture(1, 1, 1, cout).reshape([cout]).unwrap();
        g.bench_with_input(BenchmarkId::new("forward_backward", format!("{size}x{size}x{cin}->{cout}")), &(), |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (xv, kv, bv) = (tape.input(x.clone()), tape.input(k.clone()), tape.input(b.clone()));
                let y = tape.conv2d(xv, kv, bv, Padding::Same, 1).unwrap();
                let loss = tape.sum(y);
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    g.finish();
}

fn tiny_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("tiny_forward");
    for batch in [1, 8] {
        let x = fixture(batch, 32, 32, 3);
        for head in [HeadKind::Csab, HeadKind::Plain] {
            let spec = ModelSpec::tiny(head);
            let params = init_params::<f32>(&spec, 0).unwrap();
            g.bench_with_input(BenchmarkId::new(head.as_str(), batch), &x, |bench, x| {
                bench.iter(|| black_box(forward(&spec, &params, x).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, conv2d, tiny_forward);
criterion_main!(benches);
