//! Deterministic inputs shared by the benchmarks.

use csab::Tensor;

/// `[n, h, w, c]` tensor filled with a fixed pseudo-random pattern in `[0, 1)`.
pub fn fixture(n: usize, h: usize, w: usize, c: usize) -> Tensor<f32> {
    let mut s = 0x2545_f491_4f6c_dd1du64;
    Tensor::from_fn([n, h, w, c], |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 40) as f32 / (1u64 << 24) as f32
    })
}
