//! Independent nested-loop reference implementations. These deliberately
//! share no code with the library: plain `f64` slices, explicit indexing,
//! textbook loop order.

#![allow(dead_code, clippy::too_many_arguments)]

pub type Dims4 = (usize, usize, usize, usize);

#[inline]
pub fn at(d: Dims4, n: usize, i: usize, j: usize, c: usize) -> usize {
    ((n * d.1 + i) * d.2 + j) * d.3 + c
}

/// Direct convolution. `k` is `[kh, kw, cin, cout]`.
pub fn conv2d(
    x: &[f64],
    xd: Dims4,
    k: &[f64],
    kh: usize,
    kw: usize,
    cout: usize,
    b: &[f64],
    same: bool,
    stride: usize,
) -> (Vec<f64>, Dims4) {
    let (n, h, w, cin) = xd;
    let (ph, pw) = if same { ((kh - 1) / 2, (kw - 1) / 2) } else { (0, 0) };
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w + 2 * pw - kw) / stride + 1;
    let od = (n, oh, ow, cout);
    let mut out = vec![0.0; n * oh * ow * cout];
    for bn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut s = b[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - ph as isize;
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                s += x[at(xd, bn, iy as usize, ix as usize, ci)]
                                    * k[((ky * kw + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[at(od, bn, oy, ox, co)] = s;
                }
            }
        }
    }
    (out, od)
}

pub fn maxpool2(x: &[f64], d: Dims4) -> (Vec<f64>, Dims4) {
    let od = (d.0, d.1 / 2, d.2 / 2, d.3);
    let mut out = vec![0.0; od.0 * od.1 * od.2 * od.3];
    for n in 0..od.0 {
        for i in 0..od.1 {
            for j in 0..od.2 {
                for c in 0..od.3 {
                    let mut m = f64::NEG_INFINITY;
                    for di in 0..2 {
                        for dj in 0..2 {
                            m = m.max(x[at(d, n, 2 * i + di, 2 * j + dj, c)]);
                        }
                    }
                    out[at(od, n, i, j, c)] = m;
                }
            }
        }
    }
    (out, od)
}

pub fn gap(y: &[f64], d: Dims4) -> Vec<f64> {
    let mut out = vec![0.0; d.0 * d.3];
    for n in 0..d.0 {
        for c in 0..d.3 {
            let mut s = 0.0;
            for i in 0..d.1 {
                for j in 0..d.2 {
                    s += y[at(d, n, i, j, c)];
                }
            }
            out[n * d.3 + c] = s / (d.1 * d.2) as f64;
        }
    }
    out
}

pub fn gmp(y: &[f64], d: Dims4, literal_scale: bool) -> Vec<f64> {
    let mut out = vec![0.0; d.0 * d.3];
    for n in 0..d.0 {
        for c in 0..d.3 {
            let mut m = f64::NEG_INFINITY;
            for i in 0..d.1 {
                for j in 0..d.2 {
                    m = m.max(y[at(d, n, i, j, c)]);
                }
            }
            out[n * d.3 + c] = if literal_scale { m / (d.1 * d.2) as f64 } else { m };
        }
    }
    out
}

pub fn dense(x: &[f64], n: usize, d: usize, w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        for j in 0..k {
            let mut s = b[j];
            for i in 0..d {
                s += x[r * d + i] * w[i * k + j];
            }
            out[r * k + j] = s;
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Transcription of the channel attention mask
/// `sigmoid(W1 * reduce(g(Y)·Y + f(Y)·Y))` with average reduction.
pub fn channel_attention(
    y: &[f64],
    d: Dims4,
    w1: &[f64],
    b: &[f64],
    literal_scale: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (nb, h, w, c) = d;
    let g = gap(y, d);
    let f = gmp(y, d, literal_scale);
    let mut a = vec![0.0; nb * h * w * c];
    for n in 0..nb {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let v = y[at(d, n, i, j, ch)];
                    a[at(d, n, i, j, ch)] = g[n * c + ch] * v + f[n * c + ch] * v;
                }
            }
        }
    }
    let reduced = gap(&a, d);
    let z = dense(&reduced, nb, c, w1, c, b);
    let mask: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let mut yc = vec![0.0; y.len()];
    for n in 0..nb {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    yc[at(d, n, i, j, ch)] = mask[n * c + ch] * y[at(d, n, i, j, ch)];
                }
            }
        }
    }
    (mask, yc)
}

/// Spatial attention: 7x7 same conv over [mean_c, max_c], sigmoid.
pub fn spatial_attention(y: &[f64], d: Dims4, k: &[f64], b: f64) -> (Vec<f64>, Vec<f64>) {
    let (nb, h, w, c) = d;
    let sd = (nb, h, w, 2);
    let mut stats = vec![0.0; nb * h * w * 2];
    for n in 0..nb {
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                let mut m = f64::NEG_INFINITY;
                for ch in 0..c {
                    let v = y[at(d, n, i, j, ch)];
                    s += v;
                    m = m.max(v);
                }
                stats[at(sd, n, i, j, 0)] = s / c as f64;
                stats[at(sd, n, i, j, 1)] = m;
            }
        }
    }
    let (z, _) = conv2d(&stats, sd, k, 7, 7, 1, &[b], true, 1);
    let mask: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let mut ys = vec![0.0; y.len()];
    for n in 0..nb {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    ys[at(d, n, i, j, ch)] = mask[(n * h + i) * w + j] * y[at(d, n, i, j, ch)];
                }
            }
        }
    }
    (mask, ys)
}

/// Position-averaged outer product before any normalization.
pub fn bilinear_raw(a: &[f64], s: &[f64], d: Dims4) -> Vec<f64> {
    let (nb, h, w, c) = d;
    let mut out = vec![0.0; nb * c * c];
    for n in 0..nb {
        for p in 0..c {
            for q in 0..c {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        acc += a[at(d, n, i, j, p)] * s[at(d, n, i, j, q)];
                    }
                }
                out[(n * c + p) * c + q] = acc / (h * w) as f64;
            }
        }
    }
    out
}

/// Signed square root then per-sample L2 normalization.
pub fn bilinear_normalized(a: &[f64], s: &[f64], d: Dims4) -> Vec<f64> {
    let c2 = d.3 * d.3;
    let raw = bilinear_raw(a, s, d);
    let mut out = Vec::with_capacity(raw.len());
    for row in raw.chunks(c2) {
        let r: Vec<f64> = row.iter().map(|&z| z.signum() * z.abs().sqrt()).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(r.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }));
    }
    out
}

pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = &logits[r * k..(r + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l].exp() / z).ln();
    }
    total / labels.len() as f64
}

/// Deterministic pseudo-random values in `[lo, hi)` (xorshift), independent
/// of the `rand` crate.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.range(lo, hi)).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The generated 60-image dataset under a fresh temporary directory.
pub fn synthetic_manifest(seed: u64) -> (tempfile::TempDir, csab::DatasetManifest) {
    use csab::dataset::{scan_dataset, synthetic, ExcludeList};
    let dir = tempfile::tempdir().unwrap();
    synthetic::generate(dir.path(), 32, seed).unwrap();
    let (m, report) = scan_dataset(dir.path(), &csab::LabelMap::default(), &ExcludeList::default()).unwrap();
    assert!(report.skipped.is_empty());
    (dir, m)
}
