//! Forward and backward kernels on raw NHWC buffers. The tape in
//! [`crate::tape`] does the bookkeeping; everything numeric lives here.

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on each side; preserves spatial size at stride 1.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        k: &[usize],
        b: &[usize],
        padding: Padding,
        stride: usize,
    ) -> Result<Self> {
        let (n, h, w, cin) = match *x {
            [n, h, w, c] => (n, h, w, c),
            _ => return Err(Error::invalid_shape("conv2d", format!("input must be NHWC, got {x:?}"))),
        };
        let (kh, kw, kcin, cout) = match *k {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(Error::invalid_shape(
                    "conv2d",
                    format!("kernel must be [kh, kw, cin, cout], got {k:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", x, k));
        }
        if b != [cout] {
            return Err(Error::shape("conv2d bias", k, b));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid_shape(
                "conv2d",
                format!("kernel spatial dims must be odd, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape("conv2d valid", x, k));
                }
                (0, 0)
            }
        };
        let oh = (h + 2 * pad_h - kh) / stride + 1;
        let ow = (w + 2 * pad_w - kw) / stride + 1;
        Ok(Self {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad_h,
            pad_w,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.oh, self.ow, self.cout]
    }

    /// Input coordinate for an output coordinate and kernel offset, or `None`
    /// when it falls into the zero padding.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(pad)
            .filter(|&i| i < limit)
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], k: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let acc = &mut out[o..o + g.cout];
                acc.copy_from_slice(b);
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_h, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_w, g.w) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let kb = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[xi + ci];
                            let row = &k[kb + ci * g.cout..kb + (ci + 1) * g.cout];
                            for (a, &kv) in acc.iter_mut().zip(row) {
                                *a = *a + xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    k: &[T],
    gout: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((n * g.oh + oy) * g.ow + ox) * g.cout;
                let go = &gout[o..o + g.cout];
                for (a, &v) in gb.iter_mut().zip(go) {
                    *a = *a + v;
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_h, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_w, g.w) else { continue };
                        let xi = ((n * g.h + iy) * g.w + ix) * g.cin;
                        let kb = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[xi + ci];
                            let r = kb + ci * g.cout;
                            let mut dot = T::zero();
                            for co in 0..g.cout {
                                dot = dot + k[r + co] * go[co];
                                gk[r + co] = gk[r + co] + xv * go[co];
                            }
                            gx[xi + ci] = gx[xi + ci] + dot;
                        }
                    }
                }
            }
        }
    }
    (gx, gk, gb)
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, per output,
/// the flat index of the winning input (first in row-major window order).
pub(crate) fn maxpool2_forward<T: Real>(
    x: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(out.capacity());
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if best == usize::MAX || x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

/// Scatters `gout` onto the recorded argmax positions.
pub(crate) fn scatter_argmax<T: Real>(len: usize, argmax: &[usize], gout: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); len];
    for (&i, &g) in argmax.iter().zip(gout) {
        gx[i] = gx[i] + g;
    }
    gx
}

pub(crate) fn global_avg_pool_forward<T: Real>(
    y: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> Vec<T> {
    let inv = T::one() / T::lit((h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        let acc = &mut out[b * c..(b + 1) * c];
        for p in 0..h * w {
            let px = &y[(b * h * w + p) * c..(b * h * w + p + 1) * c];
            for (a, &v) in acc.iter_mut().zip(px) {
                *a = *a + v;
            }
        }
        for a in acc.iter_mut() {
            *a = *a * inv;
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward<T: Real>(
    gout: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> Vec<T> {
    let inv = T::one() / T::lit((h * w) as f64);
    let mut gx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for _ in 0..h * w {
            gx.extend(gout[b * c..(b + 1) * c].iter().map(|&g| g * inv));
        }
    }
    gx
}

/// Per-channel spatial max, multiplied by `scale`. Returns values and argmax.
pub(crate) fn global_max_pool_forward<T: Real>(
    y: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    scale: T,
) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let mut best = b * h * w * c + ch;
            for p in 1..h * w {
                let i = (b * h * w + p) * c + ch;
                if y[i] > y[best] {
                    best = i;
                }
            }
            out.push(y[best] * scale);
            arg.push(best);
        }
    }
    (out, arg)
}

/// Stacks the per-pixel channel mean and channel max into a 2-channel map.
pub(crate) fn channel_mean_max_forward<T: Real>(
    y: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let inv = T::one() / T::lit(c as f64);
    let mut out = Vec::with_capacity(n * h * w * 2);
    let mut arg = Vec::with_capacity(n * h * w);
    for p in 0..n * h * w {
        let px = &y[p * c..(p + 1) * c];
        let mut best = 0;
        let mut sum = T::zero();
        for (i, &v) in px.iter().enumerate() {
            sum = sum + v;
            if v > px[best] {
                best = i;
            }
        }
        out.push(sum * inv);
        out.push(px[best]);
        arg.push(p * c + best);
    }
    (out, arg)
}

pub(crate) fn channel_mean_max_backward<T: Real>(
    gout: &[T],
    argmax: &[usize],
    (n, h, w, c): (usize, usize, usize, usize),
) -> Vec<T> {
    let inv = T::one() / T::lit(c as f64);
    let mut gx = vec![T::zero(); n * h * w * c];
    for p in 0..n * h * w {
        let gm = gout[2 * p] * inv;
        for v in &mut gx[p * c..(p + 1) * c] {
            *v = gm;
        }
        let i = argmax[p];
        gx[i] = gx[i] + gout[2 * p + 1];
    }
    gx
}

/// Position-averaged outer product: `out[n, a*C + b] = mean_p a[n,p,a] * s[n,p,b]`.
pub(crate) fn bilinear_forward<T: Real>(
    a: &[T],
    s: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> Vec<T> {
    let inv = T::one() / T::lit((h * w) as f64);
    let mut out = vec![T::zero(); n * c * c];
    for b in 0..n {
        let acc = &mut out[b * c * c..(b + 1) * c * c];
        for p in 0..h * w {
            let base = (b * h * w + p) * c;
            let pa = &a[base..base + c];
            let ps = &s[base..base + c];
            for (i, &av) in pa.iter().enumerate() {
                let row = &mut acc[i * c..(i + 1) * c];
                for (r, &sv) in row.iter_mut().zip(ps) {
                    *r = *r + av * sv;
                }
            }
        }
        for v in acc.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Real>(
    a: &[T],
    s: &[T],
    gout: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
) -> (Vec<T>, Vec<T>) {
    let inv = T::one() / T::lit((h * w) as f64);
    let mut ga = vec![T::zero(); a.len()];
    let mut gs = vec![T::zero(); s.len()];
    for b in 0..n {
        let g = &gout[b * c * c..(b + 1) * c * c];
        for p in 0..h * w {
            let base = (b * h * w + p) * c;
            for i in 0..c {
                let av = a[base + i];
                let mut dot = T::zero();
                for j in 0..c {
                    let gij = g[i * c + j] * inv;
                    dot = dot + gij * s[base + j];
                    gs[base + j] = gs[base + j] + gij * av;
                }
                ga[base + i] = ga[base + i] + dot;
            }
        }
    }
    (ga, gs)
}

/// `x[N,D] @ w[D,K] + b[K]`.
pub(crate) fn dense_forward<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, d: usize, k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * k);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mut acc = b.to_vec();
        for (i, &xv) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[i * k..(i + 1) * k]) {
                *a = *a + xv * wv;
            }
        }
        out.extend(acc);
    }
    out
}

pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    n: usize,
    d: usize,
    k: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); n * d];
    let mut gw = vec![T::zero(); d * k];
    let mut gb = vec![T::zero(); k];
    for r in 0..n {
        let go = &gout[r * k..(r + 1) * k];
        for (a, &g) in gb.iter_mut().zip(go) {
            *a = *a + g;
        }
        for i in 0..d {
            let xv = x[r * d + i];
            let mut dot = T::zero();
            for j in 0..k {
                dot = dot + w[i * k + j] * go[j];
                gw[i * k + j] = gw[i * k + j] + xv * go[j];
            }
            gx[r * d + i] = dot;
        }
    }
    (gx, gw, gb)
}

/// Row-wise softmax over the last axis with max subtraction.
pub(crate) fn softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z = z + e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / z;
        }
    }
    out
}

/// Row-wise `log(sum(exp(x)))` using max subtraction.
pub(crate) fn log_sum_exp_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    x.chunks(cols)
        .map(|row| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
        })
        .collect()
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Floor on |z| used in the signed-sqrt derivative, which is unbounded at 0.
pub(crate) const SIGNED_SQRT_GRAD_FLOOR: f64 = 1e-12;

pub(crate) fn signed_sqrt<T: Real>(z: T) -> T {
    if z > T::zero() {
        z.sqrt()
    } else if z < T::zero() {
        -(-z).sqrt()
    } else {
        T::zero()
    }
}

pub(crate) fn signed_sqrt_grad<T: Real>(z: T) -> T {
    let m = z.abs().max(T::lit(SIGNED_SQRT_GRAD_FLOOR));
    T::lit(0.5) / m.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-1000.0f32).is_finite());
    }

    #[test]
    fn conv_geometry_same_and_valid() {
        let g = ConvGeom::new(&[1, 5, 7, 2], &[3, 3, 2, 4], &[4], Padding::Same, 1).unwrap();
        assert_eq!(g.out_shape(), [1, 5, 7, 4]);
        let g = ConvGeom::new(&[1, 5, 7, 2], &[3, 3, 2, 4], &[4], Padding::Valid, 2).unwrap();
        assert_eq!(g.out_shape(), [1, 2, 3, 4]);
        assert!(ConvGeom::new(&[1, 5, 5, 2], &[2, 2, 2, 4], &[4], Padding::Same, 1).is_err());
        assert!(ConvGeom::new(&[1, 2, 2, 2], &[3, 3, 2, 4], &[4], Padding::Valid, 1).is_err());
        assert!(ConvGeom::new(&[1, 5, 5, 3], &[3, 3, 2, 4], &[4], Padding::Same, 1).is_err());
    }

    #[test]
    fn signed_sqrt_matches_hand_values() {
        assert_eq!(signed_sqrt(4.0f64), 2.0);
        assert_eq!(signed_sqrt(-9.0f64), -3.0);
        assert_eq!(signed_sqrt(0.0f64), 0.0);
        assert!(signed_sqrt_grad(0.0f64).is_finite());
    }
}
