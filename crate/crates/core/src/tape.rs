//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value plus whatever
//! context the backward pass needs (argmax indices, dropout masks, softmax
//! probabilities). Nodes only ever reference earlier nodes, so the tape is
//! topologically sorted by construction and `backward` is a single reverse
//! sweep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::param::{ParamId, ParamSet};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the smaller operand of a Hadamard product lines up with the larger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `[N, C]` against `[N, H, W, C]`.
    ChannelBatched,
    /// `[C]` against `[N, H, W, C]`.
    ChannelShared,
    /// `[N, H, W, 1]` against `[N, H, W, C]`.
    Pixel,
}

impl Broadcast {
    fn classify(big: &[usize], small: &[usize]) -> Option<Self> {
        if big == small {
            return Some(Broadcast::Same);
        }
        match (big, small) {
            ([n, _, _, c], [sn, sc]) if n == sn && c == sc => Some(Broadcast::ChannelBatched),
            ([_, _, _, c], [sc]) if c == sc => Some(Broadcast::ChannelShared),
            ([n, h, w, _], [sn, sh, sw, 1]) if n == sn && h == sh && w == sw => {
                Some(Broadcast::Pixel)
            }
            _ => None,
        }
    }

    /// Index into the small operand for flat index `i` of the big one.
    #[inline]
    fn small_index(self, i: usize, hwc: usize, c: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::ChannelBatched => (i / hwc) * c + i % c,
            Broadcast::ChannelShared => i % c,
            Broadcast::Pixel => i / c,
        }
    }
}

enum Op<T> {
    Leaf,
    Param,
    Conv2d(ConvGeom),
    MaxPool2 { argmax: Vec<usize> },
    GlobalAvgPool,
    GlobalMaxPool { scale: T, argmax: Vec<usize> },
    Add,
    Mul { kind: Broadcast, big: usize },
    Dense,
    Relu,
    Sigmoid,
    Softmax,
    CrossEntropy { labels: Vec<usize>, probs: Vec<T> },
    ChannelMeanMax { argmax: Vec<usize> },
    Bilinear,
    SignedSqrt,
    L2Normalize { norms: Vec<T> },
    Dropout { mask: Vec<T> },
    Reshape,
    Sum,
    Scale(T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(Var, ParamId)>,
    branches: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            branches: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Hash of every discrete branch taken in the forward pass (ReLU signs,
    /// pooling winners). Two evaluations with equal signatures lie on the same
    /// piecewise-smooth region, which is what finite differencing needs.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    fn mark(&mut self, x: u64) {
        self.branches ^= x;
        self.branches = self.branches.wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, vec![])
    }

    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let v = self.push(params.get(id).value.clone(), Op::Param, vec![]);
        self.params.push((v, id));
        v
    }

    pub fn param_named(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        Ok(self.param(params, params.id(name)?))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: Padding, stride: usize) -> Result<Var> {
        let g = ConvGeom::new(self.shape(x), self.shape(kernel), self.shape(bias), padding, stride)?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &g,
        );
        let value = Tensor::new(g.out_shape(), out)?;
        Ok(self.push(value, Op::Conv2d(g), vec![x, kernel, bias]))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4("maxpool2")?;
        let (n, h, w, c) = dims;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid_shape(
                "maxpool2",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), dims);
        for &a in &argmax {
            self.mark(a as u64);
        }
        let value = Tensor::new([n, h / 2, w / 2, c], out)?;
        Ok(self.push(value, Op::MaxPool2 { argmax }, vec![x]))
    }

    pub fn global_avg_pool(&mut self, y: Var) -> Result<Var> {
        let dims = self.value(y).dims4("global_avg_pool")?;
        let out = kernels::global_avg_pool_forward(self.value(y).data(), dims);
        let value = Tensor::new([dims.0, dims.3], out)?;
        Ok(self.push(value, Op::GlobalAvgPool, vec![y]))
    }

    /// Per-channel spatial maximum. With `literal_scale` the maximum is
    /// divided by `H * W`.
    pub fn global_max_pool(&mut self, y: Var, literal_scale: bool) -> Result<Var> {
        let dims = self.value(y).dims4("global_max_pool")?;
        let scale = if literal_scale {
            T::one() / T::lit((dims.1 * dims.2) as f64)
        } else {
            T::one()
        };
        let (out, argmax) = kernels::global_max_pool_forward(self.value(y).data(), dims, scale);
        for &a in &argmax {
            self.mark(a as u64);
        }
        let value = Tensor::new([dims.0, dims.3], out)?;
        Ok(self.push(value, Op::GlobalMaxPool { scale, argmax }, vec![y]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add, vec![a, b]))
    }

    /// Elementwise product. Besides equal shapes, a `[N, C]` or `[C]` vector
    /// broadcasts over the spatial dims of an `[N, H, W, C]` map, and an
    /// `[N, H, W, 1]` mask broadcasts over its channels. Operand order is free.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (kind, big) = if let Some(k) = Broadcast::classify(sa, sb) {
            (k, 0)
        } else if let Some(k) = Broadcast::classify(sb, sa) {
            (k, 1)
        } else {
            return Err(Error::shape("hadamard", sa, sb));
        };
        let (bv, sv) = if big == 0 {
            (self.value(a), self.value(b))
        } else {
            (self.value(b), self.value(a))
        };
        let c = *bv.shape().last().unwrap();
        let hwc = hwc_of(bv.shape());
        let small = sv.data();
        let data = bv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * small[kind.small_index(i, hwc, c)])
            .collect();
        let value = Tensor::new(bv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { kind, big }, vec![a, b]))
    }

    pub fn dense(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("dense")?;
        let (wd, k) = self.value(weights).dims2("dense")?;
        if wd != d {
            return Err(Error::shape("dense", self.shape(x), self.shape(weights)));
        }
        if self.shape(bias) != [k] {
            return Err(Error::shape("dense bias", self.shape(weights), self.shape(bias)));
        }
        let out = kernels::dense_forward(
            self.value(x).data(),
            self.value(weights).data(),
            self.value(bias).data(),
            n,
            d,
            k,
        );
        let value = Tensor::new([n, k], out)?;
        Ok(self.push(value, Op::Dense, vec![x, weights, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let mut sig = 0u64;
        for (i, v) in self.value(x).data().iter().enumerate() {
            if *v > T::zero() {
                sig = sig.wrapping_mul(31).wrapping_add(i as u64 + 1);
            }
        }
        self.mark(sig);
        self.push(value, Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        self.push(value, Op::Sigmoid, vec![x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = *t.shape().last().unwrap();
        let value = Tensor::new(t.shape().to_vec(), kernels::softmax_rows(t.data(), cols))
            .expect("softmax preserves shape");
        self.push(value, Op::Softmax, vec![x])
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: {} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let data = self.value(logits).data();
        let lse = kernels::log_sum_exp_rows(data, k);
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| lse[r] - data[r * k + l])
            .sum();
        let loss = total / T::lit(n as f64);
        let probs = kernels::softmax_rows(data, k);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                labels: labels.to_vec(),
                probs,
            },
            vec![logits],
        ))
    }

    /// `[N, H, W, C]` to `[N, H, W, 2]`: per-pixel channel mean then channel max.
    pub fn channel_mean_max(&mut self, y: Var) -> Result<Var> {
        let dims = self.value(y).dims4("channel_mean_max")?;
        let (out, argmax) = kernels::channel_mean_max_forward(self.value(y).data(), dims);
        for &a in &argmax {
            self.mark(a as u64);
        }
        let value = Tensor::new([dims.0, dims.1, dims.2, 2], out)?;
        Ok(self.push(value, Op::ChannelMeanMax { argmax }, vec![y]))
    }

    /// Position-averaged outer product of two equally shaped feature maps,
    /// flattened to `[N, C * C]` (row index from `a`, column from `b`).
    pub fn bilinear(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("bilinear_pool", self.shape(a), self.shape(b)));
        }
        let dims = self.value(a).dims4("bilinear_pool")?;
        let out = kernels::bilinear_forward(self.value(a).data(), self.value(b).data(), dims);
        let value = Tensor::new([dims.0, dims.3 * dims.3], out)?;
        Ok(self.push(value, Op::Bilinear, vec![a, b]))
    }

    /// `sign(z) * sqrt(|z|)` elementwise.
    pub fn signed_sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::signed_sqrt);
        self.push(value, Op::SignedSqrt, vec![x])
    }

    /// Scales each row of an `[N, D]` tensor to unit L2 norm. All-zero rows
    /// stay zero.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (_, d) = self.value(x).dims2("l2_normalize")?;
        let t = self.value(x);
        let mut norms = Vec::with_capacity(t.shape()[0]);
        let mut data = Vec::with_capacity(t.numel());
        for (r, row) in t.data().chunks(d).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm > T::zero() {
                data.extend(row.iter().map(|&v| v / norm));
            } else {
                log::warn!("l2_normalize: row {r} is all zero, left unnormalized");
                data.extend(std::iter::repeat_n(T::zero(), d));
            }
            norms.push(norm);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::L2Normalize { norms }, vec![x]))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )
        .expect("dropout preserves shape");
        self.push(value, Op::Dropout { mask }, vec![x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape, vec![x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum, vec![x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(factor), vec![x])
    }

    /// Back-propagates from a scalar node. The returned [`Gradients`] holds
    /// the derivative of `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.value(loss);
        if !ls.is_scalar() {
            return Err(Error::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (input, gin) in self.local_grads(node, &g) {
                accumulate(&mut grads[input.0], gin);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    /// Vector-Jacobian products for one node.
    fn local_grads(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let inp = |k: usize| &self.nodes[node.inputs[k].0].value;
        let v = |k: usize| node.inputs[k];
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::Conv2d(geom) => {
                let (gx, gk, gb) = kernels::conv2d_backward(inp(0).data(), inp(1).data(), g, geom);
                vec![(v(0), gx), (v(1), gk), (v(2), gb)]
            }
            Op::MaxPool2 { argmax } => {
                vec![(v(0), kernels::scatter_argmax(inp(0).numel(), argmax, g))]
            }
            Op::GlobalMaxPool { scale, argmax } => {
                let scaled: Vec<T> = g.iter().map(|&x| x * *scale).collect();
                vec![(v(0), kernels::scatter_argmax(inp(0).numel(), argmax, &scaled))]
            }
            Op::ChannelMeanMax { argmax } => {
                let dims = inp(0).dims4("channel_mean_max").expect("rank checked in forward");
                vec![(v(0), kernels::channel_mean_max_backward(g, argmax, dims))]
            }
            Op::GlobalAvgPool => {
                let dims = inp(0).dims4("global_avg_pool").expect("rank checked in forward");
                vec![(v(0), kernels::global_avg_pool_backward(g, dims))]
            }
            Op::Add => vec![(v(0), g.to_vec()), (v(1), g.to_vec())],
            Op::Mul { kind, big } => {
                let (bi, si) = (*big, 1 - *big);
                let (bt, st) = (inp(bi), inp(si));
                let c = *bt.shape().last().unwrap();
                let hwc = hwc_of(bt.shape());
                let (bd, sd) = (bt.data(), st.data());
                let mut gb = Vec::with_capacity(bd.len());
                let mut gs = vec![T::zero(); sd.len()];
                for (i, (&gi, &x)) in g.iter().zip(bd).enumerate() {
                    let j = kind.small_index(i, hwc, c);
                    gb.push(gi * sd[j]);
                    gs[j] = gs[j] + gi * x;
                }
                vec![(v(bi), gb), (v(si), gs)]
            }
            Op::Dense => {
                let (n, d) = inp(0).dims2("dense").expect("checked");
                let k = inp(1).shape()[1];
                let (gx, gw, gb) = kernels::dense_backward(inp(0).data(), inp(1).data(), g, n, d, k);
                vec![(v(0), gx), (v(1), gw), (v(2), gb)]
            }
            Op::Relu => {
                let gx = inp(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > T::zero() { gi } else { T::zero() })
                    .collect();
                vec![(v(0), gx)]
            }
            Op::Sigmoid => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * y * (T::one() - y))
                    .collect();
                vec![(v(0), gx)]
            }
            Op::Softmax => {
                let cols = *node.value.shape().last().unwrap();
                let mut gx = Vec::with_capacity(g.len());
                for (yr, gr) in node.value.data().chunks(cols).zip(g.chunks(cols)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gi)| y * gi).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&y, &gi)| y * (gi - dot)));
                }
                vec![(v(0), gx)]
            }
            Op::CrossEntropy { labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let s = g[0] / T::lit(n as f64);
                let mut gx: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] = gx[r * k + l] - s;
                }
                vec![(v(0), gx)]
            }
            Op::Bilinear => {
                let dims = inp(0).dims4("bilinear_pool").expect("checked");
                let (ga, gs) = kernels::bilinear_backward(inp(0).data(), inp(1).data(), g, dims);
                vec![(v(0), ga), (v(1), gs)]
            }
            Op::SignedSqrt => {
                let gx = inp(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&z, &gi)| gi * kernels::signed_sqrt_grad(z))
                    .collect();
                vec![(v(0), gx)]
            }
            Op::L2Normalize { norms } => {
                let d = node.value.shape()[1];
                let mut gx = Vec::with_capacity(g.len());
                for ((yr, gr), &norm) in node.value.data().chunks(d).zip(g.chunks(d)).zip(norms) {
                    if norm > T::zero() {
                        let dot: T = yr.iter().zip(gr).map(|(&y, &gi)| y * gi).sum();
                        gx.extend(yr.iter().zip(gr).map(|(&y, &gi)| (gi - y * dot) / norm));
                    } else {
                        gx.extend(std::iter::repeat_n(T::zero(), d));
                    }
                }
                vec![(v(0), gx)]
            }
            Op::Dropout { mask } => vec![(v(0), g.iter().zip(mask).map(|(&gi, &m)| gi * m).collect())],
            Op::Reshape => vec![(v(0), g.to_vec())],
            Op::Sum => vec![(v(0), vec![g[0]; inp(0).numel()])],
            Op::Scale(f) => vec![(v(0), g.iter().map(|&gi| gi * *f).collect())],
        }
    }
}

fn hwc_of(shape: &[usize]) -> usize {
    shape[1..].iter().product::<usize>().max(1)
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, ParamId)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a node, or `None` if the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Overwrites every parameter gradient in `params`. Parameters that never
    /// reached the loss get zeros; parameters used several times are summed.
    pub fn write_to(&self, params: &mut ParamSet<T>) -> Result<()> {
        params.zero_grads();
        for &(var, id) in &self.params {
            if let Some(g) = self.get(var) {
                params.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut ps = ParamSet::new();
        let id = ps.insert("p", t(&[2, 3], &[1., -2., 3., 0.5, 7., -1.])).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let loss = tape.sum(p);
        tape.backward(loss).unwrap().write_to(&mut ps).unwrap();
        assert!(ps.get(id).grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let mut ps = ParamSet::new();
        let vals = [0.3, -1.5, 2.0, 4.0];
        let id = ps.insert("p", t(&[4], &vals)).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, id);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        tape.backward(loss).unwrap().write_to(&mut ps).unwrap();
        assert_eq!(ps.get(id).grad.data(), &vals);
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient() {
        let mut ps = ParamSet::new();
        let used = ps.insert("used", t(&[2], &[1., 2.])).unwrap();
        let unused = ps.insert("unused", t(&[3], &[1., 2., 3.])).unwrap();
        ps.get_mut(unused).grad = t(&[3], &[9., 9., 9.]);
        let mut tape = Tape::new();
        let p = tape.param(&ps, used);
        let loss = tape.sum(p);
        tape.backward(loss).unwrap().write_to(&mut ps).unwrap();
        assert!(ps.get(unused).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::<f64>::zeros([2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn maxpool_routes_ties_to_first_element() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 2, 2, 1], &[5., 5., 5., 5.]));
        let y = tape.maxpool2(x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::<f64>::zeros([1, 3, 4, 1]));
        assert!(tape.maxpool2(x).is_err());
    }

    #[test]
    fn hadamard_rejects_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::<f64>::zeros([1, 2, 2, 3]));
        let b = tape.input(Tensor::<f64>::zeros([2]));
        assert!(tape.mul(a, b).is_err());
        let c = tape.input(Tensor::<f64>::zeros([1, 2, 2, 2]));
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let z = tape.input(Tensor::<f64>::zeros([2, 3]));
        assert!(matches!(
            tape.cross_entropy(z, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn l2_normalize_zero_row_stays_zero() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2, 2], &[0., 0., 3., 4.]));
        let y = tape.l2_normalize(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0., 0.6, 0.8]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(&g.get(x).unwrap().data()[..2], &[0., 0.]);
    }
}
