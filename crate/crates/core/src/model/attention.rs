//! The CSAB head: channel attention, spatial attention and bilinear pooling,
//! each expressed as a composition of tape operations.

use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Channel attention on a `[N, H, W, C]` feature map `y`.
///
/// The pooled context vectors `g(Y)` (average) and `f(Y)` (max, optionally
/// divided by `H * W`) each reweight `Y` elementwise; their sum is reduced to
/// `[N, C]` by global average pooling and mapped through the fully connected
/// weights `w1: [C, C]` plus `bias: [C]` and a sigmoid. Returns
/// `(mask [N, C], mask ⊙ Y)`.
pub fn channel_attention<T: Real>(
    tape: &mut Tape<T>,
    y: Var,
    w1: Var,
    bias: Var,
    literal_scale: bool,
) -> Result<(Var, Var)> {
    let (_, _, _, c) = tape.value(y).dims4("channel_attention")?;
    if tape.value(w1).shape() != [c, c] || tape.value(bias).shape() != [c] {
        return Err(Error::ParamMismatch {
            name: "channel attention".into(),
            reason: format!(
                "feature map has {c} channels but w1 is {:?} and bias is {:?}",
                tape.value(w1).shape(),
                tape.value(bias).shape()
            ),
        });
    }
    let avg = tape.global_avg_pool(y)?;
    let max = tape.global_max_pool(y, literal_scale)?;
    let avg_ctx = tape.mul(avg, y)?;
    let max_ctx = tape.mul(max, y)?;
    let combined = tape.add(avg_ctx, max_ctx)?;
    let reduced = tape.global_avg_pool(combined)?;
    let logits = tape.dense(reduced, w1, bias)?;
    let mask = tape.sigmoid(logits);
    let attended = tape.mul(mask, y)?;
    Ok((mask, attended))
}

/// Spatial attention: a 7x7 same-padded convolution over the stacked
/// per-pixel channel mean and channel max, then a sigmoid. `kernel` is
/// `[7, 7, 2, 1]`. Returns `(mask [N, H, W, 1], mask ⊙ Y)`.
pub fn spatial_attention<T: Real>(
    tape: &mut Tape<T>,
    y: Var,
    kernel: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let stats = tape.channel_mean_max(y)?;
    let logits = tape.conv2d(stats, kernel, bias, Padding::Same, 1)?;
    let mask = tape.sigmoid(logits);
    let attended = tape.mul(mask, y)?;
    Ok((mask, attended))
}

/// Bilinear pooling of the two attended maps: position-averaged outer
/// product, signed square root, then L2 normalization. `[N, C * C]`.
pub fn bilinear_pool<T: Real>(tape: &mut Tape<T>, yc: Var, ys: Var) -> Result<Var> {
    let outer = tape.bilinear(yc, ys)?;
    let rooted = tape.signed_sqrt(outer);
    tape.l2_normalize(rooted)
}
