use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{bilinear_pool, channel_attention, spatial_attention};
use super::spec::{HeadKind, ModelSpec, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::param::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Whether dropout is active. The RNG drives the dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Tape handles for the interesting intermediate values of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Backbone output `Y`.
    pub features: Var,
    pub channel_mask: Option<Var>,
    pub spatial_mask: Option<Var>,
    pub logits: Var,
}

/// He-uniform fan-in initialization for every weight, zero biases.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ParamSet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for slot in spec.param_layout() {
        let value = if slot.is_bias {
            Tensor::zeros(slot.shape)
        } else {
            let bound = (6.0 / slot.fan_in as f64).sqrt();
            Tensor::from_fn(slot.shape, |_| T::lit(rng.gen_range(-bound..bound)))
        };
        params.insert(slot.name, value)?;
    }
    Ok(params)
}

/// Records the full model on `tape`, starting from an `[N, H, W, 3]` input node.
pub fn forward_on_tape<T: Real>(
    tape: &mut Tape<T>,
    spec: &ModelSpec,
    params: &ParamSet<T>,
    input: Var,
    mode: Mode<'_>,
) -> Result<ForwardVars> {
    spec.check_params(params)?;
    let (_, h, w, c) = tape.value(input).dims4("forward")?;
    if (h, w) != spec.input_size || c != INPUT_CHANNELS {
        let (eh, ew) = spec.input_size;
        return Err(Error::shape("forward", tape.value(input).shape(), &[0, eh, ew, INPUT_CHANNELS]));
    }

    let mut x = input;
    for (bi, block) in spec.backbone.iter().enumerate() {
        for ci in 0..block.convs {
            let k = tape.param_named(params, &format!("backbone.block{bi}.conv{ci}.kernel"))?;
            let b = tape.param_named(params, &format!("backbone.block{bi}.conv{ci}.bias"))?;
            x = tape.conv2d(x, k, b, Padding::Same, 1)?;
            x = tape.relu(x);
        }
        x = tape.maxpool2(x)?;
    }
    let features = x;

    match spec.head {
        HeadKind::Csab => {
            let w1 = tape.param_named(params, "head.channel.w1")?;
            let cb = tape.param_named(params, "head.channel.bias")?;
            let (cmask, yc) = channel_attention(tape, features, w1, cb, spec.gmp_literal_scale)?;
            let sk = tape.param_named(params, "head.spatial.kernel")?;
            let sb = tape.param_named(params, "head.spatial.bias")?;
            let (smask, ys) = spatial_attention(tape, features, sk, sb)?;
            let pooled = bilinear_pool(tape, yc, ys)?;
            let fw = tape.param_named(params, "head.bilinear.weights")?;
            let fb = tape.param_named(params, "head.bilinear.bias")?;
            let logits = tape.dense(pooled, fw, fb)?;
            Ok(ForwardVars {
                features,
                channel_mask: Some(cmask),
                spatial_mask: Some(smask),
                logits,
            })
        }
        HeadKind::Plain => {
            let mut pooled = tape.global_avg_pool(features)?;
            if let Mode::Train(rng) = mode {
                pooled = tape.dropout(pooled, spec.dropout, rng);
            }
            let fw = tape.param_named(params, "head.fc.weights")?;
            let fb = tape.param_named(params, "head.fc.bias")?;
            let logits = tape.dense(pooled, fw, fb)?;
            Ok(ForwardVars {
                features,
                channel_mask: None,
                spatial_mask: None,
                logits,
            })
        }
    }
}

/// Inference-mode logits `[N, num_classes]` for a batch `[N, H, W, 3]`.
pub fn forward<T: Real>(spec: &ModelSpec, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let input = tape.input(batch.clone());
    let out = forward_on_tape(&mut tape, spec, params, input, Mode::Eval)?;
    Ok(tape.value(out.logits).clone())
}

/// Inference-mode class probabilities.
pub fn predict_proba<T: Real>(spec: &ModelSpec, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let logits = forward(spec, params, batch)?;
    let k = spec.num_classes;
    Tensor::new(logits.shape().to_vec(), crate::kernels::softmax_rows(logits.data(), k))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
