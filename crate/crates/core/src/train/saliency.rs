use crate::error::{Error, Result};
use crate::model::{forward_on_tape, Mode, ModelSpec};
use crate::param::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Saliency of an arbitrary differentiable scorer. `logits` receives the
/// `[1, H, W, 3]` input node and must return `[1, K]` logits.
pub fn saliency_with<F>(image: &Tensor<f32>, class_index: usize, logits: F) -> Result<Tensor<f32>>
where
    F: FnOnce(&mut Tape<f32>, Var) -> Result<Var>,
{
    let [h, w, 3] = *image.shape() else {
        return Err(Error::invalid_shape("saliency", format!("expected [H, W, 3], got {:?}", image.shape())));
    };
    let mut tape = Tape::new();
    let x = tape.input(image.clone().reshape([1, h, w, 3])?);
    let z = logits(&mut tape, x)?;
    let (_, k) = tape.value(z).dims2("saliency")?;
    if class_index >= k {
        return Err(Error::LabelOutOfRange {
            label: class_index,
            classes: k,
        });
    }
    let onehot = tape.input(Tensor::from_fn([1, k], |j| if j == class_index { 1.0 } else { 0.0 }));
    let picked = tape.mul(z, onehot)?;
    let score = tape.sum(picked);
    let grads = tape.backward(score)?;

    let mut map = vec![0.0f32; h * w];
    if let Some(g) = grads.get(x) {
        for (m, px) in map.iter_mut().zip(g.data().chunks(3)) {
            *m = px.iter().fold(0.0f32, |a, v| a.max(v.abs()));
        }
    }
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(0.0f32, f32::max);
    if hi > lo {
        map.iter_mut().for_each(|m| *m = (*m - lo) / (hi - lo));
    } else if hi > 0.0 {
        // uniform non-zero saliency
        map.fill(1.0);
    }
    Tensor::new([h, w], map)
}

/// `|d logit[class] / d pixel|`, max over color channels, min-max scaled to
/// `[0, 1]`. A map that is zero everywhere stays zero.
pub fn saliency_map(spec: &ModelSpec, params: &ParamSet<f32>, image: &Tensor<f32>, class_index: usize) -> Result<Tensor<f32>> {
    saliency_with(image, class_index, |tape, x| Ok(forward_on_tape(tape, spec, params, x, Mode::Eval)?.logits))
}
