//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::ParamSet;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink or changed a
    /// pooling winner; the central difference is meaningless there.
    pub skipped: usize,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Same metric as `max_rel_error`, over the skipped coordinates.
    pub max_rel_error_skipped: f64,
    /// `(parameter name, checked, skipped)` per parameter.
    pub per_param: Vec<(String, usize, usize)>,
}

impl GradCheckReport {
    /// Smallest number of checked coordinates over all parameters.
    pub fn min_checked(&self) -> usize {
        self.per_param.iter().map(|p| p.1).min().unwrap_or(0)
    }
}

/// Compares the tape gradient of the scalar returned by `build` against
/// central differences for every parameter in `params`.
///
/// Coordinates are visited in a seeded random order until `samples_per_param`
/// of them have been checked or the tensor is exhausted. Coordinates where
/// either perturbed evaluation takes a different discrete branch than the
/// unperturbed one are skipped and replaced by the next in line.
pub fn finite_diff_check<F>(
    params: &ParamSet<f64>,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut analytic = params.clone();
    let base_sig = {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params)?;
        tape.backward(loss)?.write_to(&mut analytic)?;
        tape.branch_signature()
    };
    let mut eval = |ps: &ParamSet<f64>| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, ps)?;
        Ok((tape.value(loss).data()[0], tape.branch_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for pi in 0..params.len() {
        let id = crate::param::ParamId(pi);
        let numel = params.get(id).value.numel();
        let order = sample(&mut rng, numel, numel).into_vec();
        let (mut checked, mut skipped) = (0, 0);
        for i in order {
            if checked == samples_per_param {
                break;
            }
            let orig = params.get(id).value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + epsilon;
            let (up, sig_up) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - epsilon;
            let (down, sig_down) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.get(id).grad.data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if sig_up != base_sig || sig_down != base_sig {
                skipped += 1;
                report.max_rel_error_skipped = report.max_rel_error_skipped.max(rel);
                continue;
            }
            checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
        report.checked += checked;
        report.skipped += skipped;
        report.per_param.push((params.get(id).name.clone(), checked, skipped));
    }
    Ok(report)
}
