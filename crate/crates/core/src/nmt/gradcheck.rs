//! Central finite-difference check of [`Model::sentence_loss_and_grad`].

use super::model::{GradientFault, Gradients, Model};
use crate::corpus::SentencePair;
use crate::error::Result;
use crate::vocab::SentenceVocab;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that parameters whose true
/// gradient is zero are judged by absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every parameter's analytic gradient with a central difference.
pub fn gradient_check(
    model: &Model,
    pair: &SentencePair,
    vocab: &SentenceVocab,
    fault: GradientFault,
) -> Result<GradCheckReport> {
    let mut grads = Gradients::new(model, vocab);
    model.sentence_loss_and_grad(pair, vocab, &mut grads, fault)?;
    let analytic = grads.to_dense(model);
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, name) in names.iter().enumerate() {
        for k in 0..analytic[t].len() {
            let orig = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = orig + FD_STEP;
            let plus = probe.sentence_loss(pair, vocab)?;
            probe.tensors_mut()[t][k] = orig - FD_STEP;
            let minus = probe.sentence_loss(pair, vocab)?;
            probe.tensors_mut()[t][k] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[t][k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
