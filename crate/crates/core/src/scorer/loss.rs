//! Bi-label cross-entropy and its class-weighted variants.

use super::{BiLabel, BiLabelScore};
use crate::nn::{bce_with_logit, Mlp, PROB_EPS};

/// One training example: head input features and the label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: BiLabel,
}

/// Sum of the two heads' binary cross-entropies, with probabilities clamped
/// to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(score: &BiLabelScore, label: BiLabel) -> f64 {
    let [y1, y2] = label.targets();
    let term = |p: f64, y: f64| {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };
    term(score.p_ans, y1) + term(score.p_pref, y2)
}

/// Per-sample loss; when `grad` is given, adds `scale * d(loss)/d(params)` into it.
fn sample_loss(head: &Mlp, s: &Sample, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let [y1, y2] = s.label.targets();
    let trace = head.forward_trace(&s.x);
    let out = trace.output();
    let (l1, g1) = bce_with_logit(out[0], y1);
    let (l2, g2) = bce_with_logit(out[1], y2);
    if let Some(grad) = grad {
        head.backward(&trace, &[scale * g1, scale * g2], grad);
    }
    l1 + l2
}

/// `(1/normalizer) * Σ l` over `samples` and its parameter gradient.
pub fn partial_loss_and_grad<'a>(
    head: &Mlp,
    samples: impl IntoIterator<Item = &'a Sample>,
    normalizer: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; head.param_count()];
    let scale = 1.0 / normalizer;
    let total: f64 = samples
        .into_iter()
        .map(|s| sample_loss(head, s, scale, Some(&mut grad)))
        .sum();
    (total * scale, grad)
}

/// Class weight: `w` for matched pairs, `1 - w` for mismatched ones.
pub fn class_weight(label: BiLabel, w: f64) -> f64 {
    if label.is_matched() {
        w
    } else {
        1.0 - w
    }
}

/// Batch mean of `f(w) * l` and its gradient.
pub fn loss_and_grad(head: &Mlp, batch: &[Sample], w: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; head.param_count()];
    let n = batch.len() as f64;
    let total: f64 = batch
        .iter()
        .map(|s| {
            let f = class_weight(s.label, w);
            f * sample_loss(head, s, f / n, Some(&mut grad))
        })
        .sum();
    (total / n, grad)
}

/// Batch mean of `f(w) * l`.
pub fn weighted_loss(head: &Mlp, batch: &[Sample], w: f64) -> f64 {
    assert!(!batch.is_empty(), "weighted loss of an empty batch");
    batch
        .iter()
        .map(|s| class_weight(s.label, w) * sample_loss(head, s, 0.0, None))
        .sum::<f64>()
        / batch.len() as f64
}

/// Class-normalized mean losses on the matched and mismatched validation splits.
pub fn validation_losses(head: &Mlp, val_mat: &[Sample], val_mis: &[Sample]) -> (f64, f64) {
    let mean = |set: &[Sample]| {
        if set.is_empty() {
            0.0
        } else {
            set.iter().map(|s| sample_loss(head, s, 0.0, None)).sum::<f64>() / set.len() as f64
        }
    };
    (mean(val_mat), mean(val_mis))
}
