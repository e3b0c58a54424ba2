//! Imbalance-aware bi-label training.
//!
//! Each iteration takes one gradient step on the `w`-weighted training loss,
//! then moves `w` along the hypergradient of the validation losses. Matched
//! pairs (both labels equal) are weighted by `w`, mismatched pairs by `1 - w`.
//!
//! With `g_mat`, `g_mis` the batch-normalized partial gradients at the
//! pre-step parameters, the step is `θ' = θ - η (w g_mat + (1-w) g_mis)`, so
//! `dθ'/dw = -η (g_mat - g_mis)` and
//! `dL_v/dw = -η ∇L_v(θ') · (g_mat - g_mis)` for each validation split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{partial_loss_and_grad, validation_losses, weighted_loss, Sample};
use super::{FeatureMode, ScorerError, ScorerModel};
use crate::embedding::dot;
use crate::nn::Mlp;
use crate::seed::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerTrainConfig {
    /// Head learning rate η.
    pub learning_rate: f64,
    /// Hypergradient step size α for `w`.
    pub hyper_step: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub feature_mode: FeatureMode,
    /// When false, `w` stays at `initial_w` (the fixed-weight ablation).
    pub learn_w: bool,
    pub initial_w: f64,
    pub val_fraction: f64,
    /// Above this many pairs, validation gradients use a per-epoch subsample.
    pub full_split_limit: usize,
    /// Per-class cap on the validation subsample.
    pub val_subsample: usize,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            hyper_step: 500.0,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            hidden: vec![64, 32],
            feature_mode: FeatureMode::Concat,
            learn_w: true,
            initial_w: 0.5,
            val_fraction: 0.1,
            full_split_limit: 10_000,
            val_subsample: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted training loss over the whole training split at epoch end.
    pub train_loss: f64,
    pub val_matched: f64,
    pub val_mismatched: f64,
    /// `(val_matched + val_mismatched) / 2`.
    pub val_objective: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// `w` before training and after every step.
    pub w_trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScorer {
    pub model: ScorerModel,
    pub w_final: f64,
    pub history: TrainHistory,
}

impl TrainedScorer {
    pub fn final_val_objective(&self) -> f64 {
        self.history.epochs.last().map_or(f64::NAN, |e| e.val_objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypergradient {
    pub d_mat: f64,
    pub d_mis: f64,
    pub d_com: f64,
}

fn split_partials(head: &Mlp, batch: &[&Sample]) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len() as f64;
    let (_, g_mat) = partial_loss_and_grad(head, batch.iter().copied().filter(|s| s.label.is_matched()), n);
    let (_, g_mis) = partial_loss_and_grad(head, batch.iter().copied().filter(|s| !s.label.is_matched()), n);
    (g_mat, g_mis)
}

fn apply_step(head: &Mlp, g_mat: &[f64], g_mis: &[f64], w: f64, eta: f64, step: usize) -> Result<Mlp, ScorerError> {
    let mut next = head.clone();
    for ((p, gm), gs) in next.params_mut().iter_mut().zip(g_mat).zip(g_mis) {
        let g = w * gm + (1.0 - w) * gs;
        if !g.is_finite() {
            return Err(ScorerError::NonFinite { step });
        }
        *p -= eta * g;
    }
    Ok(next)
}

/// One gradient step on the `w`-weighted batch loss.
pub fn train_step(head: &Mlp, batch: &[Sample], w: f64, eta: f64) -> Result<Mlp, ScorerError> {
    if batch.is_empty() {
        return Err(ScorerError::Config("empty training batch".into()));
    }
    let refs: Vec<&Sample> = batch.iter().collect();
    let (g_mat, g_mis) = split_partials(head, &refs);
    apply_step(head, &g_mat, &g_mis, w, eta, 0)
}

fn hypergradient_from_partials(
    next: &Mlp,
    g_mat: &[f64],
    g_mis: &[f64],
    val_mat: &[&Sample],
    val_mis: &[&Sample],
    eta: f64,
) -> Hypergradient {
    let diff: Vec<f64> = g_mat.iter().zip(g_mis).map(|(a, b)| a - b).collect();
    let (_, gv_mat) = partial_loss_and_grad(next, val_mat.iter().copied(), val_mat.len() as f64);
    let (_, gv_mis) = partial_loss_and_grad(next, val_mis.iter().copied(), val_mis.len() as f64);
    let d_mat = -eta * dot(&gv_mat, &diff);
    let d_mis = -eta * dot(&gv_mis, &diff);
    Hypergradient {
        d_mat,
        d_mis,
        d_com: 0.5 * (d_mat + d_mis),
    }
}

/// Derivatives of the matched and mismatched validation losses at `next`
/// with respect to `w`, where `next` is the step taken from `prev` on `batch`.
pub fn hypergradient(
    prev: &Mlp,
    next: &Mlp,
    batch: &[Sample],
    val_mat: &[Sample],
    val_mis: &[Sample],
    eta: f64,
) -> Result<Hypergradient, ScorerError> {
    if val_mat.is_empty() || val_mis.is_empty() {
        return Err(ScorerError::Config(
            "hypergradient needs non-empty matched and mismatched validation splits".into(),
        ));
    }
    let refs: Vec<&Sample> = batch.iter().collect();
    let (g_mat, g_mis) = split_partials(prev, &refs);
    let vm: Vec<&Sample> = val_mat.iter().collect();
    let vs: Vec<&Sample> = val_mis.iter().collect();
    Ok(hypergradient_from_partials(next, &g_mat, &g_mis, &vm, &vs, eta))
}

/// `clamp(w - α d_com, 0, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn hypergradient_step(
    prev: &Mlp,
    next: &Mlp,
    batch: &[Sample],
    val_mat: &[Sample],
    val_mis: &[Sample],
    w: f64,
    eta: f64,
    alpha: f64,
) -> Result<f64, ScorerError> {
    let h = hypergradient(prev, next, batch, val_mat, val_mis, eta)?;
    Ok((w - alpha * h.d_com).clamp(0.0, 1.0))
}

struct Split {
    train: Vec<Sample>,
    val_mat: Vec<Sample>,
    val_mis: Vec<Sample>,
}

fn stratified_split(samples: &[Sample], cfg: &ScorerTrainConfig) -> Result<Split, ScorerError> {
    let mut mat: Vec<usize> = Vec::new();
    let mut mis: Vec<usize> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.label.is_matched() {
            mat.push(i);
        } else {
            mis.push(i);
        }
    }
    if mat.len() < 2 || mis.len() < 2 {
        return Err(ScorerError::ImbalanceDegenerate(format!(
            "need at least two matched and two mismatched pairs, got {} and {}",
            mat.len(),
            mis.len()
        )));
    }
    let mut rng = stream_rng(cfg.seed, "scorer/split");
    let mut take_val = |idx: &mut Vec<usize>| -> Vec<usize> {
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, idx.len() - 1);
        idx.split_off(idx.len() - n_val)
    };
    let val_mat_idx = take_val(&mut mat);
    let val_mis_idx = take_val(&mut mis);
    let mut train_idx: Vec<usize> = mat.into_iter().chain(mis).collect();
    train_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&train_idx),
        val_mat: pick(&val_mat_idx),
        val_mis: pick(&val_mis_idx),
    })
}

/// Train a scorer head on `samples` (features already built with `cfg.feature_mode`).
pub fn train_scorer(
    samples: &[Sample],
    provider_fingerprint: &str,
    cfg: &ScorerTrainConfig,
) -> Result<TrainedScorer, ScorerError> {
    if !(cfg.learning_rate > 0.0) {
        return Err(ScorerError::Config("learning rate must be positive".into()));
    }
    if cfg.batch_size == 0 || !(0.0..=1.0).contains(&cfg.initial_w) {
        return Err(ScorerError::Config("batch size must be positive and w within [0, 1]".into()));
    }
    let input_dim = samples
        .first()
        .map(|s| s.x.len())
        .ok_or_else(|| ScorerError::ImbalanceDegenerate("no training pairs".into()))?;
    if samples.iter().any(|s| s.x.len() != input_dim) {
        return Err(ScorerError::Config("training samples have inconsistent widths".into()));
    }
    let split = stratified_split(samples, cfg)?;

    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut head = Mlp::new(&sizes, &mut stream_rng(cfg.seed, "scorer/init"));
    let mut w = cfg.initial_w;
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        w_trajectory: vec![w],
    };
    let mut shuffle_rng = stream_rng(cfg.seed, "scorer/shuffle");
    let mut val_rng = stream_rng(cfg.seed, "scorer/val-subsample");
    let subsample = samples.len() > cfg.full_split_limit;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let pick_val = |set: &[Sample], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            if subsample && set.len() > cfg.val_subsample {
                idx.shuffle(rng);
                idx.truncate(cfg.val_subsample);
                idx.sort_unstable();
            }
            idx
        };
        let vm_idx = pick_val(&split.val_mat, &mut val_rng);
        let vs_idx = pick_val(&split.val_mis, &mut val_rng);
        let val_mat: Vec<&Sample> = vm_idx.iter().map(|&i| &split.val_mat[i]).collect();
        let val_mis: Vec<&Sample> = vs_idx.iter().map(|&i| &split.val_mis[i]).collect();

        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (g_mat, g_mis) = split_partials(&head, &batch);
            let next = apply_step(&head, &g_mat, &g_mis, w, cfg.learning_rate, step)?;
            if cfg.learn_w {
                let h = hypergradient_from_partials(&next, &g_mat, &g_mis, &val_mat, &val_mis, cfg.learning_rate);
                if !h.d_com.is_finite() {
                    return Err(ScorerError::NonFinite { step });
                }
                w = (w - cfg.hyper_step * h.d_com).clamp(0.0, 1.0);
            }
            head = next;
            history.w_trajectory.push(w);
            step += 1;
        }

        let (val_matched, val_mismatched) = validation_losses(&head, &split.val_mat, &split.val_mis);
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: weighted_loss(&head, &split.train, w),
            val_matched,
            val_mismatched,
            val_objective: 0.5 * (val_matched + val_mismatched),
            w,
        });
        log::debug!(
            "scorer epoch {}: w={w:.4} val_mat={val_matched:.4} val_mis={val_mismatched:.4}",
            epoch + 1
        );
    }

    Ok(TrainedScorer {
        model: ScorerModel {
            head,
            feature_mode: cfg.feature_mode,
            provider_fingerprint: provider_fingerprint.to_string(),
            w_final: w,
            seed: cfg.seed,
        },
        w_final: w,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::BiLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64, n: usize, dim: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let a = x[0] > 0.0;
                let b = if rng.gen_bool(0.2) { !a } else { a };
                Sample { x, label: BiLabel::new(a, b) }
            })
            .collect()
    }

    fn small_cfg() -> ScorerTrainConfig {
        ScorerTrainConfig {
            hidden: vec![6],
            epochs: 3,
            learning_rate: 0.05,
            hyper_step: 10.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_step_is_identity() {
        let samples = data(1, 8, 3);
        let head = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(train_step(&head, &samples, 0.5, 0.0).unwrap(), head);
    }

    #[test]
    fn small_step_descends() {
        let samples = data(2, 16, 3);
        let head = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(1));
        for w in [0.0, 0.3, 0.5, 1.0] {
            let next = train_step(&head, &samples, w, 1e-4).unwrap();
            assert!(weighted_loss(&next, &samples, w) <= weighted_loss(&head, &samples, w));
        }
    }

    #[test]
    fn zero_hyper_step_keeps_w() {
        let samples = data(3, 16, 3);
        let head = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(2));
        let next = train_step(&head, &samples, 0.4, 0.1).unwrap();
        let w = hypergradient_step(&head, &next, &samples, &samples[..4], &samples[4..8], 0.4, 0.1, 0.0).unwrap();
        assert_eq!(w, 0.4);
    }

    #[test]
    fn identical_partials_give_zero_direction() {
        let head = Mlp::new(&[2, 3, 2], &mut ChaCha8Rng::seed_from_u64(4));
        let g: Vec<f64> = (0..head.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let next = apply_step(&head, &g, &g, 0.5, 0.1, 0).unwrap();
        let val = data(5, 6, 2);
        let vm: Vec<&Sample> = val[..3].iter().collect();
        let vs: Vec<&Sample> = val[3..].iter().collect();
        let h = hypergradient_from_partials(&next, &g, &g, &vm, &vs, 0.1);
        assert_eq!(h.d_com, 0.0);
    }

    #[test]
    fn hypergradient_matches_finite_difference() {
        let samples = data(10, 24, 3);
        let head = Mlp::new(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(3));
        let (batch, val) = samples.split_at(12);
        let val_mat: Vec<Sample> = val.iter().filter(|s| s.label.is_matched()).cloned().collect();
        let val_mis: Vec<Sample> = val.iter().filter(|s| !s.label.is_matched()).cloned().collect();
        let (eta, w, d) = (0.5, 0.4, 1e-4);
        let objective = |w: f64| {
            let next = train_step(&head, batch, w, eta).unwrap();
            let (a, b) = validation_losses(&next, &val_mat, &val_mis);
            0.5 * (a + b)
        };
        let fd = (objective(w + d) - objective(w - d)) / (2.0 * d);
        let next = train_step(&head, batch, w, eta).unwrap();
        let h = hypergradient(&head, &next, batch, &val_mat, &val_mis, eta).unwrap();
        assert!((h.d_com - fd).abs() / h.d_com.abs().max(fd.abs()).max(1e-6) < 1e-3, "{} vs {fd}", h.d_com);
    }

    #[test]
    fn empty_validation_split_is_config_error() {
        let samples = data(6, 8, 2);
        let head = Mlp::new(&[2, 3, 2], &mut ChaCha8Rng::seed_from_u64(0));
        let next = train_step(&head, &samples, 0.5, 0.1).unwrap();
        assert!(matches!(
            hypergradient(&head, &next, &samples, &[], &samples, 0.1),
            Err(ScorerError::Config(_))
        ));
    }

    #[test]
    fn degenerate_labels_refused() {
        let samples: Vec<Sample> = data(7, 20, 2)
            .into_iter()
            .map(|mut s| {
                s.label = BiLabel::new(true, true);
                s
            })
            .collect();
        assert!(matches!(
            train_scorer(&samples, "fp", &small_cfg()),
            Err(ScorerError::ImbalanceDegenerate(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_w_stays_in_range() {
        let samples = data(8, 200, 3);
        let a = train_scorer(&samples, "fp", &small_cfg()).unwrap();
        let b = train_scorer(&samples, "fp", &small_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert!(a.history.w_trajectory.iter().all(|w| (0.0..=1.0).contains(w)));
        assert_eq!(a.history.epochs.len(), 3);
    }

    #[test]
    fn fixed_w_never_moves() {
        let samples = data(9, 100, 3);
        let cfg = ScorerTrainConfig {
            learn_w: false,
            initial_w: 0.3,
            ..small_cfg()
        };
        let t = train_scorer(&samples, "fp", &cfg).unwrap();
        assert!(t.history.w_trajectory.iter().all(|&w| w == 0.3));
    }
}
