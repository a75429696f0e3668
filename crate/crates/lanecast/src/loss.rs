//! Training objective: soft-target classification over the joint modes plus
//! mode-weighted L1 regression in each mode's own frame.

use crate::features::FUTURE_LEN;
use crate::frenet::CartesianTrajectory;
use crate::geom::Point2;
use crate::labeling::{build_mode_target, label_temporal, ModeTarget, SpatialTarget};
use crate::model::{Forward, Model, SampleFeatures};
use crate::tensor::{Array, Tape, Var};

/// Cross-track errors are up-weighted by gamma; total = cls + lambda * reg.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 5.0,
            lambda: 1.0,
        }
    }
}

/// Scalar loss values for one actor or an aggregated batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.cls += other.cls;
        self.reg += other.reg;
        self.total += other.total;
    }
}

/// One training sample: cached features plus frame-specific regression targets.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub features: SampleFeatures,
    pub spatial: SpatialTarget,
    /// Ground truth projected into each goal path's frame: 12 along-track
    /// values then 12 cross-track values.
    pub goal_gt: Vec<Array>,
    /// Ground truth in the actor-centric frame, same layout.
    pub free_gt: Array,
    /// World-frame ground truth, for evaluation.
    pub future_world: CartesianTrajectory,
}

/// Cross-entropy with soft targets; predictions clamped at 1e-12 before log.
pub fn classification_loss(target: &[f64], predicted: &[f64]) -> f64 {
    assert_eq!(
        target.len(),
        predicted.len(),
        "classification_loss: length mismatch {} vs {}",
        target.len(),
        predicted.len()
    );
    -target
        .iter()
        .zip(predicted)
        .map(|(&t, &p)| t * p.max(1e-12).ln())
        .sum::<f64>()
}

/// Probability-weighted L1 regression over supported modes.
///
/// `preds[k]` and `gts[k]` hold 12 along then 12 cross values in mode k's own
/// frame; `gts[k]` may be `None` only where the target probability is zero.
pub fn regression_loss(
    target: &ModeTarget,
    preds: &[Vec<f64>],
    gts: &[Option<Vec<f64>>],
    gamma: f64,
) -> f64 {
    assert_eq!(target.joint_probs.len(), preds.len());
    assert_eq!(target.joint_probs.len(), gts.len());
    let mut total = 0.0;
    for (k, &p) in target.joint_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let gt = gts[k]
            .as_ref()
            .unwrap_or_else(|| panic!("missing GT projection for supported mode {k}"));
        let pred = &preds[k];
        let along: f64 = (0..FUTURE_LEN).map(|i| (pred[i] - gt[i]).abs()).sum();
        let cross: f64 = (FUTURE_LEN..2 * FUTURE_LEN)
            .map(|i| (pred[i] - gt[i]).abs())
            .sum();
        total += p * (along + gamma * cross);
    }
    total
}

/// Tape-level loss for one sample. Temporal targets are picked on the fly
/// from the current forward pass; regression terms exist only for modes with
/// nonzero target probability, so zero-target modes get zero regression
/// gradient by construction.
pub fn sample_loss(
    tape: &mut Tape,
    fwd: &Forward,
    sample: &LabeledSample,
    temporal_modes: usize,
    weights: &LossWeights,
) -> (Var, LossBreakdown, ModeTarget) {
    let n = sample.features.goal_count();
    let m = temporal_modes;

    // Temporal mode targets from the current predictions.
    let temporal_indices: Vec<usize> = (0..=n)
        .map(|j| {
            let supported = if j < n {
                sample.spatial.goal_probs[j] > 0.0
            } else {
                sample.spatial.goal_free_prob > 0.0
            };
            if !supported || m == 1 {
                return 0;
            }
            let gt_arr = if j < n { &sample.goal_gt[j] } else { &sample.free_gt };
            let gt = blocks_to_points(gt_arr.data());
            let preds: Vec<Vec<Point2>> = (0..m)
                .map(|k| {
                    let v = if j < n {
                        fwd.goal_trajs[j][k]
                    } else {
                        fwd.free_trajs[k]
                    };
                    blocks_to_points(tape.value(v).data())
                })
                .collect();
            label_temporal(&preds, &gt)
        })
        .collect();

    let mode_target = build_mode_target(&sample.spatial, &temporal_indices, m);
    let target_arr = Array::vector(mode_target.joint_probs.clone());
    let cls = tape.weighted_nll(fwd.joint_probs, &target_arr);

    let mut reg = tape.leaf(Array::scalar(0.0));
    for j in 0..=n {
        for k in 0..m {
            let p = mode_target.joint_probs[j * m + k];
            if p == 0.0 {
                continue;
            }
            let traj = if j < n {
                fwd.goal_trajs[j][k]
            } else {
                fwd.free_trajs[k]
            };
            let gt_arr = if j < n { &sample.goal_gt[j] } else { &sample.free_gt };
            let a_pred = tape.slice(traj, 0, FUTURE_LEN);
            let c_pred = tape.slice(traj, FUTURE_LEN, FUTURE_LEN);
            let gt_a = Array::vector(gt_arr.data()[..FUTURE_LEN].to_vec());
            let gt_c = Array::vector(gt_arr.data()[FUTURE_LEN..].to_vec());
            let la = tape.l1_loss(a_pred, &gt_a);
            let lc = tape.l1_loss(c_pred, &gt_c);
            let lc = tape.scale_const(lc, weights.gamma);
            let term = tape.add(la, lc);
            let term = tape.scale_const(term, p);
            reg = tape.add(reg, term);
        }
    }

    let reg_weighted = tape.scale_const(reg, weights.lambda);
    let total = tape.add(cls, reg_weighted);
    let breakdown = LossBreakdown {
        cls: tape.value(cls).item(),
        reg: tape.value(reg).item(),
        total: tape.value(total).item(),
    };
    (total, breakdown, mode_target)
}

fn blocks_to_points(data: &[f64]) -> Vec<Point2> {
    (0..FUTURE_LEN)
        .map(|i| Point2::new(data[i], data[FUTURE_LEN + i]))
        .collect()
}

/// Batch objective: per-actor losses summed, with parameter gradients
/// accumulated across the batch.
pub struct BatchLoss {
    pub total: LossBreakdown,
    pub per_actor: Vec<LossBreakdown>,
}

/// Run the model over a batch and sum per-actor losses and gradients.
pub fn total_loss(
    model: &Model,
    samples: &[&LabeledSample],
    weights: &LossWeights,
) -> (BatchLoss, Vec<Array>) {
    assert!(!samples.is_empty(), "empty batch");
    let mut grads = model.params.zero_grads();
    let mut per_actor = Vec::with_capacity(samples.len());
    let mut total = LossBreakdown::default();
    for sample in samples {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bound, &sample.features);
        let (loss_var, breakdown, _) =
            sample_loss(&mut tape, &fwd, sample, model.config.temporal_modes, weights);
        let g = tape.backward(loss_var);
        for (acc, &var) in grads.iter_mut().zip(bound.all()) {
            let src = g.get(var);
            for (d, s) in acc.data_mut().iter_mut().zip(src.data()) {
                *d += s;
            }
        }
        total.accumulate(&breakdown);
        per_actor.push(breakdown);
    }
    (BatchLoss { total, per_actor }, grads)
}
