//! Weighted pose regression loss.
//!
//! `L = mean((p − p̂)²) + k · mean((q − q̂)²)`, with both means over the three
//! components. The total training objective sums this loss over every
//! sub-network's full 6-DOF output.

use crate::pose::PoseVector6;

/// Scale factor between orientation and translation error used in training.
pub const DEFAULT_K: f64 = 100.0;

pub(crate) fn loss_6dof_value(pred: &[f64; 6], truth: &[f64; 6], k: f64) -> f64 {
    let sq = |r: std::ops::Range<usize>| r.map(|i| (pred[i] - truth[i]).powi(2)).sum::<f64>() / 3.0;
    sq(0..3) + k * sq(3..6)
}

pub(crate) fn loss_6dof_grad(pred: &[f64; 6], truth: &[f64; 6], k: f64) -> [f64; 6] {
    std::array::from_fn(|i| {
        let scale = if i < 3 { 1.0 } else { k };
        scale * 2.0 * (pred[i] - truth[i]) / 3.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLoss {
    pub value: f64,
    /// dL/dpred in `[p, q]` order.
    pub grad: [f64; 6],
}

pub fn loss_6dof(pred: &PoseVector6, truth: &PoseVector6, k: f64) -> PoseLoss {
    let (p, t) = (pred.to_array(), truth.to_array());
    PoseLoss {
        value: loss_6dof_value(&p, &t, k),
        grad: loss_6dof_grad(&p, &t, k),
    }
}

/// Sum of [`loss_6dof`] over each sub-network's 6-DOF output.
pub fn total_loss(outputs: &[PoseVector6], truth: &PoseVector6, k: f64) -> f64 {
    outputs.iter().map(|o| loss_6dof(o, truth, k).value).sum()
}
