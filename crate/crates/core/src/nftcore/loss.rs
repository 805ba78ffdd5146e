use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensorgrad::{DenseArray, Graph, NodeId};

/// Detached quantities for one mini-batch, one row per predicted clip.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub x0: &'a DenseArray,
    pub v_old: &'a DenseArray,
    pub v_ref: &'a DenseArray,
    /// Normalized advantage of each row.
    pub r_tilde: &'a [f64],
    /// Weight of each row in the KL mean; zero for unmasked rows.
    pub kl_row_weights: &'a [f64],
    pub beta: f64,
    pub lambda_kl: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GroupLoss {
    pub total: NodeId,
    pub policy: f64,
    pub kl: f64,
}

fn broadcast_rows(row_weights: &[f64], cols: usize, scale: f64) -> Result<DenseArray> {
    let data: Vec<f64> = row_weights
        .iter()
        .flat_map(|&w| core::iter::repeat_n(w * scale, cols))
        .collect();
    Ok(DenseArray::matrix(row_weights.len(), cols, data)?)
}

fn affine_const(a: &DenseArray, sa: f64, b: &DenseArray) -> Result<DenseArray> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| sa * x - y).collect();
    Ok(DenseArray::new(a.shape().to_vec(), data)?)
}

/// Policy loss plus weighted selective KL on top of the tracked predictions
/// `v_theta` (`[rows, numel]`).
///
/// Each row contributes `r |v+ - x0|^2 + (1 - r) |v- - x0|^2` averaged over
/// its elements; rows are averaged.
pub fn group_loss(graph: &mut Graph, v_theta: NodeId, inp: LossInputs<'_>) -> Result<GroupLoss> {
    let shape = graph.value(v_theta).shape().to_vec();
    for (what, a) in [
        ("clean target", inp.x0),
        ("old prediction", inp.v_old),
        ("reference prediction", inp.v_ref),
    ] {
        if a.shape() != shape.as_slice() {
            return Err(Error::Shape {
                what,
                expected: graph.value(v_theta).len(),
                got: a.len(),
            });
        }
    }
    let rows = graph.value(v_theta).rows();
    let cols = graph.value(v_theta).cols();
    if inp.r_tilde.len() != rows || inp.kl_row_weights.len() != rows {
        return Err(Error::Shape {
            what: "row weights",
            expected: rows,
            got: inp.r_tilde.len().min(inp.kl_row_weights.len()),
        });
    }
    let norm = 1.0 / (rows * cols) as f64;
    let beta = inp.beta;

    // v+ - x0 = beta v_theta + ((1 - beta) v_old - x0)
    let c_plus = graph.constant(affine_const(inp.v_old, 1.0 - beta, inp.x0)?);
    let c_minus = graph.constant(affine_const(inp.v_old, 1.0 + beta, inp.x0)?);
    let w_plus = graph.constant(broadcast_rows(inp.r_tilde, cols, norm)?);
    let neg: Vec<f64> = inp.r_tilde.iter().map(|r| 1.0 - r).collect();
    let w_minus = graph.constant(broadcast_rows(&neg, cols, norm)?);

    let scaled = graph.scale(v_theta, beta)?;
    let d_plus = graph.add(scaled, c_plus)?;
    let neg_scaled = graph.scale(v_theta, -beta)?;
    let d_minus = graph.add(neg_scaled, c_minus)?;
    let sq_plus = graph.square(d_plus)?;
    let sq_minus = graph.square(d_minus)?;
    let term_plus = graph.mul(sq_plus, w_plus)?;
    let term_minus = graph.mul(sq_minus, w_minus)?;
    let both = graph.add(term_plus, term_minus)?;
    let policy = graph.sum(both)?;
    let policy_value = graph.value(policy).data()[0];

    if inp.kl_row_weights.iter().all(|&w| w == 0.0) || inp.lambda_kl == 0.0 {
        let kl = kl_value(graph.value(v_theta), inp.v_ref, inp.kl_row_weights);
        return Ok(GroupLoss {
            total: policy,
            policy: policy_value,
            kl,
        });
    }
    let reference = graph.constant(inp.v_ref.clone());
    let gap = graph.sub(v_theta, reference)?;
    let gap_sq = graph.square(gap)?;
    let w_kl = graph.constant(broadcast_rows(inp.kl_row_weights, cols, 1.0 / cols as f64)?);
    let weighted = graph.mul(gap_sq, w_kl)?;
    let kl = graph.sum(weighted)?;
    let kl_value = graph.value(kl).data()[0];
    let kl_scaled = graph.scale(kl, inp.lambda_kl)?;
    let total = graph.add(policy, kl_scaled)?;
    Ok(GroupLoss {
        total,
        policy: policy_value,
        kl: kl_value,
    })
}

fn kl_value(v_theta: &DenseArray, v_ref: &DenseArray, row_weights: &[f64]) -> f64 {
    let cols = v_theta.cols();
    row_weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(r, w)| {
            let gap: f64 = v_theta
                .row_slice(r)
                .iter()
                .zip(v_ref.row_slice(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            w * gap / cols as f64
        })
        .sum()
}
