use super::BoundWeights;
use crate::error::{ensure, Result};
use crate::tensor::{Graph, NodeId};

fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn dense_relu(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = dense(g, x, w, b)?;
    g.relu(y)
}

/// Applies a row-wise layer to a rank-3 batch (S, n, k) -> (S, n, h).
fn per_word(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let flat = g.reshape(x, &[shape[0] * shape[1], shape[2]])?;
    let y = dense_relu(g, flat, w, b)?;
    let h = g.shape(y)[1];
    g.reshape(y, &[shape[0], shape[1], h])
}

fn check_inputs(g: &Graph, x1: NodeId, x2: NodeId) -> Result<()> {
    let (s1, s2) = (g.shape(x1), g.shape(x2));
    ensure!(
        s1.len() == 3 && s2.len() == 3 && s1[0] == s2[0] && s1[2] == s2[2],
        "sentence batches must be (S, n, d) with matching S and d, got {s1:?} and {s2:?}"
    );
    Ok(())
}

/// Mean-pooled pair classifier: `[u; v; u*v; |u-v|]` through one ReLU layer.
pub fn bow_pair_forward(g: &mut Graph, w: &BoundWeights, x1: NodeId, x2: NodeId) -> Result<NodeId> {
    check_inputs(g, x1, x2)?;
    let u = g.mean(x1, 1)?;
    let v = g.mean(x2, 1)?;
    let prod = g.mul(u, v)?;
    let diff = g.sub(u, v)?;
    let dist = g.abs(diff)?;
    let features = g.concat(&[u, v, prod, dist], 1)?;
    let hidden = dense_relu(g, features, w.get("hidden_w")?, w.get("hidden_b")?)?;
    dense(g, hidden, w.get("out_w")?, w.get("out_b")?)
}

/// Attend / compare / aggregate in the style of decomposable attention.
///
/// Alignment scores are `F(a_i) . F(b_j)` with `F` a ReLU layer; each word is
/// compared with its soft-aligned counterpart through `G([word; aligned])`,
/// the comparisons are summed per sentence and classified.
pub fn mini_dattn_forward(g: &mut Graph, w: &BoundWeights, x1: NodeId, x2: NodeId) -> Result<NodeId> {
    check_inputs(g, x1, x2)?;
    let (attend_w, attend_b) = (w.get("attend_w")?, w.get("attend_b")?);
    let fa = per_word(g, x1, attend_w, attend_b)?;
    let fb = per_word(g, x2, attend_w, attend_b)?;
    let fb_t = g.transpose(fb)?;
    let scores = g.batch_matmul(fa, fb_t)?; // (S, n1, n2)

    let to_b = g.softmax(scores)?;
    let beta = g.batch_matmul(to_b, x2)?; // (S, n1, d)
    let scores_t = g.transpose(scores)?;
    let to_a = g.softmax(scores_t)?;
    let alpha = g.batch_matmul(to_a, x1)?; // (S, n2, d)

    let (compare_w, compare_b) = (w.get("compare_w")?, w.get("compare_b")?);
    let left = g.concat(&[x1, beta], 2)?;
    let right = g.concat(&[x2, alpha], 2)?;
    let v1 = per_word(g, left, compare_w, compare_b)?;
    let v2 = per_word(g, right, compare_w, compare_b)?;
    let v1 = g.sum(v1, 1)?;
    let v2 = g.sum(v2, 1)?;

    let joined = g.concat(&[v1, v2], 1)?;
    let hidden = dense_relu(g, joined, w.get("aggregate_w")?, w.get("aggregate_b")?)?;
    dense(g, hidden, w.get("out_w")?, w.get("out_b")?)
}
