//! Sparse graph-attention encoder over instance nodes plus one global node.
//!
//! The attention graph is built once per forward pass from the initial
//! embeddings: mutual k-nearest-neighbor edges (k grows logarithmically
//! with instance size), short-range stripe edges inside contiguous node
//! groups, depot-to-all and global-to-all hub edges, and self-loops. Every
//! layer refreshes the global node with the mean of the real rows, runs
//! multi-head attention with relative-position scores over bucketed
//! coordinate distances, and applies the usual residual/norm/feed-forward
//! sandwich. The final embedding adds the multi-scale mean of the per-layer
//! pooled summaries back onto each node.

use crate::instance::{distance, Instance};
use crate::model::ModelConfig;
use crate::nn::graph::{Graph, NnError, Var};
use crate::nn::tensor::{Parameters, Tensor};

/// Neighbor budget per ordinary row: k mutual neighbors, a 5-wide stripe
/// window (which already contains the self-loop), the depot edge, and the
/// global edge, with one spare. Depot and global rows are deliberate hubs
/// and exempt.
pub fn knn_k(n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    n.next_power_of_two().trailing_zeros() as usize
}

pub fn row_budget(n: usize) -> usize {
    knn_k(n) + 5 + 2 + 1
}

/// Frozen attention structure for one instance: additive mask and
/// relative-position buckets over `n` real rows plus the global row.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub n: usize,
    /// [n+1, n+1] additive mask: 0 = edge, -inf = blocked.
    pub mask: Tensor,
    /// Row-major [n+1, n+1] bucket indices into the relpos table.
    pub buckets: Vec<usize>,
}

impl Structure {
    pub fn rows(&self) -> usize {
        self.n + 1
    }

    /// Edge count per row, self-loops included.
    pub fn degrees(&self) -> Vec<usize> {
        let m = self.rows();
        (0..m)
            .map(|i| (0..m).filter(|&j| self.mask.get(i, j) == 0.0).count())
            .collect()
    }
}

fn node_features(inst: &Instance) -> Tensor {
    let n = inst.n();
    let mut f = Tensor::zeros(n, 3);
    for i in 0..n {
        f.set(i, 0, inst.nodes[i].x);
        f.set(i, 1, inst.nodes[i].y);
        f.set(i, 2, if i == inst.depot { 1.0 } else { 0.0 });
    }
    f
}

/// Builds the attention graph from the initial linear embeddings. The
/// k-NN edges use embedding distances and are made mutual (kept only when
/// both endpoints list each other), which bounds every ordinary row's
/// degree; distance buckets come from the raw coordinates.
pub fn build_structure(
    params: &Parameters,
    prefix: &str,
    inst: &Instance,
    cfg: &ModelConfig,
) -> Result<Structure, NnError> {
    let n = inst.n();
    let m = n + 1;
    let global = n;
    let w = params
        .get(&format!("{prefix}embed.w"))
        .ok_or_else(|| NnError::MissingParam(format!("{prefix}embed.w")))?;
    let b = params
        .get(&format!("{prefix}embed.b"))
        .ok_or_else(|| NnError::MissingParam(format!("{prefix}embed.b")))?;
    let feats = node_features(inst);
    let mut h0 = feats.matmul(w);
    for i in 0..n {
        for j in 0..h0.cols {
            h0.data[i * h0.cols + j] += b.data[j];
        }
    }

    let emb_dist = |a: usize, c: usize| -> f64 {
        let mut s = 0.0;
        for j in 0..h0.cols {
            let d = h0.get(a, j) - h0.get(c, j);
            s += d * d;
        }
        s.sqrt()
    };

    // Mutual k-nearest-neighbor adjacency on embedding distances.
    let k = knn_k(n);
    let mut knn: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &c| {
            emb_dist(i, a).partial_cmp(&emb_dist(i, c)).unwrap().then(a.cmp(&c))
        });
        others.truncate(k);
        knn.push(others);
    }

    let mut edge = vec![false; m * m];
    let connect = |a: usize, c: usize, edge: &mut Vec<bool>| {
        edge[a * m + c] = true;
        edge[c * m + a] = true;
    };
    for i in 0..n {
        for &j in &knn[i] {
            if knn[j].contains(&i) {
                connect(i, j, &mut edge);
            }
        }
    }

    // Stripe edges: contiguous groups of stride ceil(n / max(1, n/8)),
    // banded to |i - j| <= 2 inside a group.
    let groups = (n / 8).max(1);
    let stride = n.div_ceil(groups);
    for i in 0..n {
        for j in (i + 1)..n.min(i + 3) {
            if i / stride == j / stride {
                connect(i, j, &mut edge);
            }
        }
    }

    // Hubs and self-loops.
    for i in 0..n {
        connect(inst.depot, i, &mut edge);
        connect(global, i, &mut edge);
    }
    for i in 0..m {
        edge[i * m + i] = true;
    }

    let mut mask = Tensor::full(m, m, f64::NEG_INFINITY);
    for i in 0..m {
        for j in 0..m {
            if edge[i * m + j] {
                mask.set(i, j, 0.0);
            }
        }
    }

    // Distance buckets: d_sparse - 1 uniform bins over [0, diameter];
    // pairs touching the global node take the reserved last bucket.
    let bins = cfg.d_sparse - 1;
    let diameter = inst.diameter();
    let mut buckets = vec![cfg.d_sparse - 1; m * m];
    for i in 0..n {
        for j in 0..n {
            let d = distance(inst.nodes[i], inst.nodes[j]);
            let idx = if diameter > 0.0 {
                (((d / diameter) * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            buckets[i * m + j] = idx;
        }
    }

    Ok(Structure { n, mask, buckets })
}

fn layer_norm(
    g: &mut Graph,
    params: &Parameters,
    name: &str,
    x: Var,
) -> Result<Var, NnError> {
    let gamma = g.param(params, &format!("{name}.gamma"))?;
    let beta = g.param(params, &format!("{name}.beta"))?;
    let t = g.instance_norm(x, 1e-5);
    let t = g.mul_row(t, gamma);
    Ok(g.add_row(t, beta))
}

/// Runs the encoder over a prebuilt structure inside `g`. Returns the
/// static node embeddings, [n, d_h], with the multi-scale summary folded
/// in.
pub fn encode_with_structure(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    inst: &Instance,
    cfg: &ModelConfig,
    s: &Structure,
) -> Result<Var, NnError> {
    encode_inner(g, params, prefix, inst, cfg, s, None)
}

/// Like `encode_with_structure`, but also returns every head's attention
/// matrix, ordered by layer then head, for inspection.
pub fn encode_traced(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    inst: &Instance,
    cfg: &ModelConfig,
    s: &Structure,
) -> Result<(Var, Vec<Var>), NnError> {
    let mut trace = Vec::with_capacity(cfg.layers * cfg.heads);
    let e = encode_inner(g, params, prefix, inst, cfg, s, Some(&mut trace))?;
    Ok((e, trace))
}

fn encode_inner(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    inst: &Instance,
    cfg: &ModelConfig,
    s: &Structure,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var, NnError> {
    let n = inst.n();
    assert_eq!(s.n, n, "structure built for a different instance size");
    let m = s.rows();
    let global = n;
    let d_k = cfg.d_k();

    let feats = g.input(node_features(inst));
    let w = g.param(params, &format!("{prefix}embed.w"))?;
    let b = g.param(params, &format!("{prefix}embed.b"))?;
    let h_real = g.matmul(feats, w);
    let h_real = g.add_row(h_real, b);
    let g_init = g.param(params, &format!("{prefix}global_init"))?;
    let mut h = g.concat_rows(h_real, g_init);

    let mut pooled = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        // Refresh the global row with this layer's mean over real nodes.
        let p = g.mean_rows(h, 0, n);
        pooled.push(p);
        h = g.add_to_row(h, global, p);

        let relpos = g.param(params, &format!("{prefix}l{l}.relpos"))?;
        let mut head_outs: Option<Var> = None;
        for head in 0..cfg.heads {
            let wq = g.param(params, &format!("{prefix}l{l}.h{head}.wq"))?;
            let wk = g.param(params, &format!("{prefix}l{l}.h{head}.wk"))?;
            let wv = g.param(params, &format!("{prefix}l{l}.h{head}.wv"))?;
            let q = g.matmul(h, wq);
            let kk = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let kt = g.transpose(kk);
            let scores = g.matmul(q, kt);
            let scores = g.scale_const(scores, 1.0 / (d_k as f64).sqrt());
            let table = g.slice_rows(relpos, head * cfg.d_sparse, (head + 1) * cfg.d_sparse);
            let rel = g.relpos_scores(q, table, &s.buckets, m);
            let scores = g.add(scores, rel);
            let att = g.masked_softmax(scores, &s.mask)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(att);
            }
            let out = g.matmul(att, v);
            head_outs = Some(match head_outs {
                Some(acc) => g.concat_cols(acc, out),
                None => out,
            });
        }
        let wo = g.param(params, &format!("{prefix}l{l}.wo"))?;
        let att = g.matmul(head_outs.expect("at least one head"), wo);
        let res = g.add(h, att);
        h = layer_norm(g, params, &format!("{prefix}l{l}.norm1"), res)?;

        let w1 = g.param(params, &format!("{prefix}l{l}.ffn.w1"))?;
        let b1 = g.param(params, &format!("{prefix}l{l}.ffn.b1"))?;
        let w2 = g.param(params, &format!("{prefix}l{l}.ffn.w2"))?;
        let b2 = g.param(params, &format!("{prefix}l{l}.ffn.b2"))?;
        let f = g.matmul(h, w1);
        let f = g.add_row(f, b1);
        let f = g.relu(f);
        let f = g.matmul(f, w2);
        let f = g.add_row(f, b2);
        let res = g.add(h, f);
        h = layer_norm(g, params, &format!("{prefix}l{l}.norm2"), res)?;
    }

    // Multi-scale summary: mean of the per-layer pooled rows, broadcast
    // onto every real node.
    let mut acc = pooled[0];
    for &p in &pooled[1..] {
        acc = g.add(acc, p);
    }
    let p_multi = g.scale_const(acc, 1.0 / pooled.len() as f64);
    let real = g.slice_rows(h, 0, n);
    Ok(g.add_row(real, p_multi))
}

/// Builds the structure and encodes in one call.
pub fn encode(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    inst: &Instance,
    cfg: &ModelConfig,
) -> Result<(Var, Structure), NnError> {
    let s = build_structure(params, prefix, inst, cfg)?;
    let e = encode_with_structure(g, params, prefix, inst, cfg, &s)?;
    Ok((e, s))
}
