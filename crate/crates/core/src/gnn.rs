//! Frame encoder, graph attention, edge pooling and the layer-sum video
//! embedding.
//!
//! Attention and pooling are computed edge-wise over the CSR adjacency: the
//! attention logit `aᵀ[W v_m ‖ W v_n]` splits into a destination term and a
//! neighbor term, so no `E×d` or `T×T` intermediate is ever built.

use std::io::Write;
use std::rc::Rc;

use crate::autodiff::{Indices, ParamStore, Tape, Tensor2, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, VideoGraph};
use crate::model::{self, ModelDims, GNN_LAYERS};

pub const ATTENTION_SLOPE: f64 = 0.2;

/// Φ: two affine layers with ELU between them, applied row-wise.
pub fn encode_frames(tape: &mut Tape, params: &ParamStore, frames: Var) -> Result<Var> {
    let d_in = params.expect("enc.l1.w").rows();
    let got = tape.value(frames).cols();
    if got != d_in {
        return Err(Error::Precondition(format!(
            "frame features have width {got}, encoder expects {d_in}"
        )));
    }
    model::mlp(tape, params, "enc", 2, frames)
}

/// Attention weights of one layer, aligned with the CSR edge order of the
/// adjacency the layer ran on (edge `e` goes from `neighbors[e]` into the
/// node that owns segment `e`).
#[derive(Debug, Clone)]
pub struct LayerAttention {
    pub layer: usize,
    pub adjacency: Adjacency,
    /// Mean over heads.
    pub weights: Vec<f64>,
    /// One `E×1` column per head.
    pub vars: Vec<Var>,
}

impl LayerAttention {
    /// `(dst, src, weight)` per directed edge.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let offsets = self.adjacency.offsets();
        let flat = self.adjacency.flat_neighbors();
        (0..self.adjacency.num_nodes()).flat_map(move |m| {
            (offsets[m]..offsets[m + 1]).map(move |e| (m, flat[e], self.weights[e]))
        })
    }
}

fn csr_indices(adj: &Adjacency) -> (Indices, Indices, Indices) {
    let offsets: Indices = Rc::from(adj.offsets());
    let src: Indices = Rc::from(adj.flat_neighbors());
    let dst: Indices = (0..adj.num_nodes())
        .flat_map(|m| std::iter::repeat_n(m, adj.degree(m)))
        .collect();
    (offsets, src, dst)
}

/// One graph-attention layer. Returns the new node features and the
/// attention weights.
pub fn gat_forward(
    tape: &mut Tape,
    params: &ParamStore,
    layer: usize,
    v: Var,
    adj: &Adjacency,
) -> Result<(Var, LayerAttention)> {
    let t = tape.value(v).rows();
    if adj.num_nodes() != t {
        return Err(Error::Precondition(format!(
            "adjacency has {} nodes, feature matrix has {t} rows",
            adj.num_nodes()
        )));
    }
    if let Some(m) = (0..t).find(|&m| adj.degree(m) == 0) {
        return Err(Error::Precondition(format!(
            "node {m} has an empty neighborhood"
        )));
    }
    let (offsets, src, dst) = csr_indices(adj);
    let heads = (0..)
        .take_while(|&h| params.contains(&model::gat_weight(layer, h)))
        .count();
    let mut summed = None;
    let mut vars = Vec::with_capacity(heads);
    for h in 0..heads {
        let w = model::param(tape, params, &model::gat_weight(layer, h));
        let a = model::param(tape, params, &model::gat_attention(layer, h));
        let d = tape.value(w).cols();
        let wv = tape.matmul(v, w)?;
        let a_dst = tape.slice_rows(a, 0, d)?;
        let a_src = tape.slice_rows(a, d, d)?;
        let p = tape.matmul(wv, a_dst)?;
        let q = tape.matmul(wv, a_src)?;
        let pe = tape.gather_rows(p, dst.clone())?;
        let qe = tape.gather_rows(q, src.clone())?;
        let logits = tape.add(pe, qe)?;
        let logits = tape.leaky_relu(logits, ATTENTION_SLOPE)?;
        let alpha = tape.segment_softmax(logits, offsets.clone())?;
        let agg = tape.spmm(alpha, wv, src.clone(), offsets.clone())?;
        summed = Some(match summed {
            None => agg,
            Some(acc) => tape.add(acc, agg)?,
        });
        vars.push(alpha);
    }
    let Some(mut out) = summed else {
        return Err(Error::Precondition(format!(
            "no attention heads for layer {layer}"
        )));
    };
    if heads > 1 {
        out = tape.scale(out, 1.0 / heads as f64)?;
    }
    let out = tape.elu(out)?;
    let mut weights = vec![0.0; adj.num_directed_edges()];
    for &alpha in &vars {
        for (w, x) in weights.iter_mut().zip(tape.value(alpha).data()) {
            *w += x / heads as f64;
        }
    }
    Ok((
        out,
        LayerAttention {
            layer,
            adjacency: adj.clone(),
            weights,
            vars,
        },
    ))
}

/// Result of one edge-pooling step.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub features: Var,
    pub adjacency: Adjacency,
    /// Cluster index of every input node.
    pub merge_map: Vec<usize>,
}

impl Pooled {
    pub fn num_clusters(&self) -> usize {
        self.adjacency.num_nodes()
    }
}

/// Greedy maximum-score matching over directed edges `m → n`, `m ≠ n`, in
/// CSR order. Returns the matched `(m, n, edge)` triples in selection order.
pub fn greedy_matching(
    adj: &Adjacency,
    score: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize, usize)> {
    let flat = adj.flat_neighbors();
    let offsets = adj.offsets();
    let mut cands: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(flat.len());
    for m in 0..adj.num_nodes() {
        for e in offsets[m]..offsets[m + 1] {
            let n = flat[e];
            if n != m {
                cands.push((score(m, n), e, m, n));
            }
        }
    }
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut used = vec![false; adj.num_nodes()];
    let mut out = Vec::new();
    for (_, e, m, n) in cands {
        if !used[m] && !used[n] {
            used[m] = true;
            used[n] = true;
            out.push((m, n, e));
        }
    }
    out
}

/// Contracts a greedy matching of high-scoring edges. A merged node is
/// `(v_m + v_n)·σ(s)` with `s = w_1ᵀv_m + w_2ᵀv_n + b`; unmatched nodes pass
/// through unchanged.
pub fn edge_pool(
    tape: &mut Tape,
    params: &ParamStore,
    layer: usize,
    v: Var,
    adj: &Adjacency,
) -> Result<Pooled> {
    let t = tape.value(v).rows();
    if adj.num_nodes() != t {
        return Err(Error::Precondition(format!(
            "adjacency has {} nodes, feature matrix has {t} rows",
            adj.num_nodes()
        )));
    }
    let w = model::param(tape, params, &model::pool_weight(layer));
    let b = model::param(tape, params, &model::pool_bias(layer));
    let d = tape.value(v).cols();
    let w_dst = tape.slice_rows(w, 0, d)?;
    let w_src = tape.slice_rows(w, d, d)?;
    let sp = tape.matmul(v, w_dst)?;
    let sq = tape.matmul(v, w_src)?;
    let matches = {
        let (spv, sqv) = (tape.value(sp).data(), tape.value(sq).data());
        greedy_matching(adj, |m, n| spv[m] + sqv[n])
    };

    let mut partner = vec![usize::MAX; t];
    let mut gate_of = vec![usize::MAX; t];
    for (j, &(m, n, _)) in matches.iter().enumerate() {
        partner[m] = n;
        partner[n] = m;
        gate_of[m] = j;
        gate_of[n] = j;
    }
    let mut merge_map = vec![usize::MAX; t];
    let mut members = Vec::with_capacity(t);
    let mut gate_idx = Vec::with_capacity(t);
    let mut offsets = vec![0];
    let mut clusters = 0;
    for m in 0..t {
        if merge_map[m] != usize::MAX {
            continue;
        }
        merge_map[m] = clusters;
        members.push(m);
        gate_idx.push(gate_of[m]);
        if partner[m] != usize::MAX {
            let n = partner[m];
            merge_map[n] = clusters;
            members.push(n);
            gate_idx.push(gate_of[n]);
        }
        offsets.push(members.len());
        clusters += 1;
    }

    let weights = if matches.is_empty() {
        tape.input(Tensor2::filled(members.len(), 1, 1.0))
    } else {
        let ms: Indices = matches.iter().map(|x| x.0).collect();
        let ns: Indices = matches.iter().map(|x| x.1).collect();
        let sm = tape.gather_rows(sp, ms)?;
        let sn = tape.gather_rows(sq, ns)?;
        let s = tape.add(sm, sn)?;
        let s = tape.add_row(s, b)?;
        let gate = tape.sigmoid(s)?;
        let one = tape.input(Tensor2::scalar(1.0));
        let table = tape.concat_rows(&[gate, one])?;
        let unmatched = matches.len();
        let idx: Indices = gate_idx
            .iter()
            .map(|&g| if g == usize::MAX { unmatched } else { g })
            .collect();
        tape.gather_rows(table, idx)?
    };
    let features = tape.spmm(weights, v, members.into(), offsets.into())?;

    let mut lists = vec![Vec::new(); clusters];
    for m in 0..t {
        for &n in adj.neighbors(m) {
            lists[merge_map[m]].push(merge_map[n]);
        }
    }
    for l in &mut lists {
        l.sort_unstable();
        l.dedup();
    }
    Ok(Pooled {
        features,
        adjacency: Adjacency::from_lists(lists),
        merge_map,
    })
}

/// `[column means ‖ column maxima]` as a `1×2d` row.
pub fn readout(tape: &mut Tape, v: Var) -> Result<Var> {
    if tape.value(v).rows() == 0 {
        return Err(Error::Precondition("readout of an empty node set".into()));
    }
    let mean = tape.mean_rows(v)?;
    let max = tape.max_rows(v)?;
    tape.concat_cols(mean, max)
}

/// Tape handles for one video's embedding.
#[derive(Debug, Clone)]
pub struct VideoEmbedding {
    /// Encoded frames Φ(Z), `T×d_h`.
    pub frames: Var,
    /// Per-layer readouts `h^1..h^3`, each `1×2d_h`.
    pub layers: Vec<Var>,
    /// `H = Σ h^l`, `1×2d_h`.
    pub video: Var,
    pub attention: Vec<LayerAttention>,
    pub pooled_sizes: Vec<usize>,
}

/// Runs the GNN stack on already-encoded node features.
pub fn embed_nodes(
    tape: &mut Tape,
    params: &ParamStore,
    nodes: Var,
    adj: &Adjacency,
) -> Result<VideoEmbedding> {
    let mut v = nodes;
    let mut adj = adj.clone();
    let mut layers = Vec::with_capacity(GNN_LAYERS);
    let mut attention = Vec::with_capacity(GNN_LAYERS);
    let mut pooled_sizes = Vec::with_capacity(GNN_LAYERS);
    for l in 1..=GNN_LAYERS {
        let (out, att) = gat_forward(tape, params, l, v, &adj)?;
        let pooled = edge_pool(tape, params, l, out, &adj)?;
        let h = readout(tape, pooled.features)?;
        if let Some(&first) = layers.first() {
            let (a, b) = (tape.value(first).shape(), tape.value(h).shape());
            if a != b {
                return Err(Error::Shape {
                    node: h.index(),
                    op: "readout",
                    detail: format!(
                        "layer {l} readout is {}x{}, layer 1 is {}x{}",
                        b.0, b.1, a.0, a.1
                    ),
                });
            }
        }
        layers.push(h);
        attention.push(att);
        pooled_sizes.push(pooled.num_clusters());
        v = pooled.features;
        adj = pooled.adjacency;
    }
    let mut video = layers[0];
    for &h in &layers[1..] {
        video = tape.add(video, h)?;
    }
    Ok(VideoEmbedding {
        frames: nodes,
        layers,
        video,
        attention,
        pooled_sizes,
    })
}

/// Encodes the graph's node features and runs the GNN stack.
pub fn video_embed(tape: &mut Tape, params: &ParamStore, g: &VideoGraph) -> Result<VideoEmbedding> {
    let x = tape.input(g.node_features.clone());
    let nodes = encode_frames(tape, params, x)?;
    embed_nodes(tape, params, nodes, g.adjacency())
}

/// Embedding vector `H` of one video without keeping the tape around.
pub fn embed_vector(params: &ParamStore, g: &VideoGraph) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let e = video_embed(&mut tape, params, g)?;
    Ok(tape.value(e.video).data().to_vec())
}

/// Checks that `params` matches the layout expected by `dims`.
pub fn check_params(dims: &ModelDims, params: &ParamStore) -> Result<()> {
    for (name, rows, cols) in dims.param_shapes() {
        match params.get(&name) {
            None => return Err(Error::Config(format!("missing parameter `{name}`"))),
            Some(t) if t.shape() != (rows, cols) => {
                return Err(Error::Config(format!(
                    "parameter `{name}` is {}x{}, expected {rows}x{cols}",
                    t.rows(),
                    t.cols()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Writes `video_id,layer,src_node,dst_node,weight` rows.
pub fn write_attention_csv<W: Write>(
    out: &mut W,
    video_id: &str,
    layers: &[LayerAttention],
) -> std::io::Result<()> {
    for att in layers {
        for (dst, src, w) in att.edges() {
            writeln!(out, "{video_id},{},{src},{dst},{w}", att.layer)?;
        }
    }
    Ok(())
}
