//! Per-video frame graphs.
//!
//! Every sampled frame is a node. Consecutive frames are joined by temporal
//! edges, and each frame is joined to its `k` nearest frames in feature space
//! (Euclidean distance, ties to the smaller frame index) by similarity edges.
//! Adjacency is kept as sorted neighbor lists so storage is `O(T·k)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use crate::autodiff::Tensor2;
use crate::error::{Error, Result};

/// Largest graph for which a dense adjacency matrix may be materialized.
pub const DENSE_LIMIT: usize = 512;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One video as an ordered list of frame feature vectors, stored at 32-bit
/// precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    pub domain: Domain,
    pub label: Option<usize>,
    dim: usize,
    frames: Vec<f32>,
}

impl FrameFeatureSequence {
    /// `frames` is row-major, `T × dim`.
    pub fn new(
        video_id: impl Into<String>,
        domain: Domain,
        label: Option<usize>,
        dim: usize,
        frames: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("frame dimension must be >= 1".into()));
        }
        if frames.is_empty() {
            return Err(Error::Data("video has no frames".into()));
        }
        if frames.len() % dim != 0 {
            return Err(Error::Data(format!(
                "{} values do not divide into frames of dimension {dim}",
                frames.len()
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            domain,
            label,
            dim,
            frames,
        })
    }

    pub fn from_rows(
        video_id: impl Into<String>,
        domain: Domain,
        label: Option<usize>,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("frames have differing dimensions".into()));
        }
        Self::new(video_id, domain, label, dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f32] {
        &self.frames
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::from_vec(
            self.num_frames(),
            self.dim,
            self.frames.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

/// Frame indices `round(j·(T−1)/(n−1))` for `j = 0..n`.
pub fn sample_indices(num_frames: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Precondition("sample count must be >= 1".into()));
    }
    if num_frames == 0 {
        return Err(Error::Precondition("cannot sample an empty video".into()));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = num_frames - 1;
    let den = n - 1;
    // round-half-up in integer arithmetic
    Ok((0..n).map(|j| (2 * j * span + den) / (2 * den)).collect())
}

/// Resamples a video to exactly `n` frames with uniform stride, repeating
/// frames when the video is shorter than `n`.
pub fn sample_frames(seq: &FrameFeatureSequence, n: usize) -> Result<FrameFeatureSequence> {
    let idx = sample_indices(seq.num_frames(), n)?;
    let mut frames = Vec::with_capacity(n * seq.dim);
    for &i in &idx {
        frames.extend_from_slice(seq.frame(i));
    }
    Ok(FrameFeatureSequence {
        video_id: seq.video_id.clone(),
        domain: seq.domain,
        label: seq.label,
        dim: seq.dim,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    SelfLoop,
    Temporal,
    Similarity,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::SelfLoop => "self_loop",
            EdgeKind::Temporal => "temporal",
            EdgeKind::Similarity => "similarity",
        }
    }
}

/// Directed neighbor lists in CSR layout, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Adjacency {
    /// Builds from per-node lists; each list is sorted and deduplicated.
    pub fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total = lists.iter().map(Vec::len).sum();
        let mut neighbors = Vec::with_capacity(total);
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            neighbors.extend_from_slice(l);
            offsets.push(neighbors.len());
        }
        Self { offsets, neighbors }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, m: usize) -> &[usize] {
        &self.neighbors[self.offsets[m]..self.offsets[m + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn flat_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn contains(&self, m: usize, n: usize) -> bool {
        m < self.num_nodes() && self.neighbors(m).binary_search(&n).is_ok()
    }

    pub fn degree(&self, m: usize) -> usize {
        self.offsets[m + 1] - self.offsets[m]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes()).all(|m| self.neighbors(m).iter().all(|&n| self.contains(n, m)))
    }

    /// Undirected edges `(m, n)` with `m < n`, excluding self-loops.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for m in 0..self.num_nodes() {
            out.extend(
                self.neighbors(m)
                    .iter()
                    .filter(|&&n| n > m)
                    .map(|&n| (m, n)),
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoGraph {
    pub node_features: Tensor2,
    adjacency: Adjacency,
    /// Parallel to the flat neighbor array.
    kinds: Vec<EdgeKind>,
    pub k_similarity: usize,
    pub self_loops: bool,
}

impl VideoGraph {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn edge_kind(&self, m: usize, n: usize) -> Option<EdgeKind> {
        let nb = self.adjacency.neighbors(m);
        nb.binary_search(&n)
            .ok()
            .map(|p| self.kinds[self.adjacency.offsets[m] + p])
    }

    /// Undirected edges of one kind, `m < n` (`m == n` for self-loops).
    pub fn edges_of_kind(&self, kind: EdgeKind) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for m in 0..self.num_nodes() {
            let base = self.adjacency.offsets[m];
            for (p, &n) in self.adjacency.neighbors(m).iter().enumerate() {
                if n >= m && self.kinds[base + p] == kind {
                    out.push((m, n));
                }
            }
        }
        out
    }

    /// Dense boolean adjacency; refused above [`DENSE_LIMIT`] nodes.
    pub fn dense_adjacency(&self) -> Result<Vec<Vec<bool>>> {
        let t = self.num_nodes();
        if t > DENSE_LIMIT {
            return Err(Error::Precondition(format!(
                "dense adjacency is limited to {DENSE_LIMIT} nodes, graph has {t}"
            )));
        }
        let mut dense = vec![vec![false; t]; t];
        for (m, row) in dense.iter_mut().enumerate() {
            for &n in self.adjacency.neighbors(m) {
                row[n] = true;
            }
        }
        Ok(dense)
    }

    /// Hand-built graph from a dense (possibly invalid) matrix. Kinds are
    /// inferred: diagonal → self-loop, `|m−n| = 1` → temporal, else similarity.
    pub fn from_dense(
        node_features: Tensor2,
        dense: &[Vec<bool>],
        k_similarity: usize,
        self_loops: bool,
    ) -> Self {
        let lists: Vec<Vec<usize>> = dense
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(n, _)| n)
                    .collect()
            })
            .collect();
        let adjacency = Adjacency::from_lists(lists);
        let kinds = (0..adjacency.num_nodes())
            .flat_map(|m| {
                adjacency
                    .neighbors(m)
                    .iter()
                    .map(move |&n| infer_kind(m, n))
            })
            .collect();
        Self {
            node_features,
            adjacency,
            kinds,
            k_similarity,
            self_loops,
        }
    }
}

fn infer_kind(m: usize, n: usize) -> EdgeKind {
    match m.abs_diff(n) {
        0 => EdgeKind::SelfLoop,
        1 => EdgeKind::Temporal,
        _ => EdgeKind::Similarity,
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` frames nearest to frame `m` (excluding `m`), nearest first.
fn nearest_frames(
    seq: &FrameFeatureSequence,
    m: usize,
    k: usize,
    heap: &mut BinaryHeap<Candidate>,
) -> Vec<usize> {
    heap.clear();
    let vm = seq.frame(m);
    for n in 0..seq.num_frames() {
        if n == m {
            continue;
        }
        let dist: f64 = vm
            .iter()
            .zip(seq.frame(n))
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        let cand = Candidate { dist, index: n };
        if heap.len() < k {
            heap.push(cand);
        } else if heap.peek().is_some_and(|worst| cand < *worst) {
            heap.pop();
            heap.push(cand);
        }
    }
    let mut picked: Vec<Candidate> = heap.drain().collect();
    picked.sort();
    picked.into_iter().map(|c| c.index).collect()
}

/// For each frame, the `k` nearest other frames (all of them when fewer than
/// `k` exist), nearest first.
pub fn similarity_selections(seq: &FrameFeatureSequence, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new(); seq.num_frames()];
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    (0..seq.num_frames())
        .map(|m| nearest_frames(seq, m, k, &mut heap))
        .collect()
}

/// Undirected similarity edges `(m, n)`, `m < n`, before merging with the
/// temporal chain.
pub fn similarity_edges(seq: &FrameFeatureSequence, k: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = similarity_selections(seq, k)
        .into_iter()
        .enumerate()
        .flat_map(|(m, picks)| picks.into_iter().map(move |n| (m.min(n), m.max(n))))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Builds the frame graph: temporal chain plus per-node top-`k` similarity
/// edges, symmetrized. An edge that is both temporal and similar is stored
/// once as temporal.
pub fn build_video_graph(
    seq: &FrameFeatureSequence,
    k: usize,
    self_loops: bool,
) -> Result<VideoGraph> {
    let t = seq.num_frames();
    if t == 0 {
        return Err(Error::Data(
            "cannot build a graph for an empty video".into(),
        ));
    }
    let mut lists: Vec<Vec<(usize, EdgeKind)>> = vec![Vec::with_capacity(k + 3); t];
    for m in 0..t {
        if self_loops {
            lists[m].push((m, EdgeKind::SelfLoop));
        }
        if m + 1 < t {
            lists[m].push((m + 1, EdgeKind::Temporal));
            lists[m + 1].push((m, EdgeKind::Temporal));
        }
    }
    for (m, picks) in similarity_selections(seq, k).into_iter().enumerate() {
        for n in picks {
            lists[m].push((n, EdgeKind::Similarity));
            lists[n].push((m, EdgeKind::Similarity));
        }
    }
    let mut offsets = Vec::with_capacity(t + 1);
    offsets.push(0);
    let mut neighbors = Vec::new();
    let mut kinds = Vec::new();
    for list in &mut lists {
        // (neighbor, kind) ordering puts self-loop < temporal < similarity
        // first for a given neighbor, so dedup keeps the winning kind.
        list.sort_unstable();
        list.dedup_by_key(|e| e.0);
        neighbors.extend(list.iter().map(|e| e.0));
        kinds.extend(list.iter().map(|e| e.1));
        offsets.push(neighbors.len());
    }
    Ok(VideoGraph {
        node_features: seq.to_tensor(),
        adjacency: Adjacency { offsets, neighbors },
        kinds,
        k_similarity: k,
        self_loops,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    FeatureRows { rows: usize, nodes: usize },
    MalformedAdjacency,
    Asymmetric,
    SelfLoopMismatch { node: usize },
    TemporalChainBroken { at: usize },
    IsolatedNode { node: usize },
    TemporalEdgeCount { found: usize, expected: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::FeatureRows { rows, nodes } => {
                write!(
                    f,
                    "node feature rows ({rows}) do not match node count ({nodes})"
                )
            }
            GraphViolation::MalformedAdjacency => write!(f, "malformed adjacency"),
            GraphViolation::Asymmetric => write!(f, "asymmetric adjacency"),
            GraphViolation::SelfLoopMismatch { node } => {
                write!(f, "self-loop mismatch at node {node}")
            }
            GraphViolation::TemporalChainBroken { at } => {
                write!(f, "temporal chain broken between {at} and {}", at + 1)
            }
            GraphViolation::IsolatedNode { node } => write!(f, "isolated node {node}"),
            GraphViolation::TemporalEdgeCount { found, expected } => {
                write!(f, "{found} temporal edges, expected {expected}")
            }
        }
    }
}

/// Checks every structural invariant; empty iff the graph is valid.
pub fn validate_graph(g: &VideoGraph) -> Vec<GraphViolation> {
    let mut out = Vec::new();
    let adj = &g.adjacency;
    let t = adj.num_nodes();
    if g.node_features.rows() != t {
        out.push(GraphViolation::FeatureRows {
            rows: g.node_features.rows(),
            nodes: t,
        });
    }
    let well_formed = adj.offsets.first() == Some(&0)
        && adj.offsets.last() == Some(&adj.neighbors.len())
        && adj.offsets.windows(2).all(|w| w[0] <= w[1])
        && g.kinds.len() == adj.neighbors.len()
        && (0..t).all(|m| {
            let nb = adj.neighbors(m);
            nb.windows(2).all(|w| w[0] < w[1]) && nb.iter().all(|&n| n < t)
        });
    if !well_formed {
        out.push(GraphViolation::MalformedAdjacency);
        return out;
    }
    if !adj.is_symmetric() {
        out.push(GraphViolation::Asymmetric);
    }
    for m in 0..t {
        if adj.contains(m, m) != g.self_loops {
            out.push(GraphViolation::SelfLoopMismatch { node: m });
        }
    }
    for m in 0..t.saturating_sub(1) {
        if !(adj.contains(m, m + 1) && adj.contains(m + 1, m)) {
            out.push(GraphViolation::TemporalChainBroken { at: m });
        }
    }
    for m in 0..t {
        if adj.degree(m) == 0 {
            out.push(GraphViolation::IsolatedNode { node: m });
        }
    }
    let temporal = g.edges_of_kind(EdgeKind::Temporal).len();
    if temporal != t.saturating_sub(1) {
        out.push(GraphViolation::TemporalEdgeCount {
            found: temporal,
            expected: t.saturating_sub(1),
        });
    }
    out
}
