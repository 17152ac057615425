use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::alloc;
use crate::adversarial::{
    total_objective_with, Batch, DaConfig, Embedder, GrlSchedule, LabeledGraph,
};
use crate::autodiff::{Indices, ParamStore, SgdConfig, SgdState, Tape, Tensor2, Var};
use crate::error::{Error, Result};
use crate::gnn::encode_frames;
use crate::graph::{build_video_graph, Domain, FrameFeatureSequence, VideoGraph, DEFAULT_K};
use crate::model::{self, Backbone, ModelDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Graph,
    /// Enumerates every contiguous window of 2…T frames, pools each and
    /// attends over the windows.
    SubvideoBaseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Graph => "graph",
            ModelKind::SubvideoBaseline => "subvideo_baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(ModelKind::Graph),
            "subvideo_baseline" | "subvideo" => Ok(ModelKind::SubvideoBaseline),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Dimensions and batch shape shared by both measured models.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub d_in: usize,
    pub enc_hidden: usize,
    pub d_h: usize,
    pub num_classes: usize,
    pub cls_hidden: [usize; 2],
    pub disc_hidden: usize,
    /// Videos per domain; the batch holds twice this many.
    pub videos_per_domain: usize,
    pub k_similarity: usize,
    pub mem_cap_bytes: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_in: 64,
            enc_hidden: 64,
            d_h: 64,
            num_classes: 6,
            cls_hidden: [64, 32],
            disc_hidden: 64,
            videos_per_domain: 1,
            k_similarity: DEFAULT_K,
            mem_cap_bytes: Some(1 << 30),
            seed: 0,
        }
    }
}

impl BenchConfig {
    fn dims(&self) -> ModelDims {
        ModelDims {
            d_in: self.d_in,
            enc_hidden: self.enc_hidden,
            d_h: self.d_h,
            heads: 1,
            num_classes: self.num_classes,
            cls_hidden: self.cls_hidden,
            disc_hidden: self.disc_hidden,
            backbone: Backbone::Dann,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemReport {
    pub method: ModelKind,
    pub frames: usize,
    /// Heap high-water mark above the pre-step baseline.
    pub peak_bytes: usize,
    /// Bytes still held after the step (optimizer state).
    pub steady_bytes: usize,
    pub largest_alloc: usize,
    pub wall_time_s: f64,
    /// The cap was hit and the step was abandoned; `peak_bytes` is the
    /// high-water mark at that point.
    pub aborted: bool,
}

const SUB_ATTENTION: &str = "sub.att";

/// Baseline embedder: every contiguous window of the encoded frames is
/// materialized, mean- and max-pooled, scored, and the video feature is the
/// attention-weighted sum of window features.
pub fn subvideo_embedder(
    tape: &mut Tape,
    params: &ParamStore,
    g: &VideoGraph,
) -> Result<(Var, Var)> {
    let t = g.num_nodes();
    if t < 2 {
        return Err(Error::Precondition(
            "sub-video enumeration needs at least 2 frames".into(),
        ));
    }
    let x = tape.input(g.node_features.clone());
    let v = encode_frames(tape, params, x)?;
    let mut members = Vec::new();
    let mut offsets = vec![0];
    for size in 2..=t {
        for start in 0..=t - size {
            members.extend(start..start + size);
            offsets.push(members.len());
        }
    }
    let windows = offsets.len() - 1;
    let offsets: Indices = offsets.into();
    let gathered = tape.gather_rows(v, members.into())?;
    let mean = tape.segment_mean(gathered, offsets.clone())?;
    let max = tape.segment_max(gathered, offsets)?;
    let feats = tape.concat_cols(mean, max)?;
    let u = model::param(tape, params, SUB_ATTENTION);
    let score = tape.matmul(feats, u)?;
    let all: Indices = Rc::from(&[0, windows][..]);
    let att = tape.segment_softmax(score, all.clone())?;
    let src: Indices = (0..windows).collect();
    let video = tape.spmm(att, feats, src, all)?;
    Ok((v, video))
}

fn random_video(
    rng: &mut ChaCha8Rng,
    frames: usize,
    dim: usize,
    domain: Domain,
) -> Result<FrameFeatureSequence> {
    let data = (0..frames * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    FrameFeatureSequence::new("bench", domain, Some(0), dim, data)
}

/// Peak heap use of one forward, backward and optimizer step.
///
/// Graph construction happens inside the measured window for the graph
/// model. Parameters and raw inputs are allocated before it. Counts are
/// only meaningful when [`alloc::CountingAlloc`] is the global allocator.
pub fn measure_peak(kind: ModelKind, frames: usize, cfg: &BenchConfig) -> Result<MemReport> {
    if frames < 2 {
        return Err(Error::Precondition("frames must be >= 2".into()));
    }
    if !alloc::is_installed() {
        return Err(Error::Precondition(
            "the counting allocator is not installed".into(),
        ));
    }
    let dims = cfg.dims();
    let mut params = dims.init_params(cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let u = (0..2 * cfg.d_h)
        .map(|_| rng.random_range(-0.1..0.1))
        .collect();
    params.insert(SUB_ATTENTION, Tensor2::from_vec(2 * cfg.d_h, 1, u));
    let videos = (0..2 * cfg.videos_per_domain)
        .map(|i| {
            let domain = if i < cfg.videos_per_domain {
                Domain::Source
            } else {
                Domain::Target
            };
            random_video(&mut rng, frames, cfg.d_in, domain)
        })
        .collect::<Result<Vec<_>>>()?;
    let da = DaConfig {
        backbone: Backbone::Dann,
        alpha: 1.0,
        grl: GrlSchedule::Constant(1.0),
        use_frame_disc: true,
        use_video_disc: true,
        aux_weight: 0.0,
        detach_predictions: true,
    };
    let mut sgd = SgdState::new(SgdConfig::default());

    alloc::reset();
    alloc::set_cap(cfg.mem_cap_bytes);
    let start = Instant::now();
    let outcome = (|| -> Result<()> {
        let k = match kind {
            ModelKind::Graph => cfg.k_similarity,
            ModelKind::SubvideoBaseline => 0,
        };
        let graphs = videos
            .iter()
            .map(|v| build_video_graph(v, k, true))
            .collect::<Result<Vec<_>>>()?;
        let (src, tgt) = graphs.split_at(cfg.videos_per_domain);
        let src: Vec<LabeledGraph<'_>> = src
            .iter()
            .map(|g| LabeledGraph { graph: g, label: 0 })
            .collect();
        let tgt: Vec<&VideoGraph> = tgt.iter().collect();
        let embed: Embedder<'_> = match kind {
            ModelKind::Graph => &crate::adversarial::graph_embedder,
            ModelKind::SubvideoBaseline => &subvideo_embedder,
        };
        let mut tape = Tape::with_guard(alloc::cap_exceeded);
        let obj = total_objective_with(
            &mut tape,
            &params,
            Batch {
                source: &src,
                target: &tgt,
            },
            &da,
            Some(1.0),
            embed,
        )?;
        let grads = tape.backward(obj.loss)?;
        drop(tape);
        sgd.step(&mut params, &grads)
    })();
    let wall_time_s = start.elapsed().as_secs_f64();
    let stats = alloc::stats();
    alloc::set_cap(None);
    let aborted = match outcome {
        Ok(()) => false,
        Err(Error::MemCapExceeded { .. }) => true,
        Err(e) => return Err(e),
    };
    Ok(MemReport {
        method: kind,
        frames,
        peak_bytes: stats.peak,
        steady_bytes: stats.live.min(stats.peak),
        largest_alloc: stats.largest,
        wall_time_s,
        aborted,
    })
}
