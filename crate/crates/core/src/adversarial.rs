//! Classifier head and frame/video-level adversarial domain losses.
//!
//! Discriminators output the logit of "this example is from the source
//! domain". Each level's loss is `mean_s BCE(D(x_s), 1) + mean_t BCE(D(x_t), 0)`
//! and the discriminator input passes through a gradient reversal layer, so
//! one descent step on `L_c + α·(L_df + L_dv)` trains the discriminators to
//! separate the domains while pushing the feature extractor to confuse them.

use std::rc::Rc;

use crate::autodiff::{Indices, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn;
use crate::graph::VideoGraph;
use crate::model::{self, Backbone};

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// λ of the gradient reversal layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrlSchedule {
    Constant(f64),
    /// `λ_max · (2/(1+exp(−10p)) − 1)` for training progress `p ∈ [0,1]`.
    Ramp(f64),
}

impl GrlSchedule {
    pub fn lambda(self, progress: f64) -> f64 {
        match self {
            GrlSchedule::Constant(l) => l,
            GrlSchedule::Ramp(max) => {
                max * (2.0 / (1.0 + (-10.0 * progress.clamp(0.0, 1.0)).exp()) - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaConfig {
    pub backbone: Backbone,
    pub alpha: f64,
    pub grl: GrlSchedule,
    pub use_frame_disc: bool,
    pub use_video_disc: bool,
    /// Weight of the frame-level classification loss that trains the
    /// auxiliary head used for frame-level CDAN conditioning.
    pub aux_weight: f64,
    /// Stop gradients through the predictions that condition CDAN.
    pub detach_predictions: bool,
}

impl Default for DaConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Cdan,
            alpha: 1.0,
            grl: GrlSchedule::Constant(1.0),
            use_frame_disc: true,
            use_video_disc: true,
            aux_weight: 0.1,
            detach_predictions: true,
        }
    }
}

impl DaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        let l = match self.grl {
            GrlSchedule::Constant(l) | GrlSchedule::Ramp(l) => l,
        };
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::Config(format!(
                "grl lambda must be finite and >= 0, got {l}"
            )));
        }
        if !(self.aux_weight >= 0.0) || !self.aux_weight.is_finite() {
            return Err(Error::Config(format!(
                "aux weight must be finite and >= 0, got {}",
                self.aux_weight
            )));
        }
        Ok(())
    }

    /// Whether any domain loss contributes to the objective.
    pub fn adversarial(&self) -> bool {
        self.alpha > 0.0 && (self.use_frame_disc || self.use_video_disc)
    }

    fn uses_aux(&self) -> bool {
        self.backbone == Backbone::Cdan && self.use_frame_disc && self.alpha > 0.0
    }
}

/// Class logits `n×K` from video features `n×2d_h`.
pub fn classify(tape: &mut Tape, params: &ParamStore, h: Var) -> Result<Var> {
    let want = params.expect("cls.l1.w").rows();
    let got = tape.value(h).cols();
    if got != want {
        return Err(Error::Precondition(format!(
            "classifier expects {want}-wide features, got {got}"
        )));
    }
    model::mlp(tape, params, "cls", 3, h)
}

/// Flattened outer product `f ⊗ g`, row-major (`f_i·g_k` at `i·K + k`).
pub fn cdan_condition(f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_distribution(g)?;
    Ok(f.iter()
        .flat_map(|&a| g.iter().map(move |&b| a * b))
        .collect())
}

fn check_distribution(g: &[f64]) -> Result<()> {
    let sum: f64 = g.iter().sum();
    if !sum.is_finite() {
        return Err(Error::Diverged("non-finite class predictions".into()));
    }
    if g.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::Precondition(format!(
            "conditioning vector is not a probability distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// Source and target rows for one discriminator level.
#[derive(Debug, Clone, Copy)]
pub struct DomainPair {
    pub source: Var,
    pub target: Var,
}

/// Loss and discriminator accuracy at one level.
#[derive(Debug, Clone, Copy)]
pub struct LevelLoss {
    pub loss: Var,
    pub accuracy: f64,
}

/// Discriminator loss at one level. `lambda = None` removes the reversal
/// layer, which is only useful for checking its effect.
pub fn domain_level_loss(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    inputs: DomainPair,
    lambda: Option<f64>,
) -> Result<LevelLoss> {
    let (ns, nt) = (
        tape.value(inputs.source).rows(),
        tape.value(inputs.target).rows(),
    );
    if ns == 0 || nt == 0 {
        return Err(Error::Precondition(format!(
            "{prefix}: need at least one source and one target example, got {ns} and {nt}"
        )));
    }
    let mut run = |x: Var, target: f64| -> Result<(Var, usize)> {
        let x = match lambda {
            Some(l) => tape.grl(x, l)?,
            None => x,
        };
        let logits = model::mlp(tape, params, prefix, 3, x)?;
        let correct = tape
            .value(logits)
            .data()
            .iter()
            .filter(|&&z| (z > 0.0) == (target > 0.5))
            .count();
        Ok((tape.bce_with_logits(logits, target)?, correct))
    };
    let (ls, cs) = run(inputs.source, 1.0)?;
    let (lt, ct) = run(inputs.target, 0.0)?;
    Ok(LevelLoss {
        loss: tape.add(ls, lt)?,
        accuracy: (cs + ct) as f64 / (ns + nt) as f64,
    })
}

/// DANN losses `(L_df, L_dv)` for whichever levels are given.
pub fn dann_domain_loss(
    tape: &mut Tape,
    params: &ParamStore,
    frames: Option<DomainPair>,
    videos: Option<DomainPair>,
    lambda: Option<f64>,
) -> Result<(Option<LevelLoss>, Option<LevelLoss>)> {
    let f = frames
        .map(|p| domain_level_loss(tape, params, "disc_f", p, lambda))
        .transpose()?;
    let v = videos
        .map(|p| domain_level_loss(tape, params, "disc_v", p, lambda))
        .transpose()?;
    Ok((f, v))
}

/// Features and the class distributions that condition them.
#[derive(Debug, Clone, Copy)]
pub struct Conditioned {
    pub features: DomainPair,
    pub predictions: DomainPair,
}

fn condition_rows(tape: &mut Tape, f: Var, g: Var, detach: bool) -> Result<Var> {
    let gv = tape.value(g);
    for r in 0..gv.rows() {
        check_distribution(gv.row(r))?;
    }
    let g = if detach { tape.detach(g)? } else { g };
    tape.outer_rows(f, g)
}

/// CDAN losses: as DANN, with each discriminator input replaced by
/// `feature ⊗ prediction`.
pub fn cdan_domain_loss(
    tape: &mut Tape,
    params: &ParamStore,
    frames: Option<Conditioned>,
    videos: Option<Conditioned>,
    lambda: Option<f64>,
    detach_predictions: bool,
) -> Result<(Option<LevelLoss>, Option<LevelLoss>)> {
    let mut cond = |c: Option<Conditioned>| -> Result<Option<DomainPair>> {
        c.map(|c| {
            Ok(DomainPair {
                source: condition_rows(
                    tape,
                    c.features.source,
                    c.predictions.source,
                    detach_predictions,
                )?,
                target: condition_rows(
                    tape,
                    c.features.target,
                    c.predictions.target,
                    detach_predictions,
                )?,
            })
        })
        .transpose()
    };
    let frames = cond(frames)?;
    let videos = cond(videos)?;
    dann_domain_loss(tape, params, frames, videos, lambda)
}

/// One labeled source video and its graph.
#[derive(Debug, Clone, Copy)]
pub struct LabeledGraph<'a> {
    pub graph: &'a VideoGraph,
    pub label: usize,
}

/// A mixed mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub source: &'a [LabeledGraph<'a>],
    pub target: &'a [&'a VideoGraph],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    pub loss_cls: f64,
    pub loss_frame: Option<f64>,
    pub loss_video: Option<f64>,
    pub loss_aux: Option<f64>,
    pub disc_acc_frame: Option<f64>,
    pub disc_acc_video: Option<f64>,
    pub source_acc: f64,
    pub total: f64,
}

/// Tape handles of a recorded objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: Var,
    pub metrics: StepMetrics,
    pub source_videos: Var,
    pub target_videos: Option<Var>,
    pub source_frames: Var,
    pub target_frames: Option<Var>,
}

struct Embedded {
    frames: Var,
    videos: Var,
    frame_counts: Vec<usize>,
}

/// Maps one video graph to `(encoded frames T×d_h, video feature 1×D)`.
pub type Embedder<'e> = &'e dyn Fn(&mut Tape, &ParamStore, &VideoGraph) -> Result<(Var, Var)>;

/// The graph model: Φ, then three GAT and edge-pool layers with summed readouts.
pub fn graph_embedder(tape: &mut Tape, params: &ParamStore, g: &VideoGraph) -> Result<(Var, Var)> {
    let e = gnn::video_embed(tape, params, g)?;
    Ok((e.frames, e.video))
}

fn embed_all<'g>(
    tape: &mut Tape,
    params: &ParamStore,
    embed: Embedder<'_>,
    graphs: impl Iterator<Item = &'g VideoGraph>,
) -> Result<Embedded> {
    let mut frames = Vec::new();
    let mut videos = Vec::new();
    let mut frame_counts = Vec::new();
    for g in graphs {
        let (f, v) = embed(tape, params, g)?;
        frame_counts.push(tape.value(f).rows());
        frames.push(f);
        videos.push(v);
    }
    Ok(Embedded {
        frames: tape.concat_rows(&frames)?,
        videos: tape.concat_rows(&videos)?,
        frame_counts,
    })
}

fn accuracy(tape: &Tape, logits: Var, labels: &[usize]) -> f64 {
    let l = tape.value(logits);
    let hits = (0..l.rows())
        .filter(|&r| argmax(l.row(r)) == labels[r])
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Records `L_c + aux_weight·L_aux + α·(L_df + L_dv)` for one batch.
/// `lambda` is the GRL coefficient for this step; `None` removes the layer.
pub fn total_objective(
    tape: &mut Tape,
    params: &ParamStore,
    batch: Batch<'_>,
    cfg: &DaConfig,
    lambda: Option<f64>,
) -> Result<Objective> {
    total_objective_with(tape, params, batch, cfg, lambda, &graph_embedder)
}

/// [`total_objective`] with a custom video embedder.
pub fn total_objective_with(
    tape: &mut Tape,
    params: &ParamStore,
    batch: Batch<'_>,
    cfg: &DaConfig,
    lambda: Option<f64>,
    embed: Embedder<'_>,
) -> Result<Objective> {
    cfg.validate()?;
    if batch.source.is_empty() {
        return Err(Error::Precondition("batch has no source videos".into()));
    }
    let labels: Vec<usize> = batch.source.iter().map(|s| s.label).collect();
    let k = params.expect("cls.l3.w").cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let src = embed_all(tape, params, embed, batch.source.iter().map(|s| s.graph))?;
    let src_logits = classify(tape, params, src.videos)?;
    let label_idx: Indices = Rc::from(labels.as_slice());
    let loss_cls = tape.cross_entropy(src_logits, label_idx)?;
    let mut metrics = StepMetrics {
        loss_cls: tape.value(loss_cls).item(),
        source_acc: accuracy(tape, src_logits, &labels),
        ..StepMetrics::default()
    };
    let mut loss = loss_cls;
    let mut target_videos = None;
    let mut target_frames = None;

    if cfg.adversarial() {
        if batch.target.is_empty() {
            return Err(Error::Precondition(
                "domain loss requested but batch has no target videos".into(),
            ));
        }
        let tgt = embed_all(tape, params, embed, batch.target.iter().copied())?;
        target_videos = Some(tgt.videos);
        target_frames = Some(tgt.frames);
        let frames = DomainPair {
            source: src.frames,
            target: tgt.frames,
        };
        let videos = DomainPair {
            source: src.videos,
            target: tgt.videos,
        };
        let (lf, lv) = match cfg.backbone {
            Backbone::Dann => dann_domain_loss(
                tape,
                params,
                cfg.use_frame_disc.then_some(frames),
                cfg.use_video_disc.then_some(videos),
                lambda,
            )?,
            Backbone::Cdan => {
                let frame_cond = if cfg.use_frame_disc {
                    let aux_s = model::mlp(tape, params, "aux", 3, src.frames)?;
                    let aux_t = model::mlp(tape, params, "aux", 3, tgt.frames)?;
                    if cfg.aux_weight > 0.0 {
                        let frame_labels: Indices = labels
                            .iter()
                            .zip(&src.frame_counts)
                            .flat_map(|(&l, &n)| std::iter::repeat_n(l, n))
                            .collect();
                        let aux_loss = tape.cross_entropy(aux_s, frame_labels)?;
                        metrics.loss_aux = Some(tape.value(aux_loss).item());
                        let weighted = tape.scale(aux_loss, cfg.aux_weight)?;
                        loss = tape.add(loss, weighted)?;
                    }
                    Some(Conditioned {
                        features: frames,
                        predictions: DomainPair {
                            source: tape.softmax_rows(aux_s)?,
                            target: tape.softmax_rows(aux_t)?,
                        },
                    })
                } else {
                    None
                };
                let video_cond = if cfg.use_video_disc {
                    let tgt_logits = classify(tape, params, tgt.videos)?;
                    Some(Conditioned {
                        features: videos,
                        predictions: DomainPair {
                            source: tape.softmax_rows(src_logits)?,
                            target: tape.softmax_rows(tgt_logits)?,
                        },
                    })
                } else {
                    None
                };
                cdan_domain_loss(
                    tape,
                    params,
                    frame_cond,
                    video_cond,
                    lambda,
                    cfg.detach_predictions,
                )?
            }
        };
        let mut domain = None;
        if let Some(l) = lf {
            metrics.loss_frame = Some(tape.value(l.loss).item());
            metrics.disc_acc_frame = Some(l.accuracy);
            domain = Some(l.loss);
        }
        if let Some(l) = lv {
            metrics.loss_video = Some(tape.value(l.loss).item());
            metrics.disc_acc_video = Some(l.accuracy);
            domain = Some(match domain {
                Some(d) => tape.add(d, l.loss)?,
                None => l.loss,
            });
        }
        if let Some(d) = domain {
            let d = tape.scale(d, cfg.alpha)?;
            loss = tape.add(loss, d)?;
        }
    }
    debug_assert!(!cfg.uses_aux() || cfg.aux_weight == 0.0 || metrics.loss_aux.is_some());
    metrics.total = tape.value(loss).item();
    Ok(Objective {
        loss,
        metrics,
        source_videos: src.videos,
        target_videos,
        source_frames: src.frames,
        target_frames,
    })
}
