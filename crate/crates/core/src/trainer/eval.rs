use std::io::Write;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::adversarial::{argmax, classify};
use crate::autodiff::{ParamStore, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{self, video_embed};
use crate::graph::{build_video_graph, sample_frames, VideoGraph};

/// Samples every video to `cfg.frames` frames and builds its graph.
pub fn prepare_graphs(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<VideoGraph>> {
    ds.iter()
        .map(|v| {
            build_video_graph(
                &sample_frames(v, cfg.frames)?,
                cfg.effective_k(),
                cfg.self_loops,
            )
        })
        .collect()
}

pub fn predict_logits(params: &ParamStore, g: &VideoGraph) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let e = video_embed(&mut tape, params, g)?;
    let logits = classify(&mut tape, params, e.video)?;
    Ok(tape.value(logits).data().to_vec())
}

pub fn predict(params: &ParamStore, g: &VideoGraph) -> Result<usize> {
    Ok(argmax(&predict_logits(params, g)?))
}

pub(crate) fn accuracy_on(
    params: &ParamStore,
    graphs: &[&VideoGraph],
    labels: &[usize],
) -> Result<f64> {
    let mut hits = 0usize;
    for (g, &l) in graphs.iter().zip(labels) {
        if predict(params, g)? == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / graphs.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    /// Builds the report from predictions; pure so it can be tested without
    /// a model.
    pub fn from_predictions(labels: &[usize], predictions: Vec<usize>, num_classes: usize) -> Self {
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        let mut hits = 0;
        for (&l, &p) in labels.iter().zip(&predictions) {
            confusion[l][p] += 1;
            hits += usize::from(l == p);
        }
        Self {
            accuracy: hits as f64 / labels.len().max(1) as f64,
            confusion,
            predictions,
        }
    }
}

/// Top-1 accuracy and confusion counts on a labeled dataset.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset) -> Result<EvalReport> {
    let labels = ds.labels()?;
    if ds.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    check_compatible(ckpt, ds)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= ckpt.num_classes) {
        return Err(Error::Data(format!(
            "label {bad} is outside the model's {} classes",
            ckpt.num_classes
        )));
    }
    let graphs = prepare_graphs(ds, &ckpt.config)?;
    let predictions = graphs
        .iter()
        .map(|g| predict(&ckpt.params, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_predictions(
        &labels,
        predictions,
        ckpt.num_classes,
    ))
}

fn check_compatible(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    let d = ds.dim()?;
    if d != ckpt.d_in {
        return Err(Error::Data(format!(
            "dataset frames have dimension {d}, model expects {}",
            ckpt.d_in
        )));
    }
    Ok(())
}

/// Writes `video_id,domain,label,h0..h{2d_h−1}` rows; the label is empty
/// for unlabeled videos.
pub fn export_embeddings<W: Write>(ckpt: &Checkpoint, ds: &Dataset, out: &mut W) -> Result<usize> {
    check_compatible(ckpt, ds)?;
    let width = 2 * ckpt.config.d_h;
    write!(out, "video_id,domain,label")?;
    for i in 0..width {
        write!(out, ",h{i}")?;
    }
    writeln!(out)?;
    let graphs = prepare_graphs(ds, &ckpt.config)?;
    for (v, g) in ds.iter().zip(&graphs) {
        let h = gnn::embed_vector(&ckpt.params, g)?;
        let label = v.label.map(|l| l.to_string()).unwrap_or_default();
        write!(out, "{},{},{label}", v.video_id, v.domain)?;
        for x in h {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(graphs.len())
}

/// Writes per-layer attention weights for every video.
pub fn export_attention<W: Write>(ckpt: &Checkpoint, ds: &Dataset, out: &mut W) -> Result<usize> {
    check_compatible(ckpt, ds)?;
    writeln!(out, "video_id,layer,src_node,dst_node,weight")?;
    let graphs = prepare_graphs(ds, &ckpt.config)?;
    let mut rows = 0;
    for (v, g) in ds.iter().zip(&graphs) {
        let mut tape = Tape::new();
        let e = video_embed(&mut tape, &ckpt.params, g)?;
        rows += e.attention.iter().map(|a| a.weights.len()).sum::<usize>();
        gnn::write_attention_csv(out, &v.video_id, &e.attention)?;
    }
    Ok(rows)
}
