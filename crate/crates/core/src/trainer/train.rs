use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::{accuracy_on, prepare_graphs};
use super::metrics::MetricRow;
use crate::adversarial::{total_objective, Batch, LabeledGraph};
use crate::autodiff::{SgdState, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::VideoGraph;

/// Splits `0..n` into `(train, holdout)` after a seeded shuffle.
fn split_holdout(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(held);
    idx.sort_unstable();
    (train, idx)
}

/// Endless reshuffled pass over `0..n`.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn check_inputs(source: &Dataset, target: &Dataset) -> Result<(usize, usize)> {
    if source.is_empty() {
        return Err(Error::Data("source dataset is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::Data("target dataset is empty".into()));
    }
    let d = source.dim()?;
    let dt = target.dim()?;
    if d != dt {
        return Err(Error::Data(format!(
            "source frames have dimension {d}, target frames have {dt}"
        )));
    }
    source.labels()?;
    let k = source.num_classes().unwrap_or(0);
    if k < 2 {
        return Err(Error::Data(
            "source labels must span at least 2 classes".into(),
        ));
    }
    Ok((d, k))
}

/// Trains from scratch. `progress` sees every metric row as it is produced.
/// The returned checkpoint's history ends with a `final` row holding
/// held-out source accuracy and, when the target set is labeled, target
/// accuracy; target labels are never used otherwise.
pub fn train(
    source: &Dataset,
    target: &Dataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&MetricRow),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let (d_in, num_classes) = check_inputs(source, target)?;
    let dims = cfg.dims(d_in, num_classes);
    let mut params = dims.init_params(cfg.seed)?;
    let da = cfg.da();
    let mut sgd = SgdState::new(cfg.sgd());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let src_graphs = prepare_graphs(source, cfg)?;
    let tgt_graphs = prepare_graphs(target, cfg)?;
    let labels = source.labels()?;
    let (train_idx, holdout_idx) = split_holdout(source.len(), cfg.holdout, &mut rng);
    let mut target_cycle = Cycle::new(target.len(), &mut rng);

    let half = cfg.batch_size / 2;
    let steps_per_epoch = train_idx.len().div_ceil(half);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut history = Vec::with_capacity(total_steps + 1);
    let mut order = train_idx.clone();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(half) {
            let tgt = target_cycle.take(chunk.len(), &mut rng);
            let src_batch: Vec<LabeledGraph<'_>> = chunk
                .iter()
                .map(|&i| LabeledGraph {
                    graph: &src_graphs[i],
                    label: labels[i],
                })
                .collect();
            let tgt_batch: Vec<&VideoGraph> = tgt.iter().map(|&i| &tgt_graphs[i]).collect();
            let lambda = da.grl.lambda(step as f64 / total_steps as f64);
            let mut tape = Tape::new();
            let obj = total_objective(
                &mut tape,
                &params,
                Batch {
                    source: &src_batch,
                    target: &tgt_batch,
                },
                &da,
                Some(lambda),
            )?;
            if !obj.metrics.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss is {} at step {step}",
                    obj.metrics.total
                )));
            }
            let grads = tape.backward(obj.loss)?;
            drop(tape);
            sgd.step(&mut params, &grads)?;
            let row = MetricRow::from_step(epoch, step, &obj.metrics);
            progress(&row);
            history.push(row);
            step += 1;
        }
    }

    let held: Vec<&VideoGraph> = holdout_idx.iter().map(|&i| &src_graphs[i]).collect();
    let held_labels: Vec<usize> = holdout_idx.iter().map(|&i| labels[i]).collect();
    let src_acc = if held.is_empty() {
        None
    } else {
        Some(accuracy_on(&params, &held, &held_labels)?)
    };
    let tgt_acc = match target.labels() {
        Ok(tl) => Some(accuracy_on(
            &params,
            &tgt_graphs.iter().collect::<Vec<_>>(),
            &tl,
        )?),
        Err(_) => None,
    };
    let last = MetricRow {
        epoch: cfg.epochs,
        src_acc,
        tgt_acc,
        ..MetricRow::default()
    };
    progress(&last);
    history.push(last);
    Ok(Checkpoint {
        config: cfg.clone(),
        d_in,
        num_classes,
        epoch: cfg.epochs,
        params,
        history,
    })
}
