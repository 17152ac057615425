use std::fmt::Write as _;

use crate::adversarial::StepMetrics;
use crate::error::{FormatError, Result};

pub const METRIC_HEADER: &str = "epoch,step,L_c,L_df,L_dv,disc_acc_f,disc_acc_v,src_acc,tgt_acc";

/// One row of the metric log. Training steps fill the loss columns; the
/// closing row (`step = None`, written as `final`) holds held-out source and
/// target accuracy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: Option<usize>,
    pub loss_cls: Option<f64>,
    pub loss_frame: Option<f64>,
    pub loss_video: Option<f64>,
    pub disc_acc_frame: Option<f64>,
    pub disc_acc_video: Option<f64>,
    pub src_acc: Option<f64>,
    pub tgt_acc: Option<f64>,
}

impl MetricRow {
    pub fn from_step(epoch: usize, step: usize, m: &StepMetrics) -> Self {
        Self {
            epoch,
            step: Some(step),
            loss_cls: Some(m.loss_cls),
            loss_frame: m.loss_frame,
            loss_video: m.loss_video,
            disc_acc_frame: m.disc_acc_frame,
            disc_acc_video: m.disc_acc_video,
            src_acc: Some(m.source_acc),
            tgt_acc: None,
        }
    }

    pub fn is_final(&self) -> bool {
        self.step.is_none()
    }

    fn write(&self, s: &mut String) {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let step = self
            .step
            .map_or_else(|| "final".to_string(), |s| s.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            step,
            opt(self.loss_cls),
            opt(self.loss_frame),
            opt(self.loss_video),
            opt(self.disc_acc_frame),
            opt(self.disc_acc_video),
            opt(self.src_acc),
            opt(self.tgt_acc)
        );
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let opt = |s: &str| -> Option<Option<f64>> {
            if s.is_empty() {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        };
        Some(Self {
            epoch: f[0].parse().ok()?,
            step: if f[1] == "final" {
                None
            } else {
                Some(f[1].parse().ok()?)
            },
            loss_cls: opt(f[2])?,
            loss_frame: opt(f[3])?,
            loss_video: opt(f[4])?,
            disc_acc_frame: opt(f[5])?,
            disc_acc_video: opt(f[6])?,
            src_acc: opt(f[7])?,
            tgt_acc: opt(f[8])?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        r.write(&mut s);
    }
    s
}

/// Inverse of [`metrics_csv`]; text that would not re-encode identically is
/// rejected.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRIC_HEADER) {
        return Err(FormatError::MetricBlock("missing header".into()).into());
    }
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            MetricRow::parse(l)
                .ok_or_else(|| FormatError::MetricBlock(format!("bad row {}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if metrics_csv(&rows) != text {
        return Err(FormatError::MetricBlock("not in canonical form".into()).into());
    }
    Ok(rows)
}

/// Accuracy recorded in the closing row.
pub fn final_row(rows: &[MetricRow]) -> Option<&MetricRow> {
    rows.iter().rev().find(|r| r.is_final())
}
