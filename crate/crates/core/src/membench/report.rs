use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cost::analytic_cost;
use super::measure::{measure_peak, BenchConfig, MemReport, ModelKind};
use crate::error::{Error, Result};

pub const MEM_CSV: &str = "mem.csv";
pub const MEM_DETAIL_CSV: &str = "mem_detail.csv";
pub const MEM_SVG: &str = "mem.svg";

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub reports: Vec<MemReport>,
}

impl Sweep {
    pub fn series(&self, kind: ModelKind) -> Vec<&MemReport> {
        self.reports.iter().filter(|r| r.method == kind).collect()
    }

    /// Fit over the completed points of one method.
    pub fn fit(&self, kind: ModelKind) -> Option<LinearFit> {
        let pts: Vec<&MemReport> = self
            .series(kind)
            .into_iter()
            .filter(|r| !r.aborted)
            .collect();
        let xs: Vec<f64> = pts.iter().map(|r| r.frames as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|r| r.peak_bytes as f64).collect();
        linear_fit(&xs, &ys)
    }
}

pub const SWEEP_METHODS: [ModelKind; 2] = [ModelKind::Graph, ModelKind::SubvideoBaseline];

/// Measures both methods at every frame count and writes `mem.csv`,
/// `mem_detail.csv` and `mem.svg` into `out_dir`.
pub fn sweep_and_report(frames: &[usize], cfg: &BenchConfig, out_dir: &Path) -> Result<Sweep> {
    if frames.len() < 2 {
        return Err(Error::Config(
            "the sweep needs at least 2 frame counts".into(),
        ));
    }
    let mut reports = Vec::with_capacity(frames.len() * SWEEP_METHODS.len());
    for kind in SWEEP_METHODS {
        for &f in frames {
            reports.push(measure_peak(kind, f, cfg)?);
        }
    }
    let sweep = Sweep { reports };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(MEM_CSV), summary_csv(&sweep))?;
    fs::write(out_dir.join(MEM_DETAIL_CSV), detail_csv(&sweep))?;
    fs::write(
        out_dir.join(MEM_SVG),
        svg_chart(&sweep, cfg.videos_per_domain * 2),
    )?;
    Ok(sweep)
}

pub fn summary_csv(sweep: &Sweep) -> String {
    let mut s = String::from("method,frames,peak_bytes\n");
    for r in &sweep.reports {
        let _ = writeln!(s, "{},{},{}", r.method.as_str(), r.frames, r.peak_bytes);
    }
    s
}

pub fn detail_csv(sweep: &Sweep) -> String {
    let mut s =
        String::from("method,frames,peak_bytes,steady_bytes,largest_alloc,wall_time_s,aborted\n");
    for r in &sweep.reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{}",
            r.method.as_str(),
            r.frames,
            r.peak_bytes,
            r.steady_bytes,
            r.largest_alloc,
            r.wall_time_s,
            r.aborted
        );
    }
    s
}

const W: f64 = 720.0;
const H: f64 = 460.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn color(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Graph => "#1f77b4",
        ModelKind::SubvideoBaseline => "#d62728",
    }
}

fn analytic_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Graph => "Ours",
        ModelKind::SubvideoBaseline => "TCoN",
    }
}

/// Analytic units for one method, scaled so the first point matches.
fn overlay(kind: ModelKind, pts: &[&MemReport], v: usize) -> Vec<(f64, f64)> {
    let Some(first) = pts.first() else {
        return Vec::new();
    };
    let units = |n: usize| {
        analytic_cost(analytic_name(kind), n as u64, n as u64, v.max(1) as u64).unwrap_or(0) as f64
    };
    let base = units(first.frames);
    if base == 0.0 {
        return Vec::new();
    }
    let scale = first.peak_bytes as f64 / base;
    pts.iter()
        .map(|r| (r.frames as f64, units(r.frames) * scale))
        .collect()
}

pub fn svg_chart(sweep: &Sweep, videos: usize) -> String {
    let all: Vec<&MemReport> = sweep.reports.iter().collect();
    let x_max = all.iter().map(|r| r.frames).max().unwrap_or(1) as f64;
    let y_max = all.iter().map(|r| r.peak_bytes).max().unwrap_or(1).max(1) as f64 / MIB;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + x / x_max * pw;
    let py = |y: f64| TOP + ph - (y / y_max).min(1.05) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">Peak heap per training step</text>"#,
        LEFT + pw / 2.0
    );
    let _ = writeln!(
        s,
        r##"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="#333"/>"##,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let fx = x_max * i as f64 / 4.0;
        let fy = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            px(fx),
            TOP + ph + 18.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            LEFT - 6.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">frames</text>"#,
        LEFT + pw / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">peak heap (MiB)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (row, kind) in SWEEP_METHODS.into_iter().enumerate() {
        let pts: Vec<&MemReport> = sweep
            .series(kind)
            .into_iter()
            .filter(|r| !r.aborted)
            .collect();
        let c = color(kind);
        let line: Vec<String> = pts
            .iter()
            .map(|r| {
                format!(
                    "{:.1},{:.1}",
                    px(r.frames as f64),
                    py(r.peak_bytes as f64 / MIB)
                )
            })
            .collect();
        if !line.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
                line.join(" ")
            );
        }
        for r in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#,
                px(r.frames as f64),
                py(r.peak_bytes as f64 / MIB)
            );
        }
        let ov: Vec<String> = overlay(kind, &pts, videos)
            .into_iter()
            .map(|(x, y)| format!("{:.1},{:.1}", px(x), py(y / MIB)))
            .collect();
        if ov.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-dasharray="5,4" opacity="0.7"/>"#,
                ov.join(" ")
            );
        }
        let ly = TOP + 10.0 + row as f64 * 54.0;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            kind.as_str()
        );
        if let Some(fit) = sweep.fit(kind) {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11">slope {:.3e} B/frame, R² {:.4}</text>"#,
                lx,
                ly + 20.0,
                fit.slope,
                fit.r2
            );
        }
        let aborted = sweep.series(kind).iter().filter(|r| r.aborted).count();
        if aborted > 0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11">{aborted} point(s) over cap</text>"#,
                lx,
                ly + 34.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11">dashed: analytic cost, scaled</text>"#,
        LEFT + pw + 14.0,
        TOP + 130.0
    );
    s.push_str("</svg>\n");
    s
}

const MIB: f64 = 1024.0 * 1024.0;
