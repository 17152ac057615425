use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use vgda::data::{gen_synthetic, read_features, write_features, Dataset, SynthConfig, VGF_VERSION};
use vgda::graph::Domain;
use vgda::membench::{self, BenchConfig, CountingAlloc, ModelKind};
use vgda::trainer::{
    evaluate, export_attention, export_embeddings, final_row, metrics_csv, train, Checkpoint, TrainConfig,
    CKPT_VERSION,
};
use vgda::{Error, ErrorClass};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const CHECKPOINT_FILE: &str = "model.ckpt";
const METRICS_FILE: &str = "metrics.csv";
const META_FILE: &str = "run.meta";

#[derive(Parser, Debug)]
#[command(name = "vgda", version, about = "Graph-based unsupervised domain adaptation for video features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded source/target pair of synthetic VGF1 files.
    Synth(SynthArgs),
    /// Train a model on a labeled source set and an unlabeled target set.
    Train(TrainArgs),
    /// Top-1 accuracy and confusion matrix of a checkpoint on a labeled set.
    Eval(DataArgs),
    /// Peak-heap sweep of the graph model against the sub-video baseline.
    BenchMem(BenchArgs),
    /// Write per-video embeddings as CSV.
    ExportEmbed(DataArgs),
    /// Write per-layer attention weights as CSV.
    ExportAttn(DataArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    videos_per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 22)]
    t_min: usize,
    #[arg(long, default_value_t = 120)]
    t_max: usize,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 5)]
    anchors: usize,
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long, default_value_t = 0.15)]
    source_offset: f64,
    #[arg(long, default_value_t = 0.4)]
    target_offset: f64,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    style: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the target set without labels.
    #[arg(long)]
    unlabeled_target: bool,
    #[arg(long)]
    out: PathBuf,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            n_classes: self.classes,
            videos_per_class: self.videos_per_class,
            dim: self.dim,
            t_min: self.t_min,
            t_max: self.t_max,
            latent_dim: self.latent_dim,
            anchors: self.anchors,
            shift: self.shift,
            source_offset: self.source_offset,
            target_offset: self.target_offset,
            noise: self.noise,
            style: self.style,
            seed: self.seed,
        }
    }
}

/// Every flag maps to the `TrainConfig` key of the same name; unset flags
/// keep the defaults.
#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Print a progress line every N steps.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// dann or cdan.
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    d_h: Option<String>,
    #[arg(long)]
    enc_hidden: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    /// Two comma-separated widths.
    #[arg(long)]
    cls_hidden: Option<String>,
    #[arg(long)]
    disc_hidden: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    grl_lambda: Option<String>,
    #[arg(long)]
    grl_ramp: Option<String>,
    #[arg(long)]
    aux_weight: Option<String>,
    #[arg(long)]
    self_loops: Option<String>,
    #[arg(long)]
    no_similarity: Option<String>,
    #[arg(long)]
    no_frame_disc: Option<String>,
    #[arg(long)]
    no_video_disc: Option<String>,
    #[arg(long)]
    holdout: Option<String>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, Error> {
        let pairs = [
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("frames", &self.frames),
            ("k", &self.k),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("backbone", &self.backbone),
            ("seed", &self.seed),
            ("d_h", &self.d_h),
            ("enc_hidden", &self.enc_hidden),
            ("heads", &self.heads),
            ("cls_hidden", &self.cls_hidden),
            ("disc_hidden", &self.disc_hidden),
            ("alpha", &self.alpha),
            ("grl_lambda", &self.grl_lambda),
            ("grl_ramp", &self.grl_ramp),
            ("aux_weight", &self.aux_weight),
            ("self_loops", &self.self_loops),
            ("no_similarity", &self.no_similarity),
            ("no_frame_disc", &self.no_frame_disc),
            ("no_video_disc", &self.no_video_disc),
            ("holdout", &self.holdout),
        ];
        let cfg = TrainConfig::from_pairs(pairs.iter().filter_map(|(k, v)| v.as_deref().map(|v| (*k, v))))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Domain tag for the videos in `--data`: source or target.
    #[arg(long, default_value = "target")]
    domain: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated frame counts.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    frames: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d_in: usize,
    #[arg(long, default_value_t = 64)]
    enc_hidden: usize,
    #[arg(long, default_value_t = 64)]
    d_h: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    disc_hidden: usize,
    /// Videos per domain in the measured batch.
    #[arg(long, default_value_t = 1)]
    videos: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// 0 disables the cap.
    #[arg(long, default_value_t = 1 << 30)]
    mem_cap_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_domain(s: &str) -> Result<Domain, Error> {
    match s {
        "source" => Ok(Domain::Source),
        "target" => Ok(Domain::Target),
        _ => Err(Error::Config(format!("domain must be `source` or `target`, got `{s}`"))),
    }
}

/// `run.meta`: `key=value` lines with the tool and format versions, the
/// full argument vector and the effective configuration.
fn write_meta(out: &Path, command: &str, extra: &str) -> Result<(), Error> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let mut s = format!(
        "vgda_version={}\nvgf_version={VGF_VERSION}\ncheckpoint_version={CKPT_VERSION}\ncommand={command}\nargv={}\n",
        env!("CARGO_PKG_VERSION"),
        Value::from(argv)
    );
    s.push_str(extra);
    fs::write(out.join(META_FILE), s)?;
    Ok(())
}

fn progress(msg: impl std::fmt::Display) {
    eprintln!("[vgda] {msg}");
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, Value::from)
}

fn synth(a: &SynthArgs) -> Result<Value, Error> {
    let cfg = a.config();
    let (src, tgt) = gen_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut files = vec![a.out.join("source.vgf"), a.out.join("target.vgf")];
    write_features(&src, &files[0])?;
    write_features(&tgt, &files[1])?;
    if a.unlabeled_target {
        files.push(a.out.join("target_unlabeled.vgf"));
        write_features(&tgt.without_labels(), &files[2])?;
    }
    let c = &cfg;
    let meta = format!(
        "classes={}\nvideos_per_class={}\ndim={}\nt_min={}\nt_max={}\nlatent_dim={}\nanchors={}\nshift={}\nsource_offset={}\ntarget_offset={}\nnoise={}\nstyle={}\nseed={}\n",
        c.n_classes, c.videos_per_class, c.dim, c.t_min, c.t_max, c.latent_dim, c.anchors, c.shift,
        c.source_offset, c.target_offset, c.noise, c.style, c.seed
    );
    write_meta(&a.out, "synth", &meta)?;
    progress(format_args!("wrote {} source and {} target videos", src.len(), tgt.len()));
    Ok(json!({
        "command": "synth",
        "source_videos": src.len(),
        "target_videos": tgt.len(),
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}

fn run_train(a: &TrainArgs) -> Result<Value, Error> {
    let cfg = a.config()?;
    let source = read_features(&a.source, Domain::Source)?;
    let target = read_features(&a.target, Domain::Target)?;
    fs::create_dir_all(&a.out)?;
    write_meta(&a.out, "train", &cfg.to_kv())?;
    progress(format_args!(
        "training on {} source / {} target videos for {} epochs",
        source.len(),
        target.len(),
        cfg.epochs
    ));
    let started = Instant::now();
    let every = a.log_every.max(1);
    let ckpt = train(&source, &target, &cfg, |row| match row.step {
        Some(step) if step % every == 0 => progress(format_args!(
            "epoch {} step {step} L_c {:.4} L_df {} L_dv {} src_acc {:.3}",
            row.epoch,
            row.loss_cls.unwrap_or(f64::NAN),
            row.loss_frame.map_or("-".into(), |v| format!("{v:.4}")),
            row.loss_video.map_or("-".into(), |v| format!("{v:.4}")),
            row.src_acc.unwrap_or(f64::NAN),
        )),
        Some(_) => {}
        None => progress(format_args!(
            "done: holdout acc {} target acc {}",
            row.src_acc.map_or("-".into(), |v| format!("{v:.4}")),
            row.tgt_acc.map_or("-".into(), |v| format!("{v:.4}")),
        )),
    })?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    fs::write(a.out.join(METRICS_FILE), metrics_csv(&ckpt.history))?;
    let last = final_row(&ckpt.history);
    Ok(json!({
        "command": "train",
        "checkpoint": ckpt_path.display().to_string(),
        "epochs": ckpt.epoch,
        "steps": ckpt.history.len().saturating_sub(1),
        "src_acc": opt(last.and_then(|r| r.src_acc)),
        "tgt_acc": opt(last.and_then(|r| r.tgt_acc)),
        "seconds": started.elapsed().as_secs_f64(),
    }))
}

fn load_pair(a: &DataArgs) -> Result<(Checkpoint, Dataset), Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = read_features(&a.data, parse_domain(&a.domain)?)?;
    Ok((ckpt, data))
}

fn data_meta(a: &DataArgs) -> String {
    format!(
        "checkpoint={}\ndata={}\ndomain={}\n",
        a.checkpoint.display(),
        a.data.display(),
        a.domain
    )
}

fn run_eval(a: &DataArgs) -> Result<Value, Error> {
    let (ckpt, data) = load_pair(a)?;
    fs::create_dir_all(&a.out)?;
    write_meta(&a.out, "eval", &data_meta(a))?;
    let report = evaluate(&ckpt, &data)?;
    let mut csv = String::from("true\\predicted");
    for c in 0..ckpt.num_classes {
        csv.push_str(&format!(",{c}"));
    }
    csv.push('\n');
    for (c, row) in report.confusion.iter().enumerate() {
        csv.push_str(&c.to_string());
        for n in row {
            csv.push_str(&format!(",{n}"));
        }
        csv.push('\n');
    }
    fs::write(a.out.join("confusion.csv"), csv)?;
    progress(format_args!("accuracy {:.4} on {} videos", report.accuracy, data.len()));
    Ok(json!({
        "command": "eval",
        "accuracy": report.accuracy,
        "videos": data.len(),
        "confusion": report.confusion,
    }))
}

fn run_export(a: &DataArgs, attention: bool) -> Result<Value, Error> {
    let (ckpt, data) = load_pair(a)?;
    fs::create_dir_all(&a.out)?;
    let (command, file) = if attention {
        ("export-attn", "attention.csv")
    } else {
        ("export-embed", "embeddings.csv")
    };
    write_meta(&a.out, command, &data_meta(a))?;
    let path = a.out.join(file);
    let mut w = BufWriter::new(File::create(&path)?);
    let rows = if attention {
        export_attention(&ckpt, &data, &mut w)?
    } else {
        export_embeddings(&ckpt, &data, &mut w)?
    };
    w.flush()?;
    progress(format_args!("wrote {}", path.display()));
    Ok(json!({ "command": command, "file": path.display().to_string(), "rows": rows }))
}

fn run_bench(a: &BenchArgs) -> Result<Value, Error> {
    let cfg = BenchConfig {
        d_in: a.d_in,
        enc_hidden: a.enc_hidden,
        d_h: a.d_h,
        num_classes: a.classes,
        cls_hidden: [a.d_h, (a.d_h / 2).max(1)],
        disc_hidden: a.disc_hidden,
        videos_per_domain: a.videos,
        k_similarity: a.k,
        mem_cap_bytes: (a.mem_cap_bytes > 0).then_some(a.mem_cap_bytes),
        seed: a.seed,
    };
    fs::create_dir_all(&a.out)?;
    let meta = format!(
        "frames={}\nd_in={}\nenc_hidden={}\nd_h={}\nclasses={}\ncls_hidden={},{}\ndisc_hidden={}\nvideos_per_domain={}\nk={}\nmem_cap_bytes={}\nseed={}\n",
        a.frames.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        cfg.d_in, cfg.enc_hidden, cfg.d_h, cfg.num_classes, cfg.cls_hidden[0], cfg.cls_hidden[1],
        cfg.disc_hidden, cfg.videos_per_domain, cfg.k_similarity, a.mem_cap_bytes, cfg.seed
    );
    write_meta(&a.out, "bench-mem", &meta)?;
    progress(format_args!("measuring frames {:?}", a.frames));
    let sweep = membench::sweep_and_report(&a.frames, &cfg, &a.out)?;
    let fit = |k: ModelKind| {
        sweep
            .fit(k)
            .map_or(Value::Null, |f| json!({ "slope": f.slope, "intercept": f.intercept, "r2": f.r2 }))
    };
    let points: Vec<Value> = sweep
        .reports
        .iter()
        .map(|r| json!({ "method": r.method.as_str(), "frames": r.frames, "peak_bytes": r.peak_bytes, "aborted": r.aborted }))
        .collect();
    Ok(json!({
        "command": "bench-mem",
        "csv": a.out.join(membench::MEM_CSV).display().to_string(),
        "svg": a.out.join(membench::MEM_SVG).display().to_string(),
        "graph_fit": fit(ModelKind::Graph),
        "baseline_fit": fit(ModelKind::SubvideoBaseline),
        "points": points,
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::BenchMem(a) => run_bench(a),
        Command::ExportEmbed(a) => run_export(a, false),
        Command::ExportAttn(a) => run_export(a, true),
    };
    match result {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Validation => ExitCode::from(2),
                ErrorClass::Internal => ExitCode::from(3),
            }
        }
    }
}
