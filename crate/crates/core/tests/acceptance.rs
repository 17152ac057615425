//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgda::adversarial::{cdan_domain_loss, dann_domain_loss, Conditioned, DomainPair};
use vgda::autodiff::{Tape, Tensor2};
use vgda::data::{
    decode_features, encode_features, gen_synthetic, read_features, write_features, Dataset,
    SynthConfig,
};
use vgda::gnn::embed_nodes;
use vgda::graph::{build_video_graph, Adjacency, Domain, FrameFeatureSequence};
use vgda::membench::{measure_peak, sweep_and_report, BenchConfig, CountingAlloc, ModelKind};
use vgda::model::{Backbone, ModelDims};
use vgda::trainer::{evaluate, export_embeddings, final_row, train, Checkpoint, TrainConfig};
use vgda::Error;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, 0, String::new());
    let mut max_params = 0;
    for seed in 0..20 {
        let c = common::pipeline_gradcheck(seed);
        max_params = max_params.max(c.params);
        if c.worst >= worst.0 {
            worst = (c.worst, seed, c.worst_param);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "20 seeds, <= {max_params} parameters, max rel err {:.2e} (seed {}, {}), {secs:.1} s",
        worst.0, worst.1, worst.2
    );
    check(worst.0 < 1e-4 && max_params <= 500 && secs < 60.0, detail)
}

fn grl_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut disc_changed = 0usize;
    for seed in 0..20 {
        let lambda = rng.random_range(0.0..3.0);
        let with = common::grl_grads(seed, Some(lambda));
        let without = common::grl_grads(seed, None);
        for (name, g) in without.iter() {
            let r = with
                .get(name)
                .ok_or(format!("{name} missing with reversal"))?;
            let disc = name.starts_with("disc_");
            for (a, b) in r.data().iter().zip(g.data()) {
                if disc {
                    disc_changed += usize::from(a != b);
                } else {
                    worst = worst.max((a + lambda * b).abs());
                }
            }
        }
    }
    check(
        worst <= 1e-10 && disc_changed == 0,
        format!("20 seeds, max |g_rev + λ·g| = {worst:.1e}, {disc_changed} discriminator entries changed"),
    )
}

fn graph_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ks = [0, 1, 3, 5];
    let mut mismatches = 0;
    for i in 0..100 {
        let t = rng.random_range(1..=50);
        let d = rng.random_range(1..=8);
        let k = ks[i % ks.len()];
        let rows: Vec<Vec<f32>> = (0..t)
            .map(|_| (0..d).map(|_| rng.random_range(-10.0f32..10.0)).collect())
            .collect();
        let seq = FrameFeatureSequence::from_rows("v", Domain::Source, None, &rows)
            .map_err(|e| e.to_string())?;
        let g = build_video_graph(&seq, k, true).map_err(|e| e.to_string())?;
        let adj = g.adjacency();
        let got: std::collections::BTreeSet<(usize, usize)> = (0..adj.num_nodes())
            .flat_map(|m| adj.neighbors(m).iter().map(move |&n| (m, n)))
            .collect();
        mismatches += usize::from(got != common::oracle_edges(&rows, k, true));
    }
    check(
        mismatches == 0,
        format!("100 instances, k in {{0,1,3,5}}, {mismatches} mismatches"),
    )
}

fn embedding_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d_h = 6;
    let dims = ModelDims {
        enc_hidden: 6,
        d_h,
        cls_hidden: [4, 4],
        disc_hidden: 4,
        ..ModelDims::new(4, 3, Backbone::Dann)
    };
    let (mut sum_err, mut perm_err) = (0.0f64, 0.0f64);
    let mut bad_shapes = 0;
    for seed in 0..50 {
        let params = dims.init_params(seed).map_err(|e| e.to_string())?;
        let t = rng.random_range(2..30);
        let mut lists: Vec<Vec<usize>> = (0..t).map(|m| vec![m]).collect();
        for m in 0..t {
            for n in m + 1..t {
                if rng.random_bool(0.3) {
                    lists[m].push(n);
                    lists[n].push(m);
                }
            }
        }
        let adj = Adjacency::from_lists(lists);
        let v = Tensor2::from_vec(
            t,
            d_h,
            (0..t * d_h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut inv = vec![0; t];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pv = Tensor2::from_vec(
            t,
            d_h,
            perm.iter().flat_map(|&old| v.row(old).to_vec()).collect(),
        );
        let padj = Adjacency::from_lists(
            perm.iter()
                .map(|&old| adj.neighbors(old).iter().map(|&n| inv[n]).collect())
                .collect(),
        );
        let mut run = |v: Tensor2, adj: &Adjacency| -> Result<Tensor2, String> {
            let mut tape = Tape::new();
            let x = tape.input(v);
            let e = embed_nodes(&mut tape, &params, x, adj).map_err(|e| e.to_string())?;
            bad_shapes += e
                .layers
                .iter()
                .filter(|&&h| tape.value(h).shape() != (1, 2 * d_h))
                .count();
            for a in &e.attention {
                let offs = a.adjacency.offsets();
                for m in 0..a.adjacency.num_nodes() {
                    let s: f64 = a.weights[offs[m]..offs[m + 1]].iter().sum();
                    sum_err = sum_err.max((s - 1.0).abs());
                }
            }
            Ok(tape.value(e.video).clone())
        };
        let h1 = run(v, &adj)?;
        let h2 = run(pv, &padj)?;
        perm_err = perm_err.max(h1.max_abs_diff(&h2));
    }
    check(
        sum_err <= 1e-9 && perm_err <= 1e-9 && bad_shapes == 0,
        format!(
            "50 graphs, attention row sums within {sum_err:.1e}, permutation diff {perm_err:.1e}, {bad_shapes} readouts not 2·d_h"
        ),
    )
}

fn memory_growth() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = BenchConfig::default();
    let sweep =
        sweep_and_report(&[8, 16, 32, 64, 128], &cfg, dir.path()).map_err(|e| e.to_string())?;
    let fit = sweep
        .fit(ModelKind::Graph)
        .ok_or("no fit for the graph model")?;
    let base = sweep.series(ModelKind::SubvideoBaseline);
    let mut min_ratio = f64::INFINITY;
    for w in base.windows(2).filter(|w| w[0].frames >= 16) {
        if w[0].aborted || w[1].aborted {
            return Err(format!(
                "baseline hit the memory cap at {} frames",
                w[1].frames
            ));
        }
        min_ratio = min_ratio.min(w[1].peak_bytes as f64 / w[0].peak_bytes as f64);
    }
    let g25 = measure_peak(ModelKind::Graph, 25, &cfg).map_err(|e| e.to_string())?;
    let b25 = measure_peak(ModelKind::SubvideoBaseline, 25, &cfg).map_err(|e| e.to_string())?;
    let frac = g25.peak_bytes as f64 / b25.peak_bytes as f64;
    let secs = start.elapsed().as_secs_f64();
    check(
        fit.r2 >= 0.98 && min_ratio >= 3.0 && frac <= 0.6 && secs < 300.0,
        format!(
            "graph R² {:.5}, baseline doubling ratio >= {min_ratio:.2} from 16 frames, graph/baseline at 25 frames {frac:.3} ({} vs {} bytes), {secs:.1} s",
            fit.r2, g25.peak_bytes, b25.peak_bytes
        ),
    )
}

struct Run {
    acc: f64,
    secs: f64,
}

fn run_variant(src: &Dataset, tgt: &Dataset, cfg: &TrainConfig) -> Result<Run, String> {
    let start = Instant::now();
    let ckpt = train(src, tgt, cfg, |_| {}).map_err(|e| e.to_string())?;
    let acc = final_row(&ckpt.history)
        .and_then(|r| r.tgt_acc)
        .ok_or("no target accuracy in the final row")?;
    Ok(Run {
        acc,
        secs: start.elapsed().as_secs_f64(),
    })
}

/// Target accuracies per seed for every variant the adaptation and
/// ablation criteria compare.
#[derive(Default)]
struct Experiments {
    source_only: Vec<f64>,
    full: Vec<f64>,
    no_similarity: Vec<f64>,
    video_only: Vec<f64>,
    frame_only: Vec<f64>,
    full_reverse: Vec<f64>,
    frame_only_reverse: Vec<f64>,
    /// Source-only plus full adaptation, per seed.
    pair_secs: Vec<f64>,
}

const SEEDS: u64 = 5;

fn run_experiments() -> Result<Experiments, String> {
    let mut ex = Experiments::default();
    for seed in 0..SEEDS {
        let (src, tgt) = gen_synthetic(&common::desk_data(seed)).map_err(|e| e.to_string())?;
        let rev_src = tgt.clone().with_domain(Domain::Source);
        let rev_tgt = src.clone().with_domain(Domain::Target);
        let full = common::desk_config(seed);
        let source_only = TrainConfig {
            alpha: 0.0,
            ..full.clone()
        };
        let no_sim = TrainConfig {
            no_similarity: true,
            ..full.clone()
        };
        let video_only = TrainConfig {
            no_frame_disc: true,
            ..full.clone()
        };
        let frame_only = TrainConfig {
            no_video_disc: true,
            ..full.clone()
        };
        let so = run_variant(&src, &tgt, &source_only)?;
        let fu = run_variant(&src, &tgt, &full)?;
        ex.pair_secs.push(so.secs + fu.secs);
        ex.source_only.push(so.acc);
        ex.full.push(fu.acc);
        ex.no_similarity.push(run_variant(&src, &tgt, &no_sim)?.acc);
        ex.video_only
            .push(run_variant(&src, &tgt, &video_only)?.acc);
        ex.frame_only
            .push(run_variant(&src, &tgt, &frame_only)?.acc);
        ex.full_reverse
            .push(run_variant(&rev_src, &rev_tgt, &full)?.acc);
        ex.frame_only_reverse
            .push(run_variant(&rev_src, &rev_tgt, &frame_only)?.acc);
        eprintln!(
            "  seed {seed}: source-only {:.3}, full {:.3}, k=0 {:.3}, D_v only {:.3}, D_f only {:.3}, reverse full {:.3}, reverse D_f only {:.3}",
            ex.source_only[seed as usize],
            ex.full[seed as usize],
            ex.no_similarity[seed as usize],
            ex.video_only[seed as usize],
            ex.frame_only[seed as usize],
            ex.full_reverse[seed as usize],
            ex.frame_only_reverse[seed as usize],
        );
    }
    Ok(ex)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn wins(a: &[f64], b: &[f64], strict: bool) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| if strict { x > y } else { x >= y })
        .count()
}

fn adaptation(ex: &Experiments) -> Outcome {
    let gain = mean(&ex.full) - mean(&ex.source_only);
    let slowest = ex.pair_secs.iter().cloned().fold(0.0, f64::max);
    check(
        gain >= 0.10 && slowest < 300.0,
        format!(
            "target accuracy over {SEEDS} seeds: CDAN {:.3}, source-only {:.3}, gain {:.1} points, slowest seed {slowest:.1} s",
            mean(&ex.full),
            mean(&ex.source_only),
            100.0 * gain
        ),
    )
}

fn ablations(ex: &Experiments) -> Outcome {
    let k_wins = wins(&ex.full, &ex.no_similarity, false);
    let dv_wins = wins(&ex.video_only, &ex.source_only, true);
    let both = (mean(&ex.full) + mean(&ex.full_reverse)) / 2.0;
    let frame = (mean(&ex.frame_only) + mean(&ex.frame_only_reverse)) / 2.0;
    check(
        k_wins >= 3 && dv_wins >= 4 && both >= frame,
        format!(
            "k=5 >= k=0 in {k_wins}/{SEEDS}, D_v only > source-only in {dv_wins}/{SEEDS}, two-direction mean D_f+D_v {both:.3} vs D_f only {frame:.3}"
        ),
    )
}

/// Row-wise softmax.
fn distributions(logits: Tensor2) -> Tensor2 {
    let e = logits.map(f64::exp);
    let data = (0..e.rows())
        .flat_map(|i| {
            let s: f64 = e.row(i).iter().sum();
            e.row(i).iter().map(move |x| x / s).collect::<Vec<_>>()
        })
        .collect();
    Tensor2::from_vec(e.rows(), e.cols(), data)
}

fn uniform_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_level = 0.0f64;
    for backbone in [Backbone::Dann, Backbone::Cdan] {
        let dims = ModelDims {
            enc_hidden: 8,
            d_h: 5,
            cls_hidden: [6, 4],
            disc_hidden: 7,
            ..ModelDims::new(6, 4, backbone)
        };
        let mut params = dims.init_params(1).map_err(|e| e.to_string())?;
        let names: Vec<String> = params
            .iter()
            .map(|(n, _)| n.to_string())
            .filter(|n| n.starts_with("disc_"))
            .collect();
        for n in names {
            let p = params.get_mut(&n).ok_or("missing parameter")?;
            p.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut rand_t = |r: usize, c: usize| {
            Tensor2::from_vec(
                r,
                c,
                (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
        };
        let (f, v) = (dims.d_h, 2 * dims.d_h);
        let k = dims.num_classes;
        let (fs, ft, vs, vt) = (rand_t(9, f), rand_t(5, f), rand_t(3, v), rand_t(2, v));
        let (pfs, pft, pvs, pvt) = (
            distributions(rand_t(9, k)),
            distributions(rand_t(5, k)),
            distributions(rand_t(3, k)),
            distributions(rand_t(2, k)),
        );
        let mut tape = Tape::new();
        let frames = DomainPair {
            source: tape.input(fs),
            target: tape.input(ft),
        };
        let videos = DomainPair {
            source: tape.input(vs),
            target: tape.input(vt),
        };
        let (lf, lv) = match backbone {
            Backbone::Dann => {
                dann_domain_loss(&mut tape, &params, Some(frames), Some(videos), Some(1.0))
            }
            Backbone::Cdan => {
                let fp = DomainPair {
                    source: tape.input(pfs),
                    target: tape.input(pft),
                };
                let vp = DomainPair {
                    source: tape.input(pvs),
                    target: tape.input(pvt),
                };
                cdan_domain_loss(
                    &mut tape,
                    &params,
                    Some(Conditioned {
                        features: frames,
                        predictions: fp,
                    }),
                    Some(Conditioned {
                        features: videos,
                        predictions: vp,
                    }),
                    Some(1.0),
                    true,
                )
            }
        }
        .map_err(|e| e.to_string())?;
        for l in [lf, lv].into_iter().flatten() {
            worst_level =
                worst_level.max((tape.value(l.loss).item() - 2.0 * std::f64::consts::LN_2).abs());
        }
    }
    let mut worst_ce = 0.0f64;
    for c in [-3.0, 0.0, 0.5, 40.0] {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor2::from_vec(4, 12, vec![c; 48]));
        let ce = tape
            .cross_entropy(logits, vec![0, 3, 7, 11].into())
            .map_err(|e| e.to_string())?;
        worst_ce = worst_ce.max((tape.value(ce).item() - 12f64.ln()).abs());
    }
    check(
        worst_level == 0.0 && worst_ce <= 1e-12,
        format!("DANN and CDAN levels differ from 2 ln 2 by {worst_level:.1e}, 12-class CE differs from ln 12 by {worst_ce:.1e}"),
    )
}

fn damage(bytes: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match rng.random_range(0..5) {
        0 => b.truncate(rng.random_range(0..b.len())),
        1 => {
            let i = rng.random_range(0..b.len());
            b[i] ^= rng.random_range(1..=255u8);
        }
        2 => {
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(0..b.len());
                b[i] = rng.random();
            }
        }
        3 => {
            let i = rng.random_range(0..=b.len());
            b.insert(i, rng.random());
        }
        _ => {
            let n = rng.random_range(1..16);
            b.extend((0..n).map(|_| rng.random::<u8>()));
        }
    }
    b
}

fn format_robustness() -> Outcome {
    let (ds, _) = gen_synthetic(&SynthConfig {
        n_classes: 3,
        videos_per_class: 2,
        dim: 5,
        t_min: 3,
        t_max: 9,
        seed: 9,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let vgf = dir.path().join("d.vgf");
    write_features(&ds, &vgf).map_err(|e| e.to_string())?;
    let back = read_features(&vgf, Domain::Source).map_err(|e| e.to_string())?;
    let bits = |d: &Dataset| {
        d.iter()
            .flat_map(|v| v.raw().iter().map(|x| x.to_bits()))
            .collect::<Vec<_>>()
    };
    let vgf_exact = bits(&back) == bits(&ds) && back.labels().ok() == ds.labels().ok();

    let cfg = TrainConfig {
        d_h: 3,
        enc_hidden: 4,
        cls_hidden: [4, 3],
        disc_hidden: 3,
        epochs: 1,
        batch_size: 4,
        frames: 4,
        ..TrainConfig::default()
    };
    let ckpt = train(&ds, &ds.clone().with_domain(Domain::Target), &cfg, |_| {})
        .map_err(|e| e.to_string())?;
    let ck_path = dir.path().join("m.ckpt");
    ckpt.save(&ck_path).map_err(|e| e.to_string())?;
    let ck_back = Checkpoint::load(&ck_path).map_err(|e| e.to_string())?;
    let ck_exact = ck_back == ckpt
        && std::fs::read(&ck_path).map_err(|e| e.to_string())?
            == ckpt.to_bytes().map_err(|e| e.to_string())?;

    let vgf_bytes = encode_features(&ds).map_err(|e| e.to_string())?;
    let ck_bytes = ckpt.to_bytes().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut crashes, mut unnamed, mut silent, mut named) = (0, 0, 0, 0);
    for i in 0..1000 {
        let vgf_case = i % 2 == 0;
        let bad = damage(if vgf_case { &vgf_bytes } else { &ck_bytes }, &mut rng);
        let r = catch_unwind(AssertUnwindSafe(|| {
            if vgf_case {
                decode_features(&bad, Domain::Source).and_then(|d| encode_features(&d))
            } else {
                Checkpoint::from_bytes(&bad).and_then(|c| c.to_bytes())
            }
        }));
        match r {
            Err(_) => crashes += 1,
            Ok(Ok(reencoded)) => silent += usize::from(reencoded != bad),
            Ok(Err(Error::Format(_) | Error::Data(_))) => named += 1,
            Ok(Err(_)) => unnamed += 1,
        }
    }
    check(
        vgf_exact && ck_exact && crashes == 0 && unnamed == 0 && silent == 0,
        format!(
            "round trips bit-exact: VGF1 {vgf_exact}, checkpoint {ck_exact}; 1000 fuzz cases: {named} named errors, {crashes} crashes, {unnamed} other errors, {silent} silent misreads"
        ),
    )
}

fn full_scale_pathway() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut details = vec![];
    for dim in [2048, 1024] {
        let start = Instant::now();
        let (src, tgt) = gen_synthetic(&SynthConfig {
            n_classes: 3,
            videos_per_class: 4,
            dim,
            t_min: 30,
            t_max: 60,
            seed: dim as u64,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let sp = dir.path().join(format!("src{dim}.vgf"));
        let tp = dir.path().join(format!("tgt{dim}.vgf"));
        write_features(&src, &sp).map_err(|e| e.to_string())?;
        write_features(&tgt.without_labels(), &tp).map_err(|e| e.to_string())?;
        let src = read_features(&sp, Domain::Source).map_err(|e| e.to_string())?;
        let tgt_unlabeled = read_features(&tp, Domain::Target).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let ckpt = train(&src, &tgt_unlabeled, &cfg, |_| {}).map_err(|e| e.to_string())?;
        let cp = dir.path().join(format!("m{dim}.ckpt"));
        ckpt.save(&cp).map_err(|e| e.to_string())?;
        let ckpt = Checkpoint::load(&cp).map_err(|e| e.to_string())?;
        let report = evaluate(&ckpt, &tgt).map_err(|e| e.to_string())?;
        let mut csv = Vec::new();
        export_embeddings(&ckpt, &tgt, &mut csv).map_err(|e| e.to_string())?;
        let header = String::from_utf8_lossy(&csv)
            .lines()
            .next()
            .unwrap_or_default()
            .to_string();
        let width = header.split(',').count() - 3;
        if width != 2 * cfg.d_h || ckpt.d_in != dim {
            return Err(format!(
                "{dim}-dim: embedding width {width}, model input {}",
                ckpt.d_in
            ));
        }
        details.push(format!(
            "{dim}-dim: trained, reloaded and evaluated (accuracy {:.3}, {:.1} s)",
            report.accuracy,
            start.elapsed().as_secs_f64()
        ));
    }
    Ok(format!(
        "default configuration (d_h 256, 40 frames, k 5, CDAN); {}",
        details.join("; ")
    ))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &r {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {n:>2} {name}: {detail} [{secs:.1} s]");
    r.is_ok()
}

fn main() {
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut ok = true;
    if wanted(1) {
        ok &= report(1, "gradient correctness", gradient_correctness);
    }
    if wanted(2) {
        ok &= report(2, "reversal layer semantics", grl_semantics);
    }
    if wanted(3) {
        ok &= report(3, "graph construction oracle", graph_oracle);
    }
    if wanted(4) {
        ok &= report(4, "readout and embedding invariants", embedding_invariants);
    }
    if wanted(5) {
        ok &= report(5, "memory growth law", memory_growth);
    }
    if wanted(6) || wanted(7) {
        let start = Instant::now();
        let ex = catch_unwind(AssertUnwindSafe(run_experiments))
            .unwrap_or_else(|_| Err("experiments panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        eprintln!("  adaptation experiments took {secs:.1} s");
        match ex {
            Ok(ex) => {
                if wanted(6) {
                    ok &= report(6, "adaptation beats source-only", || adaptation(&ex));
                }
                if wanted(7) {
                    ok &= report(7, "ablation directions", || ablations(&ex));
                }
            }
            Err(e) => {
                for (n, name) in [
                    (6, "adaptation beats source-only"),
                    (7, "ablation directions"),
                ] {
                    if wanted(n) {
                        ok &= report(n, name, || Err(e.clone()));
                    }
                }
            }
        }
    }
    if wanted(8) {
        ok &= report(8, "uniform-discriminator losses", uniform_losses);
    }
    if wanted(9) {
        ok &= report(9, "format robustness", format_robustness);
    }
    if wanted(10) {
        ok &= report(10, "full-scale pathway", full_scale_pathway);
    }
    if !ok {
        std::process::exit(1);
    }
}
