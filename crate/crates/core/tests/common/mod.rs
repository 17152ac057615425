#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgda::adversarial::{
    cdan_domain_loss, classify, dann_domain_loss, domain_level_loss, Conditioned, DomainPair,
};
use vgda::autodiff::{Gradients, ParamStore, Tape};
use vgda::data::SynthConfig;
use vgda::gnn::video_embed;
use vgda::graph::{build_video_graph, Domain, FrameFeatureSequence, VideoGraph};
use vgda::model::{mlp, Backbone, ModelDims};
use vgda::trainer::TrainConfig;

/// Model small enough for exhaustive finite differences.
pub fn tiny_dims(backbone: Backbone) -> ModelDims {
    ModelDims {
        d_in: 3,
        enc_hidden: 4,
        d_h: 3,
        heads: 1,
        num_classes: 2,
        cls_hidden: [4, 3],
        disc_hidden: 3,
        backbone,
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng, t: usize, d: usize, domain: Domain) -> VideoGraph {
    let data: Vec<f32> = (0..t * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let seq = FrameFeatureSequence::new("g", domain, None, d, data).unwrap();
    build_video_graph(&seq, 2, true).unwrap()
}

/// Gradients of the video-level domain loss, with or without reversal.
pub fn grl_grads(seed: u64, lambda: Option<f64>) -> Gradients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = tiny_dims(Backbone::Dann);
    let params = dims.init_params(seed).unwrap();
    let src = random_graph(&mut rng, 6, dims.d_in, Domain::Source);
    let tgt = random_graph(&mut rng, 7, dims.d_in, Domain::Target);
    let mut tape = Tape::new();
    let es = video_embed(&mut tape, &params, &src).unwrap();
    let et = video_embed(&mut tape, &params, &tgt).unwrap();
    let pair = DomainPair {
        source: es.video,
        target: et.video,
    };
    let l = domain_level_loss(&mut tape, &params, "disc_v", pair, lambda).unwrap();
    tape.backward(l.loss).unwrap()
}

/// Every pairwise distance, sorted per node by (distance, index), first `k`
/// kept, unioned with the temporal chain and self-loops.
pub fn oracle_edges(rows: &[Vec<f32>], k: usize, self_loops: bool) -> BTreeSet<(usize, usize)> {
    let t = rows.len();
    let mut edges = BTreeSet::new();
    for m in 0..t {
        if self_loops {
            edges.insert((m, m));
        }
        if m + 1 < t {
            edges.insert((m, m + 1));
            edges.insert((m + 1, m));
        }
        let mut d: Vec<(f64, usize)> = (0..t)
            .filter(|&n| n != m)
            .map(|n| {
                let s: f64 = rows[m]
                    .iter()
                    .zip(&rows[n])
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum();
                (s, n)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, n) in d.iter().take(k) {
            edges.insert((m, n));
            edges.insert((n, m));
        }
    }
    edges
}

/// Relative error with a floor on the denominator: entries smaller than
/// 1e-6 are held to an absolute error of 1e-6 times the tolerance, since
/// central differences carry about 1e-11 of round-off.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

pub struct SliceCheck {
    pub params: usize,
    pub worst: f64,
    pub worst_param: String,
}

/// Classifier and both discriminators on one source and one target video
/// of at most 8 frames, checked parameter by parameter against central
/// differences.
///
/// The reversal layer is the identity going forward, so finite differences
/// see `task + domain`. The expected reverse-mode gradient is
/// `fd(task) + s·fd(domain)` with `s = 1` for discriminator parameters and
/// `s = −λ` for everything upstream of the reversal.
pub fn pipeline_gradcheck(seed: u64) -> SliceCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = if seed % 2 == 0 {
        Backbone::Dann
    } else {
        Backbone::Cdan
    };
    let dims = tiny_dims(backbone);
    let params = dims.init_params(seed).unwrap();
    let t_src = rng.random_range(4..=8);
    let t_tgt = rng.random_range(4..=8);
    let src = random_graph(&mut rng, t_src, dims.d_in, Domain::Source);
    let tgt = random_graph(&mut rng, t_tgt, dims.d_in, Domain::Target);
    let label = rng.random_range(0..2);
    let lambda = 0.6;

    let mut tape = Tape::new();
    let es = video_embed(&mut tape, &params, &src).unwrap();
    let et = video_embed(&mut tape, &params, &tgt).unwrap();
    let logits = classify(&mut tape, &params, es.video).unwrap();
    let mut task = tape.cross_entropy(logits, vec![label].into()).unwrap();
    let frames = DomainPair {
        source: es.frames,
        target: et.frames,
    };
    let videos = DomainPair {
        source: es.video,
        target: et.video,
    };
    let (lf, lv) = match backbone {
        Backbone::Dann => {
            dann_domain_loss(&mut tape, &params, Some(frames), Some(videos), Some(lambda)).unwrap()
        }
        Backbone::Cdan => {
            let aux_s = mlp(&mut tape, &params, "aux", 3, es.frames).unwrap();
            let aux_t = mlp(&mut tape, &params, "aux", 3, et.frames).unwrap();
            let aux = tape
                .cross_entropy(aux_s, vec![label; t_src].into())
                .unwrap();
            let aux = tape.scale(aux, 0.1).unwrap();
            task = tape.add(task, aux).unwrap();
            let tgt_logits = classify(&mut tape, &params, et.video).unwrap();
            let mut soft = |x| tape.softmax_rows(x).unwrap();
            let fc = Conditioned {
                features: frames,
                predictions: DomainPair {
                    source: soft(aux_s),
                    target: soft(aux_t),
                },
            };
            let vc = Conditioned {
                features: videos,
                predictions: DomainPair {
                    source: soft(logits),
                    target: soft(tgt_logits),
                },
            };
            cdan_domain_loss(&mut tape, &params, Some(fc), Some(vc), Some(lambda), false).unwrap()
        }
    };
    let dom = tape.add(lf.unwrap().loss, lv.unwrap().loss).unwrap();
    let dom = tape.scale(dom, 0.8).unwrap();
    let total = tape.add(task, dom).unwrap();
    tape.mark_output("task", task);
    tape.mark_output("dom", dom);
    let analytic = tape.backward(total).unwrap();

    let names: Vec<String> = tape.param_names().map(str::to_string).collect();
    let mut out = SliceCheck {
        params: names.iter().map(|n| params.expect(n).len()).sum(),
        worst: 0.0,
        worst_param: String::new(),
    };
    let h = 1e-5;
    let mut feeds = HashMap::new();
    for name in names {
        let base = params.expect(&name).clone();
        let g = analytic.get(&name).unwrap().clone();
        let s = if name.starts_with("disc_") {
            1.0
        } else {
            -lambda
        };
        for i in 0..base.len() {
            let mut eval = |delta: f64| {
                let mut p = base.clone();
                p.data_mut()[i] += delta;
                feeds.insert(name.clone(), p);
                let o = tape.forward(&feeds).unwrap();
                (o["task"].item(), o["dom"].item())
            };
            let (tp, dp) = eval(h);
            let (tm, dm) = eval(-h);
            let want = (tp - tm) / (2.0 * h) + s * (dp - dm) / (2.0 * h);
            let got = g.data()[i];
            let e = rel_err(got, want);
            if e > out.worst {
                out.worst = e;
                out.worst_param =
                    format!("{name}[{i}]: reverse {got:e}, finite differences {want:e}");
            }
        }
        feeds.insert(name.clone(), base);
        tape.forward(&feeds).unwrap();
    }
    out
}

pub fn param_count(p: &ParamStore) -> usize {
    p.num_scalars()
}

/// Training setup used for the desk-scale adaptation experiments.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        frames: 16,
        d_h: 32,
        enc_hidden: 64,
        cls_hidden: [64, 32],
        disc_hidden: 64,
        learning_rate: 0.003,
        alpha: 0.3,
        grl_ramp: true,
        backbone: Backbone::Cdan,
        seed,
        ..TrainConfig::default()
    }
}

pub fn desk_data(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..SynthConfig::default()
    }
}
