use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgda::autodiff::{ParamStore, Tape, Tensor2};
use vgda::gnn::{embed_nodes, gat_forward, video_embed, ATTENTION_SLOPE};
use vgda::graph::{build_video_graph, Adjacency, Domain, FrameFeatureSequence};
use vgda::membench::{alloc, CountingAlloc};
use vgda::model::{gat_attention, gat_weight, Backbone, ModelDims};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn dims(d_in: usize, d_h: usize, heads: usize) -> ModelDims {
    ModelDims {
        enc_hidden: 6,
        d_h,
        heads,
        cls_hidden: [4, 4],
        disc_hidden: 4,
        ..ModelDims::new(d_in, 3, Backbone::Dann)
    }
}

/// Random symmetric graph with self-loops on every node.
fn random_graph(rng: &mut ChaCha8Rng, t: usize, p: f64) -> Adjacency {
    let mut lists: Vec<Vec<usize>> = (0..t).map(|m| vec![m]).collect();
    for m in 0..t {
        for n in m + 1..t {
            if rng.random_bool(p) {
                lists[m].push(n);
                lists[n].push(m);
            }
        }
    }
    Adjacency::from_lists(lists)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Dense recomputation of one attention layer.
fn gat_oracle(
    params: &ParamStore,
    layer: usize,
    heads: usize,
    v: &Tensor2,
    adj: &Adjacency,
) -> Tensor2 {
    let t = v.rows();
    let mut acc = Tensor2::zeros(t, v.cols());
    for h in 0..heads {
        let w = params.expect(&gat_weight(layer, h));
        let a = params.expect(&gat_attention(layer, h));
        let wv = v.matmul(w);
        let d = wv.cols();
        for m in 0..t {
            let logits: Vec<f64> = adj
                .neighbors(m)
                .iter()
                .map(|&n| {
                    let z: f64 = (0..d)
                        .map(|c| a.get(c, 0) * wv.get(m, c) + a.get(d + c, 0) * wv.get(n, c))
                        .sum();
                    if z > 0.0 {
                        z
                    } else {
                        ATTENTION_SLOPE * z
                    }
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
            let s: f64 = ex.iter().sum();
            for (&n, e) in adj.neighbors(m).iter().zip(&ex) {
                for c in 0..d {
                    let cur = acc.get(m, c);
                    acc.set(m, c, cur + e / s * wv.get(n, c) / heads as f64);
                }
            }
        }
    }
    acc.map(elu)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_matches_dense_oracle(seed: u64, t in 1usize..12, heads in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = dims(4, 5, heads);
        let params = dm.init_params(seed).unwrap();
        let adj = random_graph(&mut rng, t, 0.4);
        let v = random_matrix(&mut rng, t, 5);
        let mut tape = Tape::new();
        let x = tape.input(v.clone());
        let (out, att) = gat_forward(&mut tape, &params, 1, x, &adj).unwrap();
        let want = gat_oracle(&params, 1, heads, &v, &adj);
        prop_assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
        for m in 0..t {
            let s: f64 = att.edges().filter(|e| e.0 == m).map(|e| e.2).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9, "node {m} sums to {s}");
        }
    }

    #[test]
    fn embedding_is_permutation_invariant(seed: u64, t in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = dims(4, 6, 1);
        let params = dm.init_params(seed ^ 1).unwrap();
        let adj = random_graph(&mut rng, t, 0.3);
        let v = random_matrix(&mut rng, t, 6);
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut inv = vec![0; t];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pv = Tensor2::from_vec(t, 6, perm.iter().flat_map(|&old| v.row(old).to_vec()).collect());
        let padj = Adjacency::from_lists(
            perm.iter().map(|&old| adj.neighbors(old).iter().map(|&n| inv[n]).collect()).collect(),
        );

        let run = |v: Tensor2, adj: &Adjacency| {
            let mut tape = Tape::new();
            let x = tape.input(v);
            let e = embed_nodes(&mut tape, &params, x, adj).unwrap();
            for (l, &h) in e.layers.iter().enumerate() {
                assert_eq!(tape.value(h).shape(), (1, 12), "layer {l}");
            }
            for a in &e.attention {
                let offs = a.adjacency.offsets();
                for m in 0..a.adjacency.num_nodes() {
                    let s: f64 = a.weights[offs[m]..offs[m + 1]].iter().sum();
                    assert!((s - 1.0).abs() <= 1e-9);
                }
            }
            tape.value(e.video).clone()
        };
        let h1 = run(v, &adj);
        let h2 = run(pv, &padj);
        prop_assert!(h1.max_abs_diff(&h2) <= 1e-9, "diff {}", h1.max_abs_diff(&h2));
    }
}

#[test]
fn layer_readouts_share_a_shape() {
    let dm = dims(3, 4, 2);
    let params = dm.init_params(3).unwrap();
    let rows: Vec<Vec<f32>> = (0..9)
        .map(|i| vec![i as f32, (i * i) as f32 * 0.1, 1.0])
        .collect();
    let seq = FrameFeatureSequence::from_rows("v", Domain::Source, None, &rows).unwrap();
    let g = build_video_graph(&seq, 5, true).unwrap();
    let mut tape = Tape::new();
    let e = video_embed(&mut tape, &params, &g).unwrap();
    assert_eq!(e.layers.len(), 3);
    let mut sum = Tensor2::zeros(1, 8);
    for &h in &e.layers {
        assert_eq!(tape.value(h).shape(), (1, 2 * dm.d_h));
        sum.add_assign(tape.value(h));
    }
    assert!(tape.value(e.video).max_abs_diff(&sum) < 1e-15);
    assert!(e.pooled_sizes.windows(2).all(|w| w[1] <= w[0]));
    assert!(e.pooled_sizes[0] <= 9 && e.pooled_sizes[0] >= 5);
}

#[test]
fn long_videos_never_allocate_a_square_buffer() {
    let t = 1024;
    let dm = dims(4, 4, 1);
    let params = dm.init_params(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f32> = (0..t * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seq = FrameFeatureSequence::new("long", Domain::Source, None, 4, data).unwrap();
    alloc::reset();
    let g = build_video_graph(&seq, 5, true).unwrap();
    let mut tape = Tape::new();
    let e = video_embed(&mut tape, &params, &g).unwrap();
    let l = tape.sum(e.video).unwrap();
    tape.backward(l).unwrap();
    let s = alloc::stats();
    assert!(
        s.largest < t * t * 8,
        "largest allocation {} bytes",
        s.largest
    );
    assert!(s.peak < t * t * 8, "peak {} bytes", s.peak);
}
