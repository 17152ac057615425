//! Parameter layout of the full model and the shared affine/MLP helpers.
//!
//! | prefix          | role                                  |
//! |-----------------|---------------------------------------|
//! | `enc`           | frame encoder, two affine layers      |
//! | `gat{l}.h{i}`   | attention head `i` of GAT layer `l`   |
//! | `pool{l}`       | edge scorer of pooling layer `l`      |
//! | `cls`           | video classifier, three layers        |
//! | `aux`           | frame classifier (CDAN conditioning)  |
//! | `disc_f`        | frame-level domain discriminator      |
//! | `disc_v`        | video-level domain discriminator      |

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor2, Var};
use crate::error::{Error, Result};

pub const GNN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    Dann,
    Cdan,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Dann => "dann",
            Backbone::Cdan => "cdan",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dann" => Ok(Backbone::Dann),
            "cdan" => Ok(Backbone::Cdan),
            other => Err(Error::Config(format!(
                "unknown backbone `{other}` (expected dann or cdan)"
            ))),
        }
    }
}

/// Layer widths of every sub-network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub d_in: usize,
    pub enc_hidden: usize,
    pub d_h: usize,
    pub heads: usize,
    pub num_classes: usize,
    pub cls_hidden: [usize; 2],
    pub disc_hidden: usize,
    pub backbone: Backbone,
}

impl ModelDims {
    pub fn new(d_in: usize, num_classes: usize, backbone: Backbone) -> Self {
        Self {
            d_in,
            enc_hidden: 512,
            d_h: 256,
            heads: 1,
            num_classes,
            cls_hidden: [256, 128],
            disc_hidden: 256,
            backbone,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_in", self.d_in),
            ("enc_hidden", self.enc_hidden),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("cls_hidden[0]", self.cls_hidden[0]),
            ("cls_hidden[1]", self.cls_hidden[1]),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }

    /// Video feature width `2·d_h` (mean and max readouts).
    pub fn video_dim(&self) -> usize {
        2 * self.d_h
    }

    pub fn frame_disc_input(&self) -> usize {
        match self.backbone {
            Backbone::Dann => self.d_h,
            Backbone::Cdan => self.d_h * self.num_classes,
        }
    }

    pub fn video_disc_input(&self) -> usize {
        match self.backbone {
            Backbone::Dann => self.video_dim(),
            Backbone::Cdan => self.video_dim() * self.num_classes,
        }
    }

    /// `(prefix, fan_in, fan_out)` of every affine layer.
    fn affine_layers(&self) -> Vec<(String, usize, usize)> {
        let k = self.num_classes;
        let [c1, c2] = self.cls_hidden;
        let dh = self.disc_hidden;
        let mut out = vec![
            ("enc.l1".to_string(), self.d_in, self.enc_hidden),
            ("enc.l2".to_string(), self.enc_hidden, self.d_h),
        ];
        for (name, input) in [("cls", self.video_dim()), ("aux", self.d_h)] {
            if name == "aux" && self.backbone != Backbone::Cdan {
                continue;
            }
            out.push((format!("{name}.l1"), input, c1));
            out.push((format!("{name}.l2"), c1, c2));
            out.push((format!("{name}.l3"), c2, k));
        }
        for (name, input) in [
            ("disc_f", self.frame_disc_input()),
            ("disc_v", self.video_disc_input()),
        ] {
            out.push((format!("{name}.l1"), input, dh));
            out.push((format!("{name}.l2"), dh, dh));
            out.push((format!("{name}.l3"), dh, 1));
        }
        out
    }

    /// Parameter names and shapes in creation order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (prefix, fin, fout) in self.affine_layers() {
            out.push((format!("{prefix}.w"), fin, fout));
            out.push((format!("{prefix}.b"), 1, fout));
        }
        for l in 1..=GNN_LAYERS {
            for h in 0..self.heads {
                out.push((gat_weight(l, h), self.d_h, self.d_h));
                out.push((gat_attention(l, h), 2 * self.d_h, 1));
            }
            out.push((pool_weight(l), 2 * self.d_h, 1));
            out.push((pool_bias(l), 1, 1));
        }
        out
    }

    /// Glorot-uniform weights `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, rows, cols) in self.param_shapes() {
            let t = if name.ends_with(".b") {
                Tensor2::zeros(rows, cols)
            } else {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor2::from_vec(rows, cols, data)
            };
            store.insert(name, t);
        }
        Ok(store)
    }
}

pub fn gat_weight(layer: usize, head: usize) -> String {
    format!("gat{layer}.h{head}.w")
}

pub fn gat_attention(layer: usize, head: usize) -> String {
    format!("gat{layer}.h{head}.a")
}

pub fn pool_weight(layer: usize) -> String {
    format!("pool{layer}.w")
}

pub fn pool_bias(layer: usize) -> String {
    format!("pool{layer}.b")
}

/// Registers `name` from the store on the tape.
pub fn param(tape: &mut Tape, params: &ParamStore, name: &str) -> Var {
    tape.param(name, params.expect(name))
}

/// `x·W + b` for the layer at `prefix`.
pub fn affine(tape: &mut Tape, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = param(tape, params, &format!("{prefix}.w"));
    let b = param(tape, params, &format!("{prefix}.b"));
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Affine layers `{prefix}.l1..l{depth}` with ELU between them and a linear
/// output.
pub fn mlp(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    depth: usize,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for l in 1..=depth {
        h = affine(tape, params, &format!("{prefix}.l{l}"), h)?;
        if l < depth {
            h = tape.elu(h)?;
        }
    }
    Ok(h)
}
