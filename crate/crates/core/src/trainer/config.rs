use std::fmt::Write as _;
use std::str::FromStr;

use crate::adversarial::{DaConfig, GrlSchedule};
use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};
use crate::graph::DEFAULT_K;
use crate::model::{Backbone, ModelDims};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub frames: usize,
    pub k_similarity: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub backbone: Backbone,
    pub seed: u64,
    pub d_h: usize,
    pub enc_hidden: usize,
    pub heads: usize,
    pub cls_hidden: [usize; 2],
    pub disc_hidden: usize,
    pub alpha: f64,
    pub grl_lambda: f64,
    pub grl_ramp: bool,
    pub aux_weight: f64,
    pub self_loops: bool,
    pub no_similarity: bool,
    pub no_frame_disc: bool,
    pub no_video_disc: bool,
    /// Fraction of the source set held out for monitoring.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            frames: 40,
            k_similarity: DEFAULT_K,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            backbone: Backbone::Cdan,
            seed: 0,
            d_h: 256,
            enc_hidden: 512,
            heads: 1,
            cls_hidden: [256, 128],
            disc_hidden: 256,
            alpha: 1.0,
            grl_lambda: 1.0,
            grl_ramp: false,
            aux_weight: 0.1,
            self_loops: true,
            no_similarity: false,
            no_frame_disc: false,
            no_video_disc: false,
            holdout: 0.1,
        }
    }
}

macro_rules! kv_fields {
    ($($key:literal => $field:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        impl TrainConfig {
            /// Canonical `key=value` lines in fixed order.
            pub fn to_kv(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{}={}", $key, Fmt(&self.$field)); )*
                s
            }

            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => self.$field = Parse::parse(key, value)?, )*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

kv_fields! {
    "batch_size" => batch_size,
    "epochs" => epochs,
    "frames" => frames,
    "k" => k_similarity,
    "lr" => learning_rate,
    "momentum" => momentum,
    "weight_decay" => weight_decay,
    "backbone" => backbone,
    "seed" => seed,
    "d_h" => d_h,
    "enc_hidden" => enc_hidden,
    "heads" => heads,
    "cls_hidden" => cls_hidden,
    "disc_hidden" => disc_hidden,
    "alpha" => alpha,
    "grl_lambda" => grl_lambda,
    "grl_ramp" => grl_ramp,
    "aux_weight" => aux_weight,
    "self_loops" => self_loops,
    "no_similarity" => no_similarity,
    "no_frame_disc" => no_frame_disc,
    "no_video_disc" => no_video_disc,
    "holdout" => holdout,
}

struct Fmt<'a, T>(&'a T);

impl std::fmt::Display for Fmt<'_, [usize; 2]> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.0[0], self.0[1])
    }
}

macro_rules! display_fmt {
    ($($t:ty),*) => {$(
        impl std::fmt::Display for Fmt<'_, $t> {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    )*};
}

display_fmt!(usize, u64, f64, bool, Backbone);

trait Parse: Sized {
    fn parse(key: &str, value: &str) -> Result<Self>;
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for `{key}`"))
}

macro_rules! fromstr_parse {
    ($($t:ty),*) => {$(
        impl Parse for $t {
            fn parse(key: &str, value: &str) -> Result<Self> {
                value.parse().map_err(|_| bad(key, value))
            }
        }
    )*};
}

fromstr_parse!(usize, u64, f64, bool);

impl Parse for Backbone {
    fn parse(key: &str, value: &str) -> Result<Self> {
        Backbone::from_str(value).map_err(|_| bad(key, value))
    }
}

impl Parse for [usize; 2] {
    fn parse(key: &str, value: &str) -> Result<Self> {
        let (a, b) = value.split_once(',').ok_or_else(|| bad(key, value))?;
        Ok([usize::parse(key, a)?, usize::parse(key, b)?])
    }
}

/// Parses `key=value` lines. Unknown keys are errors; missing keys keep
/// their defaults.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{l}`")))
        })
        .collect()
}

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// Applies `key=value` pairs on top of the defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Parses the output of [`TrainConfig::to_kv`], rejecting anything that
    /// would not re-encode to the same text.
    pub fn from_canonical_kv(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let cfg = Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        if cfg.to_kv() != text {
            return Err(Error::Config(
                "config block is not in canonical form".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("frames", self.frames),
            ("d_h", self.d_h),
            ("enc_hidden", self.enc_hidden),
            ("heads", self.heads),
            ("cls_hidden", self.cls_hidden[0].min(self.cls_hidden[1])),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (one source and one target video)".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("holdout must be in [0, 1)".into()));
        }
        self.da().validate()
    }

    pub fn dims(&self, d_in: usize, num_classes: usize) -> ModelDims {
        ModelDims {
            d_in,
            enc_hidden: self.enc_hidden,
            d_h: self.d_h,
            heads: self.heads,
            num_classes,
            cls_hidden: self.cls_hidden,
            disc_hidden: self.disc_hidden,
            backbone: self.backbone,
        }
    }

    pub fn da(&self) -> DaConfig {
        DaConfig {
            backbone: self.backbone,
            alpha: self.alpha,
            grl: if self.grl_ramp {
                GrlSchedule::Ramp(self.grl_lambda)
            } else {
                GrlSchedule::Constant(self.grl_lambda)
            },
            use_frame_disc: !self.no_frame_disc,
            use_video_disc: !self.no_video_disc,
            aux_weight: self.aux_weight,
            detach_predictions: true,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Similarity neighbors actually used when building graphs.
    pub fn effective_k(&self) -> usize {
        if self.no_similarity {
            0
        } else {
            self.k_similarity
        }
    }
}
