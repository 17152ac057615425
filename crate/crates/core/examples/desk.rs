//! Desk-scale domain adaptation run on synthetic data.
//!
//! ```text
//! cargo run --release --example desk -- [key=value ...]
//! ```
//! Keys are training config keys (`epochs`, `lr`, `backbone`, `alpha`, ...)
//! plus `shift`, `noise`, `style`, `source_offset`, `target_offset`,
//! `data_seed`, and `seeds` (number of training seeds).

use std::time::Instant;

use vgda::data::{gen_synthetic, SynthConfig};
use vgda::trainer::{final_row, train, TrainConfig};

fn main() -> vgda::Result<()> {
    let mut synth = SynthConfig::default();
    let mut pairs: Vec<(String, String)> = vec![
        ("epochs", "30".to_string()),
        ("frames", "16".to_string()),
        ("d_h", "32".to_string()),
        ("enc_hidden", "64".to_string()),
        ("cls_hidden", "64,32".to_string()),
        ("disc_hidden", "64".to_string()),
        ("lr", "0.01".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut seeds = 1u64;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        let f = |v: &str| v.parse::<f64>().expect("number");
        match k {
            "shift" => synth.shift = f(v),
            "noise" => synth.noise = f(v),
            "style" => synth.style = f(v),
            "source_offset" => synth.source_offset = f(v),
            "target_offset" => synth.target_offset = f(v),
            "data_seed" => synth.seed = v.parse().unwrap(),
            "seeds" => seeds = v.parse().unwrap(),
            _ => pairs.push((k.to_string(), v.to_string())),
        }
    }
    for seed in 0..seeds {
        synth.seed = seed;
        let (src, tgt) = gen_synthetic(&synth)?;
        let mut cfg = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        cfg.seed = seed;
        let start = Instant::now();
        let verbose = std::env::var_os("DESK_VERBOSE").is_some();
        let ckpt = train(&src, &tgt.without_labels(), &cfg, |r| {
            if verbose && r.step.is_some_and(|s| s % 20 == 0) {
                eprintln!("{r:?}");
            }
        })?;
        let acc = vgda::trainer::evaluate(&ckpt, &tgt)?.accuracy;
        let last = final_row(&ckpt.history).unwrap();
        println!(
            "seed {seed}: holdout {:.3} target {acc:.3} ({:.1}s)",
            last.src_acc.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
