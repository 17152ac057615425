//! Checkpoint file.
//!
//! ```text
//! "TVGD" | version u32
//! | config_len u32 | config_len bytes of UTF-8 `key=value` lines
//! | param_count u32 | param_count × (name_len u32 | name | rows u32 | cols u32 | rows·cols × f64)
//! | metrics_len u32 | metrics_len bytes of metric CSV
//! ```
//! Integers and floats are little-endian. Parameters appear in name order.

use std::fs;
use std::path::Path;

use super::config::{parse_kv, TrainConfig};
use super::metrics::{metrics_csv, parse_metrics_csv, MetricRow};
use crate::autodiff::{ParamStore, Tensor2};
use crate::codec::{len_u32, put_u32, Cursor};
use crate::error::{Error, FormatError, Result};
use crate::gnn::check_params;
use crate::model::ModelDims;

pub const CKPT_MAGIC: &[u8; 4] = b"TVGD";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub d_in: usize,
    pub num_classes: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub history: Vec<MetricRow>,
}

impl Checkpoint {
    pub fn dims(&self) -> ModelDims {
        self.config.dims(self.d_in, self.num_classes)
    }

    fn config_block(&self) -> String {
        format!(
            "{}d_in={}\nnum_classes={}\nepoch={}\n",
            self.config.to_kv(),
            self.d_in,
            self.num_classes,
            self.epoch
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut out, CKPT_VERSION);
        let cfg = self.config_block();
        put_u32(&mut out, len_u32(cfg.len(), "config block length")?);
        out.extend_from_slice(cfg.as_bytes());
        put_u32(&mut out, len_u32(self.params.len(), "parameter count")?);
        for (name, t) in self.params.iter() {
            put_u32(&mut out, len_u32(name.len(), "parameter name length")?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(t.rows(), "rows")?);
            put_u32(&mut out, len_u32(t.cols(), "cols")?);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let m = metrics_csv(&self.history);
        put_u32(&mut out, len_u32(m.len(), "metric block length")?);
        out.extend_from_slice(m.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        if c.take(4) != Some(&CKPT_MAGIC[..]) {
            return Err(FormatError::BadMagic { expected: "TVGD" }.into());
        }
        let version = c.u32().ok_or(FormatError::TruncatedHeader)?;
        if version != CKPT_VERSION {
            return Err(FormatError::BadVersion {
                format: "TVGD",
                found: version,
            }
            .into());
        }
        let block_err = |s: &str| FormatError::ConfigBlock(s.to_string());
        let len = c.u32().ok_or(FormatError::TruncatedHeader)? as usize;
        let raw = c
            .take(len)
            .ok_or_else(|| block_err("declared length exceeds file"))?;
        let text = std::str::from_utf8(raw).map_err(|_| block_err("not UTF-8"))?;
        let (config, d_in, num_classes, epoch) = parse_config_block(text)?;

        let count = c.u32().ok_or(FormatError::TruncatedHeader)? as usize;
        let mut params = ParamStore::new();
        let mut last: Option<String> = None;
        for index in 0..count {
            let size = |detail: String| FormatError::ParamSize { index, detail };
            let record = |detail: &str| FormatError::ParamRecord {
                index,
                detail: detail.to_string(),
            };
            let name_len = c
                .u32()
                .ok_or_else(|| size("truncated record header".into()))?
                as usize;
            let name = c
                .take(name_len)
                .ok_or_else(|| size("name runs past end of file".into()))?;
            let name = std::str::from_utf8(name).map_err(|_| record("name is not UTF-8"))?;
            if last.as_deref().is_some_and(|l| l >= name) {
                return Err(record("names must be unique and sorted").into());
            }
            let (Some(rows), Some(cols)) = (c.u32(), c.u32()) else {
                return Err(size("truncated shape".into()).into());
            };
            let (rows, cols) = (rows as usize, cols as usize);
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= c.remaining()))
                .ok_or_else(|| {
                    size(format!(
                        "{rows}x{cols} values exceed the {} remaining bytes",
                        c.remaining()
                    ))
                })?;
            let raw = c.take(n * 8).expect("length checked above");
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(record("non-finite value").into());
            }
            params.insert(name, Tensor2::from_vec(rows, cols, data));
            last = Some(name.to_string());
        }

        let len = c
            .u32()
            .ok_or_else(|| FormatError::MetricBlock("missing length".into()))?
            as usize;
        let raw = c
            .take(len)
            .ok_or_else(|| FormatError::MetricBlock("declared length exceeds file".into()))?;
        let text =
            std::str::from_utf8(raw).map_err(|_| FormatError::MetricBlock("not UTF-8".into()))?;
        let history = parse_metrics_csv(text)?;
        if c.remaining() > 0 {
            return Err(FormatError::TrailingBytes(c.remaining()).into());
        }

        let ckpt = Self {
            config,
            d_in,
            num_classes,
            epoch,
            params,
            history,
        };
        let dims = ckpt.dims();
        dims.validate()
            .and_then(|_| check_params(&dims, &ckpt.params))
            .map_err(|e| FormatError::ParamRecord {
                index: count,
                detail: e.to_string(),
            })?;
        if ckpt.params.len() != dims.param_shapes().len() {
            return Err(FormatError::ParamRecord {
                index: count,
                detail: "unexpected extra parameters".into(),
            }
            .into());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn parse_config_block(text: &str) -> Result<(TrainConfig, usize, usize, usize)> {
    let err = |e: Error| FormatError::ConfigBlock(e.to_string());
    let pairs = parse_kv(text).map_err(err)?;
    let mut extra = [None; 3];
    let mut rest = Vec::new();
    for (k, v) in &pairs {
        let slot = match k.as_str() {
            "d_in" => 0,
            "num_classes" => 1,
            "epoch" => 2,
            _ => {
                rest.push((k.as_str(), v.as_str()));
                continue;
            }
        };
        extra[slot] = Some(
            v.parse::<usize>()
                .map_err(|_| FormatError::ConfigBlock(format!("invalid value `{v}` for `{k}`")))?,
        );
    }
    let [Some(d_in), Some(num_classes), Some(epoch)] = extra else {
        return Err(FormatError::ConfigBlock("missing d_in, num_classes or epoch".into()).into());
    };
    let config = TrainConfig::from_pairs(rest).map_err(err)?;
    config.validate().map_err(err)?;
    let canonical = format!(
        "{}d_in={d_in}\nnum_classes={num_classes}\nepoch={epoch}\n",
        config.to_kv()
    );
    if canonical != text {
        return Err(FormatError::ConfigBlock("not in canonical form".into()).into());
    }
    Ok((config, d_in, num_classes, epoch))
}
