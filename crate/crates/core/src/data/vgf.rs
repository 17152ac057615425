//! VGF1: a flat container of per-video frame features.
//!
//! ```text
//! "VGF1" | version u32 | count u32 | count × record
//! record = label i32 (−1 = none) | frames u32 | dim u32 | frames·dim × f32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{video_id, Dataset};
use crate::codec::{len_u32, put_u32, Cursor};
use crate::error::{Error, FormatError, Result};
use crate::graph::{Domain, FrameFeatureSequence};

pub const VGF_MAGIC: &[u8; 4] = b"VGF1";
pub const VGF_VERSION: u32 = 1;

pub fn encode_features(ds: &Dataset) -> Result<Vec<u8>> {
    let payload: usize = ds.iter().map(|v| 12 + 4 * v.raw().len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(VGF_MAGIC);
    put_u32(&mut out, VGF_VERSION);
    put_u32(&mut out, len_u32(ds.len(), "video count")?);
    for v in ds.iter() {
        let label = match v.label {
            None => -1,
            Some(l) => i32::try_from(l)
                .map_err(|_| Error::Data(format!("label {l} does not fit in i32")))?,
        };
        out.extend_from_slice(&label.to_le_bytes());
        put_u32(&mut out, len_u32(v.num_frames(), "frame count")?);
        put_u32(&mut out, len_u32(v.dim(), "frame dimension")?);
        for x in v.raw() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a VGF1 buffer. Every declared size is checked against the bytes
/// that remain before anything is allocated for it.
pub fn decode_features(bytes: &[u8], domain: Domain) -> Result<Dataset> {
    let mut c = Cursor::new(bytes);
    let magic = c
        .take(4)
        .ok_or(FormatError::BadMagic { expected: "VGF1" })?;
    if magic != VGF_MAGIC {
        return Err(FormatError::BadMagic { expected: "VGF1" }.into());
    }
    let version = c.u32().ok_or(FormatError::TruncatedHeader)?;
    if version != VGF_VERSION {
        return Err(FormatError::BadVersion {
            format: "VGF1",
            found: version,
        }
        .into());
    }
    let count = c.u32().ok_or(FormatError::TruncatedHeader)? as usize;
    // each record needs at least its 12-byte header
    if count > c.remaining() / 12 {
        return Err(FormatError::VideoSize {
            index: c.remaining() / 12,
            detail: format!(
                "header declares {count} videos but only {} bytes remain",
                c.remaining()
            ),
        }
        .into());
    }
    let mut videos = Vec::with_capacity(count);
    for index in 0..count {
        let size_err = |detail: String| FormatError::VideoSize { index, detail };
        let (Some(label), Some(frames), Some(dim)) = (c.i32(), c.u32(), c.u32()) else {
            return Err(size_err("record header is truncated".into()).into());
        };
        let record = |detail: &str| FormatError::VideoRecord {
            index,
            detail: detail.to_string(),
        };
        if label < -1 {
            return Err(record("label must be -1 or non-negative").into());
        }
        if frames == 0 || dim == 0 {
            return Err(record("frame count and dimension must be >= 1").into());
        }
        let values = (frames as usize)
            .checked_mul(dim as usize)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| size_err(format!("{frames}x{dim} values overflow")))?;
        let raw = c.take(values * 4).ok_or_else(|| {
            size_err(format!(
                "header claims {frames} frames of dimension {dim} ({} bytes), {} bytes remain",
                values * 4,
                c.remaining()
            ))
        })?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(FormatError::VideoNonFinite { index }.into());
        }
        let label = usize::try_from(label).ok();
        videos.push(FrameFeatureSequence::new(
            video_id(domain, index),
            domain,
            label,
            dim as usize,
            data,
        )?);
    }
    if c.remaining() > 0 {
        return Err(FormatError::TrailingBytes(c.remaining()).into());
    }
    Ok(Dataset::new(videos))
}

pub fn write_features(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(ds)?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>, domain: Domain) -> Result<Dataset> {
    decode_features(&fs::read(path)?, domain)
}
