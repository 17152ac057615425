//! Datasets of frame-feature videos: the VGF1 file format and a seeded
//! synthetic generator with a controllable domain shift.

mod synth;
mod vgf;

pub use synth::{domain_maps, gen_synthetic, latent, DomainMap, Latent, Spline, SynthConfig};
pub use vgf::{
    decode_features, encode_features, read_features, write_features, VGF_MAGIC, VGF_VERSION,
};

use crate::error::{Error, Result};
use crate::graph::{Domain, FrameFeatureSequence};

/// An ordered collection of videos from one domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub videos: Vec<FrameFeatureSequence>,
}

impl Dataset {
    pub fn new(videos: Vec<FrameFeatureSequence>) -> Self {
        Self { videos }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FrameFeatureSequence> {
        self.videos.iter()
    }

    /// The shared frame dimension; errors on an empty set or mixed widths.
    pub fn dim(&self) -> Result<usize> {
        let first = self
            .videos
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        if let Some((i, v)) = self
            .videos
            .iter()
            .enumerate()
            .find(|(_, v)| v.dim() != first.dim())
        {
            return Err(Error::Data(format!(
                "video {i} (`{}`) has dimension {}, expected {}",
                v.video_id,
                v.dim(),
                first.dim()
            )));
        }
        Ok(first.dim())
    }

    pub fn is_labeled(&self) -> bool {
        self.videos.iter().all(|v| v.label.is_some())
    }

    /// One past the largest label, or `None` if no video is labeled.
    pub fn num_classes(&self) -> Option<usize> {
        self.videos
            .iter()
            .filter_map(|v| v.label)
            .max()
            .map(|m| m + 1)
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.videos
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.label.ok_or_else(|| {
                    Error::Data(format!("video {i} (`{}`) has no label", v.video_id))
                })
            })
            .collect()
    }

    /// Copy with every label removed, as seen by an unsupervised learner.
    pub fn without_labels(&self) -> Self {
        let mut d = self.clone();
        d.videos.iter_mut().for_each(|v| v.label = None);
        d
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.videos.iter_mut().for_each(|v| v.domain = domain);
        self
    }
}

/// Identifier given to the `index`-th video of a domain.
pub fn video_id(domain: Domain, index: usize) -> String {
    format!("{domain}-{index:05}")
}
