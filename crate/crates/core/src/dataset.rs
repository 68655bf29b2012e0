//! In-memory dual-stream feature sets and frame labels.

use crate::error::{Error, Result};
use crate::sphere::{normalize, UnitVector};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// One video: `clips × dim` main and visual features, row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub id: String,
    pub main: Vec<f32>,
    pub visual: Vec<f32>,
}

impl VideoFeatures {
    pub fn clips(&self, dim: usize) -> usize {
        self.main.len() / dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub dim: usize,
    pub videos: Vec<VideoFeatures>,
}

fn to_f32(rows: &[UnitVector]) -> Vec<f32> {
    rows.iter()
        .flat_map(|r| r.as_slice().iter().map(|&x| x as f32))
        .collect()
}

impl FeatureDataset {
    pub fn new(dim: usize, videos: Vec<VideoFeatures>) -> Result<Self> {
        let ds = Self { dim, videos };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from unit vectors, storing them as f32.
    pub fn from_units(dim: usize, videos: Vec<(String, Vec<UnitVector>, Vec<UnitVector>)>) -> Result<Self> {
        let videos = videos
            .into_iter()
            .map(|(id, main, visual)| VideoFeatures {
                id,
                main: to_f32(&main),
                visual: to_f32(&visual),
            })
            .collect();
        Self::new(dim, videos)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::DimensionTooSmall(self.dim));
        }
        for v in &self.videos {
            if v.main.is_empty() || v.main.len() % self.dim != 0 {
                return Err(Error::InvalidParameter(format!(
                    "video {:?}: main stream length {} is not a positive multiple of {}",
                    v.id,
                    v.main.len(),
                    self.dim
                )));
            }
            if v.visual.len() != v.main.len() {
                return Err(Error::DimensionMismatch {
                    expected: v.main.len(),
                    found: v.visual.len(),
                });
            }
            if let Some(i) = v.main.iter().chain(&v.visual).position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn clip_count(&self) -> usize {
        self.videos.iter().map(|v| v.clips(self.dim)).sum()
    }

    pub fn video(&self, id: &str) -> Option<&VideoFeatures> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// L2-normalized rows of a flat `clips × dim` buffer.
    pub fn unit_rows(&self, flat: &[f32]) -> Result<Vec<UnitVector>> {
        flat.par_chunks(self.dim)
            .map(|row| normalize(&row.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect()
    }
}

/// Per-video binary frame labels, keyed by video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameLabels {
    pub videos: BTreeMap<String, Vec<bool>>,
}

impl FrameLabels {
    pub fn get(&self, id: &str) -> Option<&[bool]> {
        self.videos.get(id).map(Vec::as_slice)
    }

    /// Every video of `ds` must have `clips × frames_per_clip` labels.
    pub fn check(&self, ds: &FeatureDataset, frames_per_clip: usize) -> Result<()> {
        for v in &ds.videos {
            let want = v.clips(ds.dim) * frames_per_clip;
            match self.get(&v.id) {
                None => return Err(Error::InvalidParameter(format!("no labels for video {:?}", v.id))),
                Some(l) if l.len() != want => {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        found: l.len(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Clip labels: a clip is anomalous when any of its frames is.
    pub fn clip_labels(&self, id: &str, frames_per_clip: usize) -> Option<Vec<bool>> {
        self.get(id)
            .map(|l| l.chunks(frames_per_clip.max(1)).map(|c| c.iter().any(|&x| x)).collect())
    }
}
