//! Sparse cosine-similarity attention and the cross-video feature blend.

use crate::error::{Error, Result};
use crate::sphere::{dot, normalize, UnitVector};
use rayon::prelude::*;
use serde::Serialize;

/// Rows handled per parallel task when building the similarity matrix.
const ROW_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionParams {
    pub tau: f64,
    pub top_k: usize,
    pub temperature: f64,
    pub exclude_self: bool,
}

impl AttentionParams {
    /// Cross-video defaults.
    pub const HSA: Self = Self {
        tau: 0.70,
        top_k: 20,
        temperature: 1.0,
        exclude_self: true,
    };

    /// Intra-video defaults used for neighbour consensus.
    pub const SGP: Self = Self {
        tau: 0.70,
        top_k: 10,
        temperature: 0.10,
        exclude_self: true,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "attention temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("attention top_k must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "attention tau must lie in [-1, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Row-sparse, row-stochastic attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAttention {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseAttention {
    /// `n` rows with no entries.
    pub fn empty(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    /// Wraps precomputed rows without validation.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.rows[i].iter().any(|&(c, _)| c == j)
    }
}

fn build_row(i: usize, feats: &[UnitVector], params: &AttentionParams) -> Vec<(usize, f64)> {
    let fi = feats[i].as_slice();
    let mut kept: Vec<(usize, f64)> = feats
        .iter()
        .enumerate()
        .filter(|&(j, _)| !(params.exclude_self && j == i))
        .map(|(j, fj)| (j, dot(fi, fj.as_slice())))
        .filter(|&(_, s)| s >= params.tau)
        .collect();
    // Descending similarity, then ascending column.
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.truncate(params.top_k);
    if kept.is_empty() {
        return kept;
    }
    let max = kept[0].1;
    let mut z = 0.0;
    for (_, s) in kept.iter_mut() {
        *s = ((*s - max) / params.temperature).exp();
        z += *s;
    }
    kept.iter_mut().for_each(|(_, w)| *w /= z);
    kept.sort_by_key(|&(j, _)| j);
    kept
}

/// Thresholded, top-k truncated, softmax-normalized cosine attention.
///
/// Self-similarity is dropped before truncation when `exclude_self` is set,
/// so a row can hold up to `top_k` genuine neighbours.
pub fn build_sparse_attention(feats: &[UnitVector], params: &AttentionParams) -> SparseAttention {
    let rows = (0..feats.len())
        .collect::<Vec<_>>()
        .par_chunks(ROW_BLOCK)
        .flat_map_iter(|block| block.iter().map(|&i| build_row(i, feats, params)).collect::<Vec<_>>())
        .collect();
    SparseAttention { rows }
}

/// `(1 − α) f_i + α Σ_j A_ij f_j`, renormalized; empty rows pass through.
pub fn hsa_enhance(main_feats: &[UnitVector], attn: &SparseAttention, alpha_g: f64) -> Result<Vec<UnitVector>> {
    if attn.n() != main_feats.len() {
        return Err(Error::DimensionMismatch {
            expected: main_feats.len(),
            found: attn.n(),
        });
    }
    if !(0.0..=1.0).contains(&alpha_g) {
        return Err(Error::InvalidParameter(format!(
            "alpha_g must lie in [0, 1], got {alpha_g}"
        )));
    }
    main_feats
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let row = attn.row(i);
            if row.is_empty() {
                return Ok(f.clone());
            }
            let mut acc: Vec<f64> = f.as_slice().iter().map(|c| (1.0 - alpha_g) * c).collect();
            for &(j, w) in row {
                let fj = main_feats[j].as_slice();
                acc.iter_mut().zip(fj).for_each(|(a, c)| *a += alpha_g * w * c);
            }
            // A blend that cancels exactly leaves the original direction.
            Ok(normalize(&acc).unwrap_or_else(|_| f.clone()))
        })
        .collect()
}
