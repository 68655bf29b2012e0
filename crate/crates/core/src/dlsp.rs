//! Per-layer class-separability probing and layer selection.
//!
//! Each class is summarized by the cosine similarities of its samples to the
//! class centroid; a 1-D Gaussian is fitted to each, and three closed-form
//! statistics of the two Gaussians are fused by Z-scoring across layers.

use crate::error::{Error, Result};
use crate::prototypes::mean_direction;
use crate::sphere::UnitVector;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{LN_2, PI};

pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerRecord {
    pub kl: f64,
    pub ldr: f64,
    pub entropy: f64,
    pub z_kl: f64,
    pub z_ldr: f64,
    pub z_entropy: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSaliency {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Gaussian {
    mean: f64,
    var: f64,
}

impl Gaussian {
    fn fit(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, var }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        -0.5 * (2.0 * PI * self.var).ln() - (x - self.mean).powi(2) / (2.0 * self.var)
    }
}

/// Raw separability statistics of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMetrics {
    pub kl: f64,
    pub ldr: f64,
    pub entropy: f64,
}

fn symmetric_kl(p: Gaussian, q: Gaussian) -> f64 {
    let d2 = (p.mean - q.mean).powi(2);
    0.5 * (p.var / q.var + q.var / p.var - 2.0) + 0.5 * d2 * (1.0 / p.var + 1.0 / q.var)
}

/// Binary entropy in bits of σ(z), stable for large |z|.
fn binary_entropy_bits(z: f64) -> f64 {
    // H = ln(1 + e^{-|z|}) + |z| e^{-|z|} / (1 + e^{-|z|}), in nats.
    let a = z.abs();
    let e = (-a).exp();
    (e.ln_1p() + a * e / (1.0 + e)) / LN_2
}

fn similarities(feats: &[UnitVector]) -> Result<Vec<f64>> {
    let c = mean_direction(feats)?;
    Ok(feats.iter().map(|f| f.dot(&c)).collect())
}

pub fn layer_metrics(layer: usize, normal: &[UnitVector], abn: &[UnitVector]) -> Result<RawMetrics> {
    if normal.is_empty() {
        return Err(Error::EmptyInput("normal layer features"));
    }
    if abn.is_empty() {
        return Err(Error::EmptyInput("anomalous layer features"));
    }
    let sn = similarities(normal)?;
    let sa = similarities(abn)?;
    let gn = Gaussian::fit(&sn);
    let ga = Gaussian::fit(&sa);
    for g in [gn, ga] {
        if g.var < MIN_VARIANCE {
            return Err(Error::DegenerateVariance { layer, variance: g.var });
        }
    }
    let mut ldr = 0.0;
    let mut entropy = 0.0;
    for (xs, own, other) in [(&sn, gn, ga), (&sa, ga, gn)] {
        for &x in xs.iter() {
            let lr = own.log_pdf(x) - other.log_pdf(x);
            ldr += lr.abs();
            entropy += binary_entropy_bits(lr);
        }
    }
    let n = (sn.len() + sa.len()) as f64;
    Ok(RawMetrics {
        kl: symmetric_kl(gn, ga),
        ldr: ldr / n,
        entropy: entropy / n,
    })
}

/// Population Z-scores; a constant series maps to zeros.
pub fn z_scores(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Fuses raw per-layer metrics into composite saliency scores.
pub fn fuse(raw: &[RawMetrics]) -> LayerSaliency {
    let col = |f: fn(&RawMetrics) -> f64| z_scores(&raw.iter().map(f).collect::<Vec<_>>());
    let zk = col(|m| m.kl);
    let zl = col(|m| m.ldr);
    let ze = col(|m| m.entropy);
    let layers = raw
        .iter()
        .enumerate()
        .map(|(i, m)| LayerRecord {
            kl: m.kl,
            ldr: m.ldr,
            entropy: m.entropy,
            z_kl: zk[i],
            z_ldr: zl[i],
            z_entropy: ze[i],
            composite: zk[i] + zl[i] - ze[i],
        })
        .collect();
    LayerSaliency { layers }
}

pub fn dlsp_evaluate(per_layer_normal: &[Vec<UnitVector>], per_layer_abn: &[Vec<UnitVector>]) -> Result<LayerSaliency> {
    if per_layer_normal.is_empty() {
        return Err(Error::EmptyInput("layers"));
    }
    if per_layer_normal.len() != per_layer_abn.len() {
        return Err(Error::DimensionMismatch {
            expected: per_layer_normal.len(),
            found: per_layer_abn.len(),
        });
    }
    let raw: Vec<RawMetrics> = per_layer_normal
        .par_iter()
        .zip(per_layer_abn)
        .enumerate()
        .map(|(l, (n, a))| layer_metrics(l, n, a))
        .collect::<Result<_>>()?;
    Ok(fuse(&raw))
}

/// Index of the largest composite; ties go to the lowest index.
pub fn select_layer(saliency: &LayerSaliency) -> usize {
    let mut best = 0;
    for (i, r) in saliency.layers.iter().enumerate() {
        if r.composite > saliency.layers[best].composite {
            best = i;
        }
    }
    best
}
