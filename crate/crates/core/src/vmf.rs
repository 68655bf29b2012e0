//! von Mises–Fisher directional model.
//!
//! Only likelihood ratios are used downstream, so the Bessel-function
//! normalizer is never evaluated.

use crate::error::{Error, Result};
use crate::prototypes::PrototypeBank;
use crate::sphere::{dot, normalize, UnitVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

/// Default scoring concentration.
pub const DEFAULT_KAPPA: f64 = 10.0;

/// Largest f64 strictly below 1; scores are clamped into the open interval.
const SCORE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub mu: UnitVector,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "concentration must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(Self { mu, kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// `κ⟨μ, x⟩`.
pub fn vmf_log_density_unnormalized(x: &UnitVector, params: &VmfParams) -> f64 {
    params.kappa * params.mu.dot(x)
}

/// Logistic sigmoid, evaluated without overflow on either tail.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Geodesic distance to the nearest prototype in `protos`.
pub fn nearest_distance(f: &[f64], protos: &[UnitVector]) -> f64 {
    let best = protos
        .iter()
        .map(|p| dot(f, p.as_slice()))
        .fold(f64::NEG_INFINITY, f64::max);
    best.clamp(-1.0, 1.0).acos()
}

/// Likelihood-ratio score from the two nearest-prototype distances.
pub fn score_from_distances(d_norm: f64, d_abn: f64, kappa: f64) -> f64 {
    sigmoid(kappa * (d_norm - d_abn)).clamp(f64::MIN_POSITIVE, SCORE_MAX)
}

/// Anomaly score `σ(κ(d_norm − d_abn))` with the bank's κ.
pub fn vmf_score(f: &UnitVector, bank: &PrototypeBank) -> Result<f64> {
    if bank.norm_protos().is_empty() {
        return Err(Error::EmptyBank("normal"));
    }
    if bank.abn_protos().is_empty() {
        return Err(Error::EmptyBank("anomalous"));
    }
    if f.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: f.dim(),
        });
    }
    Ok(score_unchecked(f.as_slice(), bank))
}

pub(crate) fn score_unchecked(f: &[f64], bank: &PrototypeBank) -> f64 {
    let d_norm = nearest_distance(f, bank.norm_protos());
    let d_abn = nearest_distance(f, bank.abn_protos());
    score_from_distances(d_norm, d_abn, bank.kappa())
}

/// Draws `n` samples from vMF(μ, κ) with Wood's rejection scheme.
///
/// The cosine to μ is sampled by rejection from a Beta envelope and the
/// tangential direction uniformly; identical seeds give identical output.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_vmf_with(params, n, &mut rng)
}

pub(crate) fn sample_vmf_with<R: Rng + ?Sized>(params: &VmfParams, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    if n == 0 {
        return Err(Error::EmptyInput("sample count"));
    }
    let dim = params.mu.dim();
    let m = (dim - 1) as f64;
    let kappa = params.kappa;
    // b = (-2κ + sqrt(4κ² + m²)) / m, rearranged to avoid cancellation.
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).map_err(|e| Error::InvalidParameter(format!("beta envelope: {e}")))?;
    let mu = params.mu.as_slice();

    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        // Uniform direction orthogonal to μ.
        let v = loop {
            let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let r = dot(&g, mu);
            g.iter_mut().zip(mu).for_each(|(gi, mi)| *gi -= r * mi);
            if let Ok(v) = normalize(&g) {
                break v;
            }
        };
        let s = (1.0 - w * w).max(0.0).sqrt();
        let x: Vec<f64> = mu.iter().zip(v.as_slice()).map(|(mi, vi)| w * mi + s * vi).collect();
        out.push(UnitVector::from_unit(x));
    }
    Ok(out)
}
