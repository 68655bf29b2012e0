//! Spherical K-Means and the normal/anomalous prototype bank.

use crate::error::{Error, Result};
use crate::sphere::{dot, normalize, UnitVector, ZERO_NORM};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_N_INIT: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Directional prototypes for both classes plus the scoring concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    norm_protos: Vec<UnitVector>,
    abn_protos: Vec<UnitVector>,
    kappa: f64,
}

impl PrototypeBank {
    pub fn new(norm_protos: Vec<UnitVector>, abn_protos: Vec<UnitVector>, kappa: f64) -> Result<Self> {
        if norm_protos.is_empty() {
            return Err(Error::EmptyBank("normal"));
        }
        if abn_protos.is_empty() {
            return Err(Error::EmptyBank("anomalous"));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa {kappa}")));
        }
        let dim = norm_protos[0].dim();
        if let Some(p) = norm_protos.iter().chain(&abn_protos).find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        Ok(Self {
            norm_protos,
            abn_protos,
            kappa,
        })
    }

    pub fn norm_protos(&self) -> &[UnitVector] {
        &self.norm_protos
    }

    pub fn abn_protos(&self) -> &[UnitVector] {
        &self.abn_protos
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.norm_protos[0].dim()
    }

    /// Same prototypes, different concentration.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.norm_protos.clone(), self.abn_protos.clone(), kappa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            n_init: DEFAULT_N_INIT,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Result of one seeded restart.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub prototypes: Vec<UnitVector>,
    /// Σᵢ max_k ⟨xᵢ, μ_k⟩ after the final update.
    pub objective: f64,
    /// Objective after every centroid update, starting at initialization.
    pub history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub best: usize,
    pub runs: Vec<KMeansRun>,
}

impl KMeansFit {
    pub fn prototypes(&self) -> &[UnitVector] {
        &self.runs[self.best].prototypes
    }
}

/// Index of the most similar prototype; ties go to the lowest index.
pub(crate) fn nearest(x: &[f64], protos: &[UnitVector]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, p) in protos.iter().enumerate() {
        let s = dot(x, p.as_slice());
        if s > best.1 {
            best = (k, s);
        }
    }
    best
}

fn objective(points: &[UnitVector], protos: &[UnitVector]) -> f64 {
    points.iter().map(|x| nearest(x.as_slice(), protos).1).sum()
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_once(points: &[UnitVector], k: usize, seed: u64, max_iter: usize) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut protos: Vec<UnitVector> = index::sample(&mut rng, points.len(), k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let dim = points[0].dim();
    let mut assign = vec![usize::MAX; points.len()];
    let mut history = vec![objective(points, &protos)];
    let mut iterations = 0;

    while iterations < max_iter {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(points) {
            let (k_best, _) = nearest(x.as_slice(), &protos);
            if *a != k_best {
                *a = k_best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, x) in assign.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(x.as_slice()).for_each(|(s, c)| *s += c);
        }
        let mut empty = Vec::new();
        for (c, sum) in sums.iter().enumerate() {
            match normalize(sum) {
                Ok(u) if counts[c] > 0 => protos[c] = u,
                _ => empty.push(c),
            }
        }
        for c in empty {
            // Re-seed at the point least similar to its own centroid.
            let mut worst = (0, f64::INFINITY);
            for (i, x) in points.iter().enumerate() {
                let s = dot(x.as_slice(), protos[assign[i]].as_slice());
                if s < worst.1 {
                    worst = (i, s);
                }
            }
            protos[c] = points[worst.0].clone();
            assign[worst.0] = c;
        }
        history.push(objective(points, &protos));
    }

    KMeansRun {
        objective: objective(points, &protos),
        prototypes: protos,
        history,
        iterations,
    }
}

/// Spherical K-Means with `n_init` seeded restarts; returns every restart.
pub fn spherical_kmeans_fit(points: &[UnitVector], k: usize, opts: KMeansOptions) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints { k, found: points.len() });
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.dim(),
        });
    }
    let n_init = opts.n_init.max(1);
    let runs: Vec<KMeansRun> = (0..n_init)
        .into_par_iter()
        .map(|r| run_once(points, k, restart_seed(opts.seed, r), opts.max_iter))
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.objective > runs[best].objective {
            best = r;
        }
    }
    Ok(KMeansFit { best, runs })
}

/// Best-of-`n_init` spherical K-Means prototypes.
pub fn spherical_kmeans(points: &[UnitVector], k: usize, opts: KMeansOptions) -> Result<Vec<UnitVector>> {
    spherical_kmeans_fit(points, k, opts).map(|f| f.prototypes().to_vec())
}

/// Clusters each class independently and packs the result into a bank.
pub fn calibrate(
    normal_feats: &[UnitVector],
    abn_feats: &[UnitVector],
    k_n: usize,
    k_a: usize,
    kappa: f64,
    opts: KMeansOptions,
) -> Result<PrototypeBank> {
    if normal_feats.is_empty() {
        return Err(Error::EmptyInput("normal calibration features"));
    }
    if abn_feats.is_empty() {
        return Err(Error::EmptyInput("anomalous calibration features"));
    }
    let norm = spherical_kmeans(normal_feats, k_n, opts)?;
    let abn = spherical_kmeans(abn_feats, k_a, opts)?;
    PrototypeBank::new(norm, abn, kappa)
}

/// `normalize(Σ points)`, the single-cluster centroid.
pub fn mean_direction(points: &[UnitVector]) -> Result<UnitVector> {
    let first = points.first().ok_or(Error::EmptyInput("mean_direction points"))?;
    let mut s = vec![0.0; first.dim()];
    for p in points {
        s.iter_mut().zip(p.as_slice()).for_each(|(a, b)| *a += b);
    }
    if crate::sphere::norm(&s) < ZERO_NORM * points.len() as f64 {
        return Err(Error::DegenerateMean);
    }
    normalize(&s)
}
