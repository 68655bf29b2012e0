//! Per-video geodesic pulling of ambiguous clips toward dominant prototypes.

use crate::attention::{build_sparse_attention, AttentionParams, SparseAttention};
use crate::error::{Error, Result};
use crate::prototypes::{nearest, PrototypeBank};
use crate::sphere::{dot, normalize, slerp, UnitVector, SLERP_SIN_EPS};
use crate::vmf::{score_unchecked, sigmoid};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgpParams {
    pub beta_base: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub lambda_r: f64,
    pub tau_r: f64,
    pub gamma_min: f64,
    pub delta_margin: f64,
    pub attention: AttentionParams,
}

impl Default for SgpParams {
    fn default() -> Self {
        Self {
            beta_base: 0.5,
            r_min: 0.05,
            r_max: 0.25,
            lambda_r: 20.0,
            tau_r: 0.08,
            gamma_min: 0.02,
            delta_margin: 0.01,
            attention: AttentionParams::SGP,
        }
    }
}

impl SgpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.beta_base > 0.0 && self.beta_base < 1.0) {
            return bad("beta_base must lie in (0, 1)");
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max <= 0.5) {
            return bad("radius bounds must satisfy 0 < r_min < r_max <= 0.5");
        }
        if !(self.lambda_r > 0.0) || !(self.tau_r > 0.0) {
            return bad("lambda_r and tau_r must be > 0");
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < 1.0) {
            return bad("gamma_min must lie in (0, 1)");
        }
        if !(self.delta_margin >= 0.0) {
            return bad("delta_margin must be >= 0");
        }
        self.attention.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbiguityInterval {
    pub rho_low: f64,
    pub rho_high: f64,
    pub mad: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TriLabel {
    Norm,
    Amb,
    Abn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Assigned {
    Norm,
    Abn,
}

/// Dominant prototypes for one video, stored as indices into the bank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominantSet {
    pub abn: Option<usize>,
    pub norms: Vec<usize>,
    pub fully_normal: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ambiguity interval around 0.5 whose half-width shrinks as the scores'
/// median absolute deviation grows.
pub fn mad_interval(scores: &[f64], params: &SgpParams) -> Result<AmbiguityInterval> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let mut s = scores.to_vec();
    let med = median(&mut s);
    let mut dev: Vec<f64> = scores.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut dev);
    // Convex form of r_min + (r_max − r_min)·σ: exact at σ = 1/2.
    let w = sigmoid(-params.lambda_r * (mad - params.tau_r));
    let radius = params.r_min * (1.0 - w) + params.r_max * w;
    Ok(AmbiguityInterval {
        rho_low: (0.5 - radius).max(0.0),
        rho_high: (0.5 + radius).min(1.0),
        mad,
        radius,
    })
}

pub fn tri_classify(scores: &[f64], interval: &AmbiguityInterval) -> Vec<TriLabel> {
    scores
        .iter()
        .map(|&s| {
            if s < interval.rho_low {
                TriLabel::Norm
            } else if s > interval.rho_high {
                TriLabel::Abn
            } else {
                TriLabel::Amb
            }
        })
        .collect()
}

/// Vote counts per prototype; returns indices ordered by descending count,
/// ties to the lower index, restricted to prototypes with at least one vote.
fn ranked_votes<'a>(feats: impl Iterator<Item = &'a UnitVector>, protos: &[UnitVector]) -> Vec<usize> {
    let mut counts = vec![0usize; protos.len()];
    for f in feats {
        counts[nearest(f.as_slice(), protos).0] += 1;
    }
    let mut order: Vec<usize> = (0..protos.len()).filter(|&k| counts[k] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

pub fn min_abn_count(gamma_min: f64, t_total: usize) -> usize {
    3usize.max((gamma_min * t_total as f64).floor() as usize)
}

pub fn vote_dominant(
    feats: &[UnitVector],
    labels: &[TriLabel],
    bank: &PrototypeBank,
    params: &SgpParams,
    t_total: usize,
) -> Result<DominantSet> {
    if feats.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: feats.len(),
            found: labels.len(),
        });
    }
    let of = |want: TriLabel| {
        feats
            .iter()
            .zip(labels)
            .filter(move |(_, &l)| l == want)
            .map(|(f, _)| f)
    };

    let mut norms = ranked_votes(of(TriLabel::Norm), bank.norm_protos());
    norms.truncate(2);
    if norms.is_empty() {
        let centroid = normalize(&feats.iter().fold(vec![0.0; bank.dim()], |mut acc, f| {
            acc.iter_mut().zip(f.as_slice()).for_each(|(a, c)| *a += c);
            acc
        }));
        // A centroid that cancels to zero has no preferred direction.
        let k = match centroid {
            Ok(c) => nearest(c.as_slice(), bank.norm_protos()).0,
            Err(_) => 0,
        };
        norms.push(k);
    }

    let n_abn = labels.iter().filter(|&&l| l == TriLabel::Abn).count();
    if n_abn < min_abn_count(params.gamma_min, t_total) {
        return Ok(DominantSet {
            abn: None,
            norms,
            fully_normal: true,
        });
    }
    let abn = ranked_votes(of(TriLabel::Abn), bank.abn_protos()).first().copied();
    Ok(DominantSet {
        abn,
        norms,
        fully_normal: false,
    })
}

fn best_norm_similarity(g: &[f64], dom: &DominantSet, bank: &PrototypeBank) -> f64 {
    dom.norms
        .iter()
        .map(|&k| dot(g, bank.norm_protos()[k].as_slice()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Labels each ambiguous clip from the attention-weighted consensus of its
/// neighbours, falling back to its own feature when it has none.
pub fn neighbor_assign(
    amb_indices: &[usize],
    attn: &SparseAttention,
    enh_feats: &[UnitVector],
    dom: &DominantSet,
    bank: &PrototypeBank,
    delta_margin: f64,
) -> Vec<Assigned> {
    let abn = match (dom.fully_normal, dom.abn) {
        (false, Some(k)) => &bank.abn_protos()[k],
        _ => return vec![Assigned::Norm; amb_indices.len()],
    };
    amb_indices
        .iter()
        .map(|&i| {
            let row = attn.row(i);
            let mut g: Vec<f64> = vec![0.0; enh_feats[i].dim()];
            for &(j, w) in row {
                g.iter_mut().zip(enh_feats[j].as_slice()).for_each(|(a, c)| *a += w * c);
            }
            let g = match normalize(&g) {
                Ok(u) if !row.is_empty() => u,
                _ => enh_feats[i].clone(),
            };
            let sim_abn = dot(g.as_slice(), abn.as_slice());
            let sim_norm = best_norm_similarity(g.as_slice(), dom, bank);
            if sim_abn > sim_norm + delta_margin {
                Assigned::Abn
            } else {
                Assigned::Norm
            }
        })
        .collect()
}

/// Pull strength: full at 0.5, half at the interval edges, linear between.
pub fn adaptive_beta(score: f64, interval: &AmbiguityInterval, beta_base: f64) -> Result<f64> {
    if !(score >= interval.rho_low && score <= interval.rho_high) {
        return Err(Error::OutOfInterval {
            score,
            low: interval.rho_low,
            high: interval.rho_high,
        });
    }
    let d_hat = if score >= 0.5 {
        let span = interval.rho_high - 0.5;
        if span > 0.0 {
            (score - 0.5) / span
        } else {
            1.0
        }
    } else {
        let span = 0.5 - interval.rho_low;
        if span > 0.0 {
            (0.5 - score) / span
        } else {
            1.0
        }
    };
    Ok(beta_base * (1.0 - 0.5 * d_hat.clamp(0.0, 1.0)))
}

/// Everything computed for one video, for tracing and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SgpOutcome {
    pub final_scores: Vec<f64>,
    pub pulled_feats: Vec<UnitVector>,
    pub interval: AmbiguityInterval,
    pub labels: Vec<TriLabel>,
    pub dominant: DominantSet,
    /// `(clip index, assigned label, β)` for each ambiguous clip.
    pub pulls: Vec<(usize, Assigned, f64)>,
}

fn pull(f: &UnitVector, target: &UnitVector, beta: f64) -> Result<UnitVector> {
    let c = f.dot(target).clamp(-1.0, 1.0);
    if (1.0 - c * c).max(0.0).sqrt() < SLERP_SIN_EPS {
        return Ok(f.clone());
    }
    slerp(f, target, beta)
}

fn nearest_dominant_norm<'a>(f: &UnitVector, dom: &DominantSet, bank: &'a PrototypeBank) -> &'a UnitVector {
    let mut best = (dom.norms[0], f64::NEG_INFINITY);
    for &k in &dom.norms {
        let s = f.dot(&bank.norm_protos()[k]);
        if s > best.1 {
            best = (k, s);
        }
    }
    &bank.norm_protos()[best.0]
}

/// Runs interval, voting, consensus and pulling for a single video and
/// re-scores every clip with the bank.
pub fn sgp_video(
    enh_feats: &[UnitVector],
    vis_feats: &[UnitVector],
    init_scores: &[f64],
    bank: &PrototypeBank,
    params: &SgpParams,
) -> Result<SgpOutcome> {
    let t = enh_feats.len();
    if t == 0 {
        return Err(Error::EmptyInput("video clips"));
    }
    for len in [vis_feats.len(), init_scores.len()] {
        if len != t {
            return Err(Error::DimensionMismatch {
                expected: t,
                found: len,
            });
        }
    }
    if let Some(f) = enh_feats.iter().chain(vis_feats).find(|f| f.dim() != bank.dim()) {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: f.dim(),
        });
    }

    let interval = mad_interval(init_scores, params)?;
    let labels = tri_classify(init_scores, &interval);
    let dominant = vote_dominant(enh_feats, &labels, bank, params, t)?;
    let amb: Vec<usize> = (0..t).filter(|&i| labels[i] == TriLabel::Amb).collect();

    let assigned = if dominant.fully_normal || amb.is_empty() {
        vec![Assigned::Norm; amb.len()]
    } else {
        let attn = build_sparse_attention(vis_feats, &params.attention);
        neighbor_assign(&amb, &attn, enh_feats, &dominant, bank, params.delta_margin)
    };

    let mut pulled_feats = enh_feats.to_vec();
    let mut pulls = Vec::with_capacity(amb.len());
    for (&i, &label) in amb.iter().zip(&assigned) {
        let beta = adaptive_beta(init_scores[i], &interval, params.beta_base)?;
        let target = match (label, dominant.abn) {
            (Assigned::Abn, Some(k)) => &bank.abn_protos()[k],
            _ => nearest_dominant_norm(&enh_feats[i], &dominant, bank),
        };
        pulled_feats[i] = pull(&enh_feats[i], target, beta)?;
        pulls.push((i, label, beta));
    }

    let final_scores = pulled_feats
        .iter()
        .map(|f| score_unchecked(f.as_slice(), bank))
        .collect();
    Ok(SgpOutcome {
        final_scores,
        pulled_feats,
        interval,
        labels,
        dominant,
        pulls,
    })
}
