//! Frame-level ranking metrics, separability statistics and parameter sweeps.

use crate::dataset::{FeatureDataset, FrameLabels};
use crate::error::{Error, Result};
use crate::pipeline::{run_offline, PipelineConfig, ScoreTrace, SetError};
use crate::prototypes::PrototypeBank;
use crate::sphere::UnitVector;
use crate::vmf::{nearest_distance, score_from_distances};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_OVERLAP_BINS: usize = 64;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Mann–Whitney estimate of P(score_pos > score_neg), ties counted as 1/2.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based mid-ranks of the positives, kept doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let p = n_pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Non-interpolated average precision; equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparabilityStats {
    /// Degrees.
    pub delta_mu: f64,
    /// Degrees.
    pub sigma_delta: f64,
    pub fisher: f64,
    pub score_overlap: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

fn histogram(xs: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &x in xs {
        let b = ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    h.iter_mut().for_each(|c| *c /= xs.len() as f64);
    h
}

/// Geodesic-gap statistics of two labelled feature sets against a bank.
///
/// Δ is `d(nearest normal) − d(nearest anomalous)` in degrees; variances
/// are population variances and σ_Δ pools them weighted by class size.
pub fn separability_stats(
    feats: &[UnitVector],
    labels: &[bool],
    bank: &PrototypeBank,
    bins: usize,
) -> Result<SeparabilityStats> {
    if feats.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: feats.len(),
            found: labels.len(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram bins must be >= 1".into()));
    }
    let (mut d_abn, mut d_norm) = (Vec::new(), Vec::new());
    let (mut s_abn, mut s_norm) = (Vec::new(), Vec::new());
    for (f, &l) in feats.iter().zip(labels) {
        if f.dim() != bank.dim() {
            return Err(Error::DimensionMismatch {
                expected: bank.dim(),
                found: f.dim(),
            });
        }
        let dn = nearest_distance(f.as_slice(), bank.norm_protos());
        let da = nearest_distance(f.as_slice(), bank.abn_protos());
        let s = score_from_distances(dn, da, bank.kappa());
        let delta = (dn - da).to_degrees();
        if l {
            d_abn.push(delta);
            s_abn.push(s);
        } else {
            d_norm.push(delta);
            s_norm.push(s);
        }
    }
    if d_abn.is_empty() || d_norm.is_empty() {
        return Err(Error::SingleClass);
    }
    let (ma, va) = mean_var(&d_abn);
    let (mn, vn) = mean_var(&d_norm);
    let (na, nn) = (d_abn.len() as f64, d_norm.len() as f64);
    let pooled = ((na * va + nn * vn) / (na + nn)).sqrt();
    let gap2 = (ma - mn).powi(2);
    let fisher = if va + vn > 0.0 {
        gap2 / (va + vn)
    } else if gap2 > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let ha = histogram(&s_abn, bins);
    let hn = histogram(&s_norm, bins);
    let overlap = ha.iter().zip(&hn).map(|(a, b)| a.min(*b)).sum::<f64>().min(1.0);
    Ok(SeparabilityStats {
        delta_mu: (ma - mn).abs(),
        sigma_delta: pooled,
        fisher,
        score_overlap: overlap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub auc: f64,
    pub ap: f64,
    pub frames: usize,
}

/// Concatenates frame scores and labels over all videos, in trace order.
pub fn join_frames(traces: &[ScoreTrace], labels: &FrameLabels) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for t in traces {
        let l = labels
            .get(&t.video_id)
            .ok_or_else(|| Error::Config(format!("no labels for video {:?}", t.video_id)))?;
        if l.len() != t.frame_scores.len() {
            return Err(Error::DimensionMismatch {
                expected: t.frame_scores.len(),
                found: l.len(),
            });
        }
        scores.extend_from_slice(&t.frame_scores);
        truth.extend_from_slice(l);
    }
    Ok((scores, truth))
}

pub fn frame_metrics(traces: &[ScoreTrace], labels: &FrameLabels) -> Result<FrameMetrics> {
    let (scores, truth) = join_frames(traces, labels)?;
    Ok(FrameMetrics {
        auc: roc_auc(&scores, &truth)?,
        ap: average_precision(&scores, &truth)?,
        frames: scores.len(),
    })
}

/// One axis of a sweep: a config key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub settings: Vec<(String, String)>,
    pub metrics: FrameMetrics,
}

/// Cartesian product of the axes; the last axis varies fastest.
pub fn grid_points(grid: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// Runs the offline pipeline once per grid point and reports frame metrics
/// in grid order.
pub fn sweep(
    dataset: &FeatureDataset,
    labels: &FrameLabels,
    syn_normal: &[UnitVector],
    syn_abn: &[UnitVector],
    base_config: &PipelineConfig,
    grid: &[GridAxis],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || grid.iter().any(|a| a.values.is_empty()) {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let configs: Vec<(Vec<(String, String)>, PipelineConfig)> = grid_points(grid)
        .into_iter()
        .map(|settings| {
            let mut c = *base_config;
            for (k, v) in &settings {
                c.set(k, v).map_err(|e| match e {
                    SetError::UnknownKey(k) => Error::Config(format!("unknown sweep key {k:?}")),
                    SetError::BadValue(v) => Error::Config(format!("bad value {v:?} for sweep key {k:?}")),
                })?;
            }
            Ok((settings, c))
        })
        .collect::<Result<_>>()?;
    configs
        .into_par_iter()
        .map(|(settings, config)| {
            let run = run_offline(dataset, syn_normal, syn_abn, &config)?;
            Ok(SweepRow {
                settings,
                metrics: frame_metrics(&run.scored.traces, labels)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::normalize;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut acc = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    acc += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        acc / pairs
    }

    /// Walks ranks one by one, recomputing precision from scratch.
    fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let mut used = vec![false; n];
        let mut ranked = Vec::new();
        for _ in 0..n {
            let mut best: Option<usize> = None;
            for k in 0..n {
                if !used[k] && best.is_none_or(|b| scores[k] > scores[b]) {
                    best = Some(k);
                }
            }
            let b = best.unwrap();
            used[b] = true;
            ranked.push(b);
        }
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        for r in 0..n {
            if labels[ranked[r]] {
                let tp = ranked[..=r].iter().filter(|&&k| labels[k]).count() as f64;
                ap += tp / (r + 1) as f64;
            }
        }
        ap / n_pos
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(roc_auc(&[0.4; 5], &[false, true, false, true, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass));
        let s = [0.3, 0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.5];
        let l = [false, true, false, true, false, true, true, false];
        assert!((roc_auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let s = [0.9, 0.8, 0.7, 0.6, 0.5];
        assert_eq!(
            average_precision(&s, &[false, false, true, false, false]).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(average_precision(&s, &[false; 5]), Err(Error::NoPositives));
        let s = [0.3, 0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.5];
        let l = [false, true, false, true, false, true, true, false];
        assert!((average_precision(&s, &l).unwrap() - brute_ap(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn ap_ties_follow_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    fn e(i: usize) -> UnitVector {
        UnitVector::basis(3, i).unwrap()
    }

    #[test]
    fn separability_examples() {
        let bank = PrototypeBank::new(vec![e(0)], vec![e(1)], 10.0).unwrap();
        let same = vec![
            normalize(&[1.0, 1.0, 0.3]).unwrap(),
            normalize(&[0.8, 0.2, 1.0]).unwrap(),
        ];
        let feats: Vec<_> = same.iter().chain(&same).cloned().collect();
        let s = separability_stats(&feats, &[false, false, true, true], &bank, 64).unwrap();
        assert_eq!(s.delta_mu, 0.0);
        assert!((s.score_overlap - 1.0).abs() < 1e-12);

        let bank = PrototypeBank::new(vec![e(0)], vec![e(0).negated()], 10.0).unwrap();
        let feats = vec![e(0), e(0), e(0).negated(), e(0).negated()];
        let s = separability_stats(&feats, &[false, false, true, true], &bank, 64).unwrap();
        assert!((s.delta_mu - 360.0).abs() < 1e-9);
        assert_eq!(s.fisher, f64::INFINITY);
        assert_eq!(s.score_overlap, 0.0);
        assert_eq!(s.sigma_delta, 0.0);

        assert_eq!(
            separability_stats(&feats, &[true; 4], &bank, 64),
            Err(Error::SingleClass)
        );
    }

    #[test]
    fn grid_is_row_major() {
        let grid = [
            GridAxis {
                key: "k_n".into(),
                values: vec!["1".into(), "2".into()],
            },
            GridAxis {
                key: "k_a".into(),
                values: vec!["3".into(), "4".into()],
            },
        ];
        let pts = grid_points(&grid);
        let flat: Vec<String> = pts.iter().map(|p| format!("{}{}", p[0].1, p[1].1)).collect();
        assert_eq!(flat, vec!["13", "14", "23", "24"]);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=12).prop_flat_map(|n| {
            // Coarse score grid so ties are frequent.
            (
                prop::collection::vec(0u8..6, n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, l)| (s.into_iter().map(|x| x as f64 / 5.0).collect(), l))
        })
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force((s, l) in instance()) {
            let pos = l.iter().filter(|&&x| x).count();
            if pos > 0 && pos < l.len() {
                prop_assert!((roc_auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
            }
            if pos > 0 {
                prop_assert!((average_precision(&s, &l).unwrap() - brute_ap(&s, &l)).abs() < 1e-12);
            }
        }

        #[test]
        fn metrics_invariant_to_monotone_transform((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            let pos = l.iter().filter(|&&x| x).count();
            if pos > 0 && pos < l.len() {
                prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
            }
            if pos > 0 {
                prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
            }
        }

        #[test]
        fn reversed_scores_complement_auc(s in prop::collection::hash_set(0u32..1000, 2..12), seed: u64) {
            let s: Vec<f64> = s.into_iter().map(|x| x as f64).collect();
            let l: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let pos = l.iter().filter(|&&x| x).count();
            prop_assume!(pos > 0 && pos < l.len());
            let r: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
            prop_assert!((roc_auc(&r, &l).unwrap() - (1.0 - roc_auc(&s, &l).unwrap())).abs() < 1e-12);
        }
    }
}
