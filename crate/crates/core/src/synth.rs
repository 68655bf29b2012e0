//! Synthetic vMF feature worlds with known ground truth.
//!
//! Main features live in a cone around a base direction (the first axis):
//! each cluster mean is `Exp_base(tangent)` and samples are vMF around it.
//! Visual features encode a per-video scene and a per-clip event (normal or
//! anomaly type) as tangent offsets around the same base, so that after
//! centering only clips sharing both scene and event are strongly similar.

use crate::dataset::{FeatureDataset, FrameLabels};
use crate::error::{Error, Result};
use crate::sphere::{dot, exp_map, normalize, slerp, TangentVector, UnitVector};
use crate::vmf::{sample_vmf_with, VmfParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSpec {
    /// Offset from the base direction in radians; coordinate 0 must be 0.
    pub tangent: Vec<f64>,
    pub kappa: f64,
}

impl ClusterSpec {
    /// Offset of `angles_deg[i]` degrees along axis `axes[i]`.
    pub fn at(dim: usize, axes: &[(usize, f64)], kappa: f64) -> Self {
        let mut tangent = vec![0.0; dim];
        for &(axis, deg) in axes {
            tangent[axis] += deg.to_radians();
        }
        Self { tangent, kappa }
    }

    pub fn mean(&self) -> Result<UnitVector> {
        let dim = self.tangent.len();
        Ok(exp_map(&TangentVector::new(
            UnitVector::basis(dim, 0)?,
            self.tangent.clone(),
        )?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisualSpec {
    pub kappa: f64,
    pub scenes: usize,
    pub scene_angle_deg: f64,
    pub event_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldSpec {
    pub dim: usize,
    pub seed: u64,
    pub normal: Vec<ClusterSpec>,
    pub anomalies: Vec<ClusterSpec>,
    pub videos: usize,
    pub clips_per_video: usize,
    /// Every `abnormal_every`-th video (starting at 0) contains an anomaly.
    pub abnormal_every: usize,
    /// Inclusive range of anomaly interval lengths, in clips.
    pub anomaly_len: (usize, usize),
    /// Probability that a clip's main feature is drawn between its video's
    /// normal and anomaly means instead of around its own class. The visual
    /// feature still follows the true label.
    pub ambiguous_fraction: f64,
    /// Where such clips sit: 0 at their own class mean, 1 at the other one.
    pub ambiguous_shift: f64,
    pub ambiguous_kappa: f64,
    pub syn_per_class: usize,
    /// Rotation of the test main stream in the plane of the first two axes.
    pub rotation_deg: f64,
    pub visual: VisualSpec,
    pub frames_per_clip: usize,
}

/// Named scenarios: "A" well separated, "B" diverse anomalies with clips
/// whose main feature looks like the other class, "C" a 5° rotated test
/// domain, "D" a narrow cone.
pub const PRESETS: [&str; 4] = ["A", "B", "C", "D"];

impl WorldSpec {
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let visual = VisualSpec {
            kappa: 20_000.0,
            scenes: 4,
            scene_angle_deg: 15.0,
            event_angle_deg: 15.0,
        };
        match name {
            "A" => {
                let dim = 16;
                Ok(Self {
                    dim,
                    seed,
                    normal: vec![ClusterSpec::at(dim, &[(1, -30.0)], 100.0)],
                    anomalies: vec![ClusterSpec::at(dim, &[(1, 30.0)], 100.0)],
                    videos: 30,
                    clips_per_video: 40,
                    abnormal_every: 2,
                    anomaly_len: (8, 16),
                    ambiguous_fraction: 0.0,
                    ambiguous_shift: 0.5,
                    ambiguous_kappa: 100.0,
                    syn_per_class: 300,
                    rotation_deg: 0.0,
                    visual,
                    frames_per_clip: 4,
                })
            }
            "B" => {
                let dim = 32;
                let kappa = 1500.0;
                let mut anomalies: Vec<ClusterSpec> = (0..7)
                    .map(|j| ClusterSpec::at(dim, &[(1, 20.0), (2 + j, 20.0)], kappa))
                    .collect();
                // Subtle anomaly type sitting sideways of the normal cluster.
                anomalies.push(ClusterSpec::at(dim, &[(1, -2.0), (9, 22.0)], kappa));
                Ok(Self {
                    dim,
                    seed,
                    normal: vec![ClusterSpec::at(dim, &[(1, -20.0)], kappa)],
                    anomalies,
                    videos: 32,
                    clips_per_video: 40,
                    abnormal_every: 2,
                    anomaly_len: (8, 14),
                    ambiguous_fraction: 0.3,
                    ambiguous_shift: 1.0,
                    ambiguous_kappa: 500.0,
                    syn_per_class: 320,
                    rotation_deg: 0.0,
                    visual,
                    frames_per_clip: 4,
                })
            }
            "C" => {
                let dim = 16;
                Ok(Self {
                    dim,
                    seed,
                    normal: vec![ClusterSpec::at(dim, &[(1, -5.0)], 400.0)],
                    anomalies: vec![ClusterSpec::at(dim, &[(1, 5.0)], 400.0)],
                    videos: 30,
                    clips_per_video: 40,
                    abnormal_every: 2,
                    anomaly_len: (8, 16),
                    ambiguous_fraction: 0.0,
                    ambiguous_shift: 0.5,
                    ambiguous_kappa: 400.0,
                    syn_per_class: 300,
                    rotation_deg: 5.0,
                    visual,
                    frames_per_clip: 4,
                })
            }
            "D" => {
                let dim = 16;
                let kappa = kappa_for_angular_std(dim, 1.7, seed)?;
                Ok(Self {
                    dim,
                    seed,
                    normal: vec![ClusterSpec::at(dim, &[(1, -1.5)], kappa)],
                    anomalies: vec![ClusterSpec::at(dim, &[(1, 1.5)], kappa)],
                    videos: 20,
                    clips_per_video: 40,
                    abnormal_every: 2,
                    anomaly_len: (8, 16),
                    ambiguous_fraction: 0.0,
                    ambiguous_shift: 0.5,
                    ambiguous_kappa: kappa,
                    syn_per_class: 300,
                    rotation_deg: 0.0,
                    visual,
                    frames_per_clip: 4,
                })
            }
            other => Err(Error::Config(format!("unknown world preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dim < 3 {
            return Err(Error::DimensionTooSmall(self.dim));
        }
        if self.normal.is_empty() || self.anomalies.is_empty() {
            return bad("world needs at least one normal and one anomalous cluster".into());
        }
        for c in self.normal.iter().chain(&self.anomalies) {
            if c.tangent.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: c.tangent.len(),
                });
            }
            if c.tangent[0] != 0.0 {
                return bad("cluster tangent must have a zero first coordinate".into());
            }
            if !(c.kappa > 0.0) {
                return bad(format!("cluster kappa must be > 0, got {}", c.kappa));
            }
        }
        let (lo, hi) = self.anomaly_len;
        if lo == 0 || lo > hi || hi > self.clips_per_video {
            return bad(format!(
                "anomaly length range {lo}..={hi} does not fit {} clips",
                self.clips_per_video
            ));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return bad(format!(
                "ambiguous fraction must lie in [0, 1], got {}",
                self.ambiguous_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_shift) {
            return bad(format!(
                "ambiguous shift must lie in [0, 1], got {}",
                self.ambiguous_shift
            ));
        }
        let v = &self.visual;
        if 2 + v.scenes + self.anomalies.len() > self.dim {
            return bad("dimension too small for the visual scene and event axes".into());
        }
        if self.videos == 0 || self.clips_per_video == 0 || self.syn_per_class == 0 || self.frames_per_clip == 0 {
            return bad("counts must be positive".into());
        }
        if self.abnormal_every == 0 || v.scenes == 0 || !(v.kappa > 0.0) || !(self.ambiguous_kappa > 0.0) {
            return bad("abnormal_every, scenes and kappas must be positive".into());
        }
        Ok(())
    }
}

/// Points with binary labels and the cluster each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<UnitVector>,
    pub labels: Vec<bool>,
    pub cluster: Vec<usize>,
}

/// Independent stream seed for `(seed, stream, index)`.
fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over a combined key.
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_cluster<R: Rng>(c: &ClusterSpec, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    sample_vmf_with(&VmfParams::new(c.mean()?, c.kappa)?, n, rng)
}

/// Draws `n_per_class` samples per class, spread round-robin over clusters.
pub fn gen_two_class(spec: &WorldSpec, n_per_class: usize) -> Result<LabeledPoints> {
    spec.validate()?;
    let mut out = LabeledPoints {
        points: Vec::new(),
        labels: Vec::new(),
        cluster: Vec::new(),
    };
    for (stream, clusters, label) in [(1u64, &spec.normal, false), (2, &spec.anomalies, true)] {
        let per: Vec<Vec<UnitVector>> = clusters
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                let count = n_per_class / clusters.len() + usize::from(k < n_per_class % clusters.len());
                if count == 0 {
                    return Ok(Vec::new());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream, k as u64));
                sample_cluster(c, count, &mut rng)
            })
            .collect::<Result<_>>()?;
        for (k, pts) in per.into_iter().enumerate() {
            out.labels.extend(std::iter::repeat_n(label, pts.len()));
            out.cluster.extend(std::iter::repeat_n(k, pts.len()));
            out.points.extend(pts);
        }
    }
    Ok(out)
}

/// Rotates every point by `angle_deg` in the plane spanned by `u` and `v`,
/// taking `u` toward `v`.
pub fn rotate_domain(points: &[UnitVector], u: &UnitVector, v: &UnitVector, angle_deg: f64) -> Result<Vec<UnitVector>> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    if u.dot(v).abs() > 1e-12 {
        return Err(Error::InvalidParameter("rotation axes must be orthogonal".into()));
    }
    if angle_deg == 0.0 {
        return Ok(points.to_vec());
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (us, vs) = (u.as_slice(), v.as_slice());
    points
        .iter()
        .map(|x| {
            if x.dim() != u.dim() {
                return Err(Error::DimensionMismatch {
                    expected: u.dim(),
                    found: x.dim(),
                });
            }
            let xs = x.as_slice();
            let (a, b) = (dot(xs, us), dot(xs, vs));
            let (a2, b2) = (c * a - s * b, s * a + c * b);
            let y: Vec<f64> = xs
                .iter()
                .zip(us.iter().zip(vs))
                .map(|(xi, (ui, vi))| xi + (a2 - a) * ui + (b2 - b) * vi)
                .collect();
            Ok(UnitVector::from_unit(y))
        })
        .collect()
}

/// RMS angle in degrees between the points and their normalized mean.
pub fn angular_std(points: &[UnitVector]) -> Result<f64> {
    let m = crate::prototypes::mean_direction(points)?;
    let ms = points
        .iter()
        .map(|p| p.dot(&m).clamp(-1.0, 1.0).acos().powi(2))
        .sum::<f64>()
        / points.len() as f64;
    Ok(ms.sqrt().to_degrees())
}

const CALIBRATION_SAMPLES: usize = 4000;

/// Concentration whose samples have the requested angular std, found by
/// bisection in log κ on a fixed calibration sample.
pub fn kappa_for_angular_std(dim: usize, std_deg: f64, seed: u64) -> Result<f64> {
    if !(std_deg > 0.0) || !std_deg.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "angular std must be > 0, got {std_deg}"
        )));
    }
    let mu = UnitVector::basis(dim, 0)?;
    let measure = |kappa: f64| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, 0));
        angular_std(&sample_vmf_with(
            &VmfParams::new(mu.clone(), kappa)?,
            CALIBRATION_SAMPLES,
            &mut rng,
        )?)
    };
    let (mut lo, mut hi) = (0.0f64, 30.0f64); // ln κ
    if measure(hi.exp())? > std_deg {
        return Err(Error::InvalidParameter(format!(
            "angular std {std_deg}° is below the reachable range"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if measure(mid.exp())? > std_deg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Samples `n` points around `mean` with the requested angular std.
pub fn gen_conical(dim: usize, mean: &UnitVector, std_deg: f64, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    if mean.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: mean.dim(),
        });
    }
    let kappa = kappa_for_angular_std(dim, std_deg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 8, 0));
    sample_vmf_with(&VmfParams::new(mean.clone(), kappa)?, n, &mut rng)
}

/// A generated world: test videos, their labels, and synthetic calibration
/// features for both classes.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub dataset: FeatureDataset,
    pub labels: FrameLabels,
    pub clip_labels: Vec<Vec<bool>>,
    pub syn_normal: Vec<UnitVector>,
    pub syn_abn: Vec<UnitVector>,
}

struct VideoDraw {
    main: Vec<UnitVector>,
    visual: Vec<UnitVector>,
    labels: Vec<bool>,
}

fn visual_point<R: Rng>(spec: &WorldSpec, scene: usize, event: usize, rng: &mut R) -> Result<UnitVector> {
    let v = &spec.visual;
    let mut t = vec![0.0; spec.dim];
    t[1 + scene] += v.scene_angle_deg.to_radians();
    t[1 + v.scenes + event] += v.event_angle_deg.to_radians();
    let c = ClusterSpec {
        tangent: t,
        kappa: v.kappa,
    };
    Ok(sample_cluster(&c, 1, rng)?.remove(0))
}

fn draw_video(spec: &WorldSpec, index: usize) -> Result<VideoDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 3, index as u64));
    let t = spec.clips_per_video;
    let scene = rng.random_range(0..spec.visual.scenes);
    let normal = &spec.normal[rng.random_range(0..spec.normal.len())];
    // Anomaly type of this video; normal videos still use one to place
    // their ambiguous clips.
    let a = (index / spec.abnormal_every) % spec.anomalies.len();
    let mut labels = vec![false; t];
    if index.is_multiple_of(spec.abnormal_every) {
        let len = rng.random_range(spec.anomaly_len.0..=spec.anomaly_len.1);
        let start = rng.random_range(0..=t - len);
        labels[start..start + len].iter_mut().for_each(|l| *l = true);
    }
    let (n_mean, a_mean) = (normal.mean()?, spec.anomalies[a].mean()?);
    let confusable = [
        slerp(&n_mean, &a_mean, spec.ambiguous_shift)?,
        slerp(&a_mean, &n_mean, spec.ambiguous_shift)?,
    ];

    let mut main = Vec::with_capacity(t);
    let mut visual = Vec::with_capacity(t);
    for &abnormal in &labels {
        let f = if rng.random_bool(spec.ambiguous_fraction) {
            let mu = confusable[usize::from(abnormal)].clone();
            sample_vmf_with(&VmfParams::new(mu, spec.ambiguous_kappa)?, 1, &mut rng)?.remove(0)
        } else if abnormal {
            sample_cluster(&spec.anomalies[a], 1, &mut rng)?.remove(0)
        } else {
            sample_cluster(normal, 1, &mut rng)?.remove(0)
        };
        main.push(f);
        let event = if abnormal { 1 + a } else { 0 };
        visual.push(visual_point(spec, scene, event, &mut rng)?);
    }
    Ok(VideoDraw { main, visual, labels })
}

/// Generates the full world described by `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let draws: Vec<VideoDraw> = (0..spec.videos)
        .into_par_iter()
        .map(|i| draw_video(spec, i))
        .collect::<Result<_>>()?;
    let u = UnitVector::basis(spec.dim, 0)?;
    let v = UnitVector::basis(spec.dim, 1)?;
    let mut videos = Vec::with_capacity(draws.len());
    let mut labels = FrameLabels::default();
    let mut clip_labels = Vec::with_capacity(draws.len());
    for (i, d) in draws.into_iter().enumerate() {
        let id = format!("video_{i:03}");
        let main = if spec.rotation_deg != 0.0 {
            rotate_domain(&d.main, &u, &v, spec.rotation_deg)?
        } else {
            d.main
        };
        let frames = d
            .labels
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, spec.frames_per_clip))
            .collect();
        labels.videos.insert(id.clone(), frames);
        clip_labels.push(d.labels);
        videos.push((id, main, d.visual));
    }
    let syn = gen_two_class(spec, spec.syn_per_class)?;
    let (mut syn_normal, mut syn_abn) = (Vec::new(), Vec::new());
    for (p, l) in syn.points.into_iter().zip(syn.labels) {
        if l {
            syn_abn.push(p)
        } else {
            syn_normal.push(p)
        }
    }
    Ok(World {
        dataset: FeatureDataset::from_units(spec.dim, videos)?,
        labels,
        clip_labels,
        syn_normal,
        syn_abn,
    })
}

/// Unit vectors rounded through f32, as they come back from a feature file.
pub fn round_trip_f32(points: &[UnitVector]) -> Result<Vec<UnitVector>> {
    points
        .iter()
        .map(|p| normalize(&p.as_slice().iter().map(|&x| x as f32 as f64).collect::<Vec<_>>()))
        .collect()
}
