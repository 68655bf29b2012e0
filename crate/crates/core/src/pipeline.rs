//! End-to-end scoring: centering, calibration, cross-video attention,
//! initial scores, per-video pulling, frame expansion and smoothing.

use crate::attention::{build_sparse_attention, hsa_enhance, AttentionParams};
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::prototypes::{calibrate, KMeansOptions, PrototypeBank};
use crate::sgp::{sgp_video, SgpParams};
use crate::sphere::{center, frechet_mean, normalize, KarcherOptions, UnitVector};
use crate::vmf::{score_unchecked, DEFAULT_KAPPA};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub k_n: usize,
    pub k_a: usize,
    pub alpha_g: f64,
    pub kappa: f64,
    pub hsa_attention: AttentionParams,
    pub sgp: SgpParams,
    pub enable_hsa: bool,
    pub enable_sgp: bool,
    pub frames_per_clip: usize,
    pub smooth_sigma_clips: f64,
    pub seed: u64,
    pub mode: Mode,
    pub kmeans_n_init: usize,
    pub kmeans_max_iter: usize,
    pub karcher_t_max: usize,
    pub karcher_eps: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset("unified").expect("built-in preset")
    }
}

/// Names accepted by [`PipelineConfig::preset`].
pub const PRESETS: [&str; 4] = ["xd", "ucf", "ubnormal", "unified"];

impl PipelineConfig {
    fn base() -> Self {
        let kmeans = KMeansOptions::default();
        let karcher = KarcherOptions::default();
        Self {
            k_n: 12,
            k_a: 18,
            alpha_g: 0.5,
            kappa: DEFAULT_KAPPA,
            hsa_attention: AttentionParams::HSA,
            sgp: SgpParams::default(),
            enable_hsa: true,
            enable_sgp: true,
            frames_per_clip: 4,
            smooth_sigma_clips: 1.0,
            seed: kmeans.seed,
            mode: Mode::Offline,
            kmeans_n_init: kmeans.n_init,
            kmeans_max_iter: kmeans.max_iter,
            karcher_t_max: karcher.t_max,
            karcher_eps: karcher.eps,
        }
    }

    /// Benchmark settings: prototype counts, blend weight and pull strength.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::base();
        let (k_n, k_a, alpha_g, beta) = match name {
            "xd" => (10, 12, 0.80, Some(0.15)),
            "ucf" => (18, 12, 0.75, Some(0.50)),
            "ubnormal" => (12, 20, 0.35, None),
            "unified" => (12, 18, 0.5, Some(0.5)),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        c.k_n = k_n;
        c.k_a = k_a;
        c.alpha_g = alpha_g;
        match beta {
            Some(b) => c.sgp.beta_base = b,
            None => c.enable_sgp = false,
        }
        Ok(c)
    }

    pub fn kmeans(&self) -> KMeansOptions {
        KMeansOptions {
            seed: self.seed,
            n_init: self.kmeans_n_init,
            max_iter: self.kmeans_max_iter,
        }
    }

    pub fn karcher(&self) -> KarcherOptions {
        KarcherOptions {
            t_max: self.karcher_t_max,
            eps: self.karcher_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip == 0 {
            return Err(Error::Config("frames_per_clip must be >= 1".into()));
        }
        if self.k_n == 0 || self.k_a == 0 {
            return Err(Error::Config("k_n and k_a must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_g) {
            return Err(Error::Config(format!(
                "alpha_g must lie in [0, 1], got {}",
                self.alpha_g
            )));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::Config(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if !(self.smooth_sigma_clips >= 0.0) || !self.smooth_sigma_clips.is_finite() {
            return Err(Error::Config("smooth_sigma_clips must be >= 0".into()));
        }
        self.hsa_attention.validate()?;
        self.sgp.validate()
    }

    /// Every key accepted by [`PipelineConfig::set`].
    pub const KEYS: [&'static str; 30] = [
        "preset",
        "k_n",
        "k_a",
        "alpha_g",
        "kappa",
        "beta_base",
        "r_min",
        "r_max",
        "lambda_r",
        "tau_r",
        "gamma_min",
        "delta_margin",
        "hsa_tau",
        "hsa_top_k",
        "hsa_temperature",
        "hsa_exclude_self",
        "sgp_tau",
        "sgp_top_k",
        "sgp_temperature",
        "sgp_exclude_self",
        "enable_hsa",
        "enable_sgp",
        "frames_per_clip",
        "smooth_sigma_clips",
        "seed",
        "mode",
        "kmeans_n_init",
        "kmeans_max_iter",
        "karcher_t_max",
        "karcher_eps",
    ];

    /// Assigns one key from its textual value. `preset` replaces every field.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), SetError> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, SetError> {
            v.parse().map_err(|_| SetError::BadValue(v.to_string()))
        }
        fn flag(v: &str) -> std::result::Result<bool, SetError> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(SetError::BadValue(v.to_string())),
            }
        }
        match key {
            "preset" => {
                let seed = self.seed;
                *self = Self::preset(value).map_err(|_| SetError::BadValue(value.to_string()))?;
                self.seed = seed;
            }
            "k_n" => self.k_n = num(value)?,
            "k_a" => self.k_a = num(value)?,
            "alpha_g" => self.alpha_g = num(value)?,
            "kappa" => self.kappa = num(value)?,
            "beta_base" => self.sgp.beta_base = num(value)?,
            "r_min" => self.sgp.r_min = num(value)?,
            "r_max" => self.sgp.r_max = num(value)?,
            "lambda_r" => self.sgp.lambda_r = num(value)?,
            "tau_r" => self.sgp.tau_r = num(value)?,
            "gamma_min" => self.sgp.gamma_min = num(value)?,
            "delta_margin" => self.sgp.delta_margin = num(value)?,
            "hsa_tau" => self.hsa_attention.tau = num(value)?,
            "hsa_top_k" => self.hsa_attention.top_k = num(value)?,
            "hsa_temperature" => self.hsa_attention.temperature = num(value)?,
            "hsa_exclude_self" => self.hsa_attention.exclude_self = flag(value)?,
            "sgp_tau" => self.sgp.attention.tau = num(value)?,
            "sgp_top_k" => self.sgp.attention.top_k = num(value)?,
            "sgp_temperature" => self.sgp.attention.temperature = num(value)?,
            "sgp_exclude_self" => self.sgp.attention.exclude_self = flag(value)?,
            "enable_hsa" => self.enable_hsa = flag(value)?,
            "enable_sgp" => self.enable_sgp = flag(value)?,
            "frames_per_clip" => self.frames_per_clip = num(value)?,
            "smooth_sigma_clips" => self.smooth_sigma_clips = num(value)?,
            "seed" => self.seed = num(value)?,
            "mode" => {
                self.mode = match value {
                    "offline" => Mode::Offline,
                    "online" => Mode::Online,
                    _ => return Err(SetError::BadValue(value.to_string())),
                }
            }
            "kmeans_n_init" => self.kmeans_n_init = num(value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(value)?,
            "karcher_t_max" => self.karcher_t_max = num(value)?,
            "karcher_eps" => self.karcher_eps = num(value)?,
            _ => return Err(SetError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SetError {
    UnknownKey(String),
    BadValue(String),
}

/// Base points for centering plus the calibrated prototype bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPriors {
    pub unified_mean: UnitVector,
    pub visual_mean: UnitVector,
    pub bank: PrototypeBank,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTrace {
    pub video_id: String,
    pub clip_scores_init: Vec<f64>,
    pub clip_scores_final: Vec<f64>,
    pub frame_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub traces: Vec<ScoreTrace>,
    /// Clips that coincided with the centering base point and were left
    /// uncentered.
    pub at_base_clips: usize,
    /// Centered (and, if enabled, enhanced) main features per video, before
    /// pulling.
    pub features: Vec<Vec<UnitVector>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineRun {
    pub priors: CalibrationPriors,
    pub scored: ScoredRun,
}

/// Centers every point at `base`; points at the base are kept as they are.
pub fn center_all(base: &UnitVector, points: &[UnitVector], at_base: &AtomicUsize) -> Result<Vec<UnitVector>> {
    points
        .par_iter()
        .map(|x| match center(base, x) {
            Ok(c) => Ok(c),
            Err(Error::AtBasePoint) => {
                at_base.fetch_add(1, Ordering::Relaxed);
                Ok(x.clone())
            }
            Err(e) => Err(e),
        })
        .collect()
}

fn check_dim(expected: usize, points: &[UnitVector]) -> Result<()> {
    match points.iter().find(|p| p.dim() != expected) {
        Some(p) => Err(Error::DimensionMismatch {
            expected,
            found: p.dim(),
        }),
        None => Ok(()),
    }
}

/// Fréchet means and prototype bank.
///
/// The unified mean pools the synthetic features with the test main
/// features when `test` is given and the mode is offline; otherwise it is
/// computed from synthetic features alone. The visual mean uses test visual
/// features only; it falls back to the unified mean without a test set or
/// when neither attention stage is enabled, so the visual stream is never
/// read in that case.
pub fn calibrate_priors(
    syn_normal: &[UnitVector],
    syn_abn: &[UnitVector],
    test: Option<&FeatureDataset>,
    config: &PipelineConfig,
) -> Result<CalibrationPriors> {
    config.validate()?;
    let dim = syn_normal
        .first()
        .ok_or(Error::EmptyInput("synthetic normal features"))?
        .dim();
    if syn_abn.is_empty() {
        return Err(Error::EmptyInput("synthetic anomalous features"));
    }
    check_dim(dim, syn_normal)?;
    check_dim(dim, syn_abn)?;

    let mut pool: Vec<UnitVector> = syn_normal.iter().chain(syn_abn).cloned().collect();
    let mut visual = Vec::new();
    if let Some(ds) = test {
        if ds.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: ds.dim,
            });
        }
        for v in &ds.videos {
            if config.mode == Mode::Offline {
                pool.extend(ds.unit_rows(&v.main)?);
            }
            if config.enable_hsa || config.enable_sgp {
                visual.extend(ds.unit_rows(&v.visual)?);
            }
        }
    }
    let unified_mean = frechet_mean(&pool, config.karcher())?.mean;
    let visual_mean = if visual.is_empty() {
        unified_mean.clone()
    } else {
        frechet_mean(&visual, config.karcher())?.mean
    };

    let counter = AtomicUsize::new(0);
    let cn = center_all(&unified_mean, syn_normal, &counter)?;
    let ca = center_all(&unified_mean, syn_abn, &counter)?;
    let bank = calibrate(&cn, &ca, config.k_n, config.k_a, config.kappa, config.kmeans())?;
    Ok(CalibrationPriors {
        unified_mean,
        visual_mean,
        bank,
    })
}

/// Scores a dataset against fixed priors (stages after calibration).
pub fn score_dataset(
    dataset: &FeatureDataset,
    priors: &CalibrationPriors,
    config: &PipelineConfig,
) -> Result<ScoredRun> {
    config.validate()?;
    if dataset.videos.is_empty() {
        return Err(Error::EmptyInput("dataset videos"));
    }
    if dataset.dim != priors.bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: priors.bank.dim(),
            found: dataset.dim,
        });
    }
    let counter = AtomicUsize::new(0);
    let lengths: Vec<usize> = dataset.videos.iter().map(|v| v.clips(dataset.dim)).collect();

    let mut main = Vec::with_capacity(dataset.clip_count());
    for v in &dataset.videos {
        main.extend(center_all(
            &priors.unified_mean,
            &dataset.unit_rows(&v.main)?,
            &counter,
        )?);
    }
    let needs_visual = config.enable_hsa || config.enable_sgp;
    let mut visual = Vec::new();
    if needs_visual {
        for v in &dataset.videos {
            visual.extend(center_all(
                &priors.visual_mean,
                &dataset.unit_rows(&v.visual)?,
                &counter,
            )?);
        }
    }

    let enhanced = if config.enable_hsa {
        let attn = build_sparse_attention(&visual, &config.hsa_attention);
        hsa_enhance(&main, &attn, config.alpha_g)?
    } else {
        main
    };
    let init: Vec<f64> = enhanced
        .par_iter()
        .map(|f| score_unchecked(f.as_slice(), &priors.bank))
        .collect();

    let mut offsets = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &t in &lengths {
        offsets.push(start..start + t);
        start += t;
    }
    let traces: Vec<ScoreTrace> = offsets
        .par_iter()
        .zip(&dataset.videos)
        .map(|(range, video)| {
            let s_init = init[range.clone()].to_vec();
            let s_final = if config.enable_sgp {
                sgp_video(
                    &enhanced[range.clone()],
                    &visual[range.clone()],
                    &s_init,
                    &priors.bank,
                    &config.sgp,
                )?
                .final_scores
            } else {
                s_init.clone()
            };
            Ok(ScoreTrace {
                video_id: video.id.clone(),
                frame_scores: expand_and_smooth(&s_final, config.frames_per_clip, config.smooth_sigma_clips),
                clip_scores_init: s_init,
                clip_scores_final: s_final,
            })
        })
        .collect::<Result<_>>()?;

    let features = offsets.iter().map(|r| enhanced[r.clone()].to_vec()).collect();
    Ok(ScoredRun {
        traces,
        at_base_clips: counter.load(Ordering::Relaxed),
        features,
    })
}

/// Calibrates on synthetic plus test features, then scores the test set.
pub fn run_offline(
    dataset: &FeatureDataset,
    syn_normal: &[UnitVector],
    syn_abn: &[UnitVector],
    config: &PipelineConfig,
) -> Result<OfflineRun> {
    if dataset.videos.is_empty() {
        return Err(Error::EmptyInput("dataset videos"));
    }
    let offline = PipelineConfig {
        mode: Mode::Offline,
        ..*config
    };
    let priors = calibrate_priors(syn_normal, syn_abn, Some(dataset), &offline)?;
    let scored = score_dataset(dataset, &priors, &offline)?;
    Ok(OfflineRun { priors, scored })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OnlineScore {
    pub score: f64,
    /// Set when the clip coincided with the base point and got 0.5.
    pub at_base: bool,
}

/// Stateless per-clip scorer: centering at the synthetic mean plus the
/// likelihood-ratio score, with no cross-clip context.
#[derive(Debug, Clone)]
pub struct OnlineScorer {
    priors: CalibrationPriors,
}

impl OnlineScorer {
    pub fn new(priors: CalibrationPriors) -> Self {
        Self { priors }
    }

    pub fn priors(&self) -> &CalibrationPriors {
        &self.priors
    }

    pub fn score(&self, main: &[f64]) -> Result<OnlineScore> {
        if main.len() != self.priors.bank.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.priors.bank.dim(),
                found: main.len(),
            });
        }
        let f = normalize(main)?;
        match center(&self.priors.unified_mean, &f) {
            Ok(c) => Ok(OnlineScore {
                score: score_unchecked(c.as_slice(), &self.priors.bank),
                at_base: false,
            }),
            Err(Error::AtBasePoint) => Ok(OnlineScore {
                score: 0.5,
                at_base: true,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Scores clips one by one in arrival order.
pub fn run_online<I, V>(clip_stream: I, priors: &CalibrationPriors) -> impl Iterator<Item = Result<OnlineScore>> + '_
where
    I: IntoIterator<Item = V>,
    I::IntoIter: 'static,
    V: AsRef<[f64]>,
{
    let scorer = OnlineScorer::new(priors.clone());
    clip_stream.into_iter().map(move |clip| scorer.score(clip.as_ref()))
}

/// Online scores for every clip of a dataset, expanded to frames without
/// smoothing (a causal scorer cannot look ahead). The visual stream is not
/// read.
pub fn score_online_dataset(
    dataset: &FeatureDataset,
    priors: &CalibrationPriors,
    frames_per_clip: usize,
) -> Result<Vec<ScoreTrace>> {
    if dataset.dim != priors.bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: priors.bank.dim(),
            found: dataset.dim,
        });
    }
    let scorer = OnlineScorer::new(priors.clone());
    dataset
        .videos
        .par_iter()
        .map(|v| {
            let scores: Vec<f64> = v
                .main
                .chunks(dataset.dim)
                .map(|row| {
                    let row: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                    scorer.score(&row).map(|s| s.score)
                })
                .collect::<Result<_>>()?;
            Ok(ScoreTrace {
                video_id: v.id.clone(),
                frame_scores: expand_and_smooth(&scores, frames_per_clip, 0.0),
                clip_scores_init: scores.clone(),
                clip_scores_final: scores,
            })
        })
        .collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Normalized, truncated Gaussian kernel with standard deviation `sigma`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= z);
    k
}

/// Repeats each clip score over its frames and smooths with a Gaussian of
/// `sigma_clips` clips, reflecting at both ends (`d c b a | a b c d | d c b a`).
pub fn expand_and_smooth(clip_scores: &[f64], frames_per_clip: usize, sigma_clips: f64) -> Vec<f64> {
    let frames: Vec<f64> = clip_scores
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, frames_per_clip))
        .collect();
    if sigma_clips <= 0.0 || frames.is_empty() {
        return frames.into_iter().map(|s| s.clamp(0.0, 1.0)).collect();
    }
    let kernel = gaussian_kernel(sigma_clips * frames_per_clip as f64);
    let radius = (kernel.len() / 2) as isize;
    let n = frames.len();
    (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * frames[reflect(i + k as isize - radius, n)])
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect()
}
