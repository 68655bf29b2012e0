//! On-disk formats: binary features, layer stacks, priors and banks, CSV
//! labels and scores, and key=value configs.
//!
//! Binary files are little-endian and start with a 4-byte magic and a u32
//! version. Features are f32 on disk; means and prototypes are f64 so a
//! calibrate/infer round trip reproduces scores bit for bit.

use crate::dataset::{FeatureDataset, FrameLabels, VideoFeatures};
use crate::dlsp::LayerSaliency;
use crate::error::{Error, Result};
use crate::eval::{GridAxis, SweepRow};
use crate::pipeline::{PipelineConfig, ScoreTrace, SetError};
use crate::prototypes::PrototypeBank;
use crate::sphere::{normalize, UnitVector};
use std::fmt::Write as _;
use std::path::Path;

pub const FEATURES_MAGIC: [u8; 4] = *b"GVF1";
pub const LAYERS_MAGIC: [u8; 4] = *b"GVFL";
pub const PRIORS_MAGIC: [u8; 4] = *b"GVPR";
pub const BANK_MAGIC: [u8; 4] = *b"GVPB";
pub const FORMAT_VERSION: u32 = 1;
const STREAM_COUNT: u32 = 2;

/// Video ids holding the two classes in synthetic and layer files.
pub const NORMAL_ID: &str = "normal";
pub const ABNORMAL_ID: &str = "abnormal";

/// Stored unit vectors may drift this far from norm one.
/// Stored unit vectors are f32; their norm may drift by f32 rounding only.
const STORED_NORM_TOL: f64 = 1e-5;

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedFile {
                offset: self.pos as u64,
                needed: n as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(&expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(4).ok_or(Error::TruncatedFile {
            offset: start as u64,
            needed: u64::MAX,
        })?)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(i, b)| {
                let x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFiniteValue {
                        offset: (start + 4 * i) as u64,
                    })
                }
            })
            .collect()
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let bytes = self.take(n.checked_mul(8).ok_or(Error::TruncatedFile {
            offset: start as u64,
            needed: u64::MAX,
        })?)?;
        bytes
            .chunks_exact(8)
            .enumerate()
            .map(|(i, b)| {
                let x = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFiniteValue {
                        offset: (start + 8 * i) as u64,
                    })
                }
            })
            .collect()
    }

    /// An f32 unit vector, renormalized in f64.
    fn unit(&mut self, dim: usize) -> Result<UnitVector> {
        let at = self.pos;
        let xs: Vec<f64> = self.f32s(dim)?.into_iter().map(f64::from).collect();
        let n = xs.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > STORED_NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "vector at offset {at} has norm {n}, expected 1"
            )));
        }
        normalize(&xs)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::InvalidParameter(format!(
                "{} trailing bytes after offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::InvalidParameter(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4]) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

/// Narrows to f32, the on-disk precision for every vector.
fn put_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    xs.iter()
        .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes()));
}

fn put_videos(out: &mut Vec<u8>, ds: &FeatureDataset) -> Result<()> {
    ds.validate()?;
    put_u32(out, ds.videos.len())?;
    for v in &ds.videos {
        put_u32(out, v.id.len())?;
        out.extend_from_slice(v.id.as_bytes());
        put_u32(out, v.clips(ds.dim))?;
        for x in v.main.iter().chain(&v.visual) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(())
}

fn get_videos(r: &mut Reader, dim: usize) -> Result<FeatureDataset> {
    let n = r.count()?;
    let mut videos = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = r.count()?;
        let at = r.pos;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::InvalidParameter(format!("video name at offset {at} is not UTF-8")))?
            .to_string();
        let t = r.count()?;
        if t == 0 {
            return Err(Error::InvalidParameter(format!("video {id:?} has no clips")));
        }
        let main = r.f32s(t * dim)?;
        let visual = r.f32s(t * dim)?;
        videos.push(VideoFeatures { id, main, visual });
    }
    FeatureDataset::new(dim, videos)
}

fn get_dim_and_streams(r: &mut Reader) -> Result<usize> {
    let dim = r.count()?;
    let streams = r.u32()?;
    if streams != STREAM_COUNT {
        return Err(Error::InvalidParameter(format!(
            "expected {STREAM_COUNT} streams, found {streams}"
        )));
    }
    Ok(dim)
}

pub fn encode_features(ds: &FeatureDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_header(&mut out, FEATURES_MAGIC);
    put_u32(&mut out, ds.dim)?;
    put_u32(&mut out, STREAM_COUNT as usize)?;
    put_videos(&mut out, ds)?;
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURES_MAGIC)?;
    let dim = get_dim_and_streams(&mut r)?;
    let ds = get_videos(&mut r, dim)?;
    r.finish()?;
    Ok(ds)
}

pub fn write_features(ds: &FeatureDataset, path: &Path) -> Result<()> {
    write_bytes(path, &encode_features(ds)?)
}

pub fn read_features(path: &Path) -> Result<FeatureDataset> {
    decode_features(&read_bytes(path)?)
}

/// Multi-layer file: one video list per layer, all sharing one dimension.
pub fn encode_layers(layers: &[FeatureDataset]) -> Result<Vec<u8>> {
    let dim = layers.first().ok_or(Error::EmptyInput("layers"))?.dim;
    let mut out = Vec::new();
    put_header(&mut out, LAYERS_MAGIC);
    put_u32(&mut out, dim)?;
    put_u32(&mut out, STREAM_COUNT as usize)?;
    put_u32(&mut out, layers.len())?;
    for layer in layers {
        if layer.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: layer.dim,
            });
        }
        put_videos(&mut out, layer)?;
    }
    Ok(out)
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<FeatureDataset>> {
    let mut r = Reader::new(bytes);
    r.magic(LAYERS_MAGIC)?;
    let dim = get_dim_and_streams(&mut r)?;
    let n = r.count()?;
    let layers = (0..n).map(|_| get_videos(&mut r, dim)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(layers)
}

pub fn write_layers(layers: &[FeatureDataset], path: &Path) -> Result<()> {
    write_bytes(path, &encode_layers(layers)?)
}

pub fn read_layers(path: &Path) -> Result<Vec<FeatureDataset>> {
    decode_layers(&read_bytes(path)?)
}

/// Normal and anomalous main features of a two-class file, taken from the
/// videos named [`NORMAL_ID`] and [`ABNORMAL_ID`].
pub fn split_classes(ds: &FeatureDataset) -> Result<(Vec<UnitVector>, Vec<UnitVector>)> {
    let class = |id: &'static str| -> Result<Vec<UnitVector>> {
        let mut out = Vec::new();
        for v in ds.videos.iter().filter(|v| v.id == id) {
            out.extend(ds.unit_rows(&v.main)?);
        }
        if out.is_empty() {
            return Err(Error::EmptyInput(id));
        }
        Ok(out)
    };
    Ok((class(NORMAL_ID)?, class(ABNORMAL_ID)?))
}

/// Two-class file from normal and anomalous features; the visual stream
/// repeats the main one.
pub fn class_dataset(normal: &[UnitVector], abnormal: &[UnitVector]) -> Result<FeatureDataset> {
    let dim = normal.first().ok_or(Error::EmptyInput(NORMAL_ID))?.dim();
    FeatureDataset::from_units(
        dim,
        vec![
            (NORMAL_ID.to_string(), normal.to_vec(), normal.to_vec()),
            (ABNORMAL_ID.to_string(), abnormal.to_vec(), abnormal.to_vec()),
        ],
    )
}

/// Centering base points: the unified mean and the visual mean.
pub fn encode_priors(unified_mean: &UnitVector, visual_mean: &UnitVector) -> Result<Vec<u8>> {
    if unified_mean.dim() != visual_mean.dim() {
        return Err(Error::DimensionMismatch {
            expected: unified_mean.dim(),
            found: visual_mean.dim(),
        });
    }
    let mut out = Vec::new();
    put_header(&mut out, PRIORS_MAGIC);
    put_u32(&mut out, unified_mean.dim())?;
    put_f32s(&mut out, unified_mean.as_slice());
    put_f32s(&mut out, visual_mean.as_slice());
    Ok(out)
}

pub fn decode_priors(bytes: &[u8]) -> Result<(UnitVector, UnitVector)> {
    let mut r = Reader::new(bytes);
    r.magic(PRIORS_MAGIC)?;
    let dim = r.count()?;
    let unified = r.unit(dim)?;
    let visual = r.unit(dim)?;
    r.finish()?;
    Ok((unified, visual))
}

pub fn encode_bank(bank: &PrototypeBank) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_header(&mut out, BANK_MAGIC);
    put_u32(&mut out, bank.dim())?;
    put_u32(&mut out, bank.norm_protos().len())?;
    put_u32(&mut out, bank.abn_protos().len())?;
    out.extend_from_slice(&bank.kappa().to_le_bytes());
    for p in bank.norm_protos().iter().chain(bank.abn_protos()) {
        put_f32s(&mut out, p.as_slice());
    }
    Ok(out)
}

pub fn decode_bank(bytes: &[u8]) -> Result<PrototypeBank> {
    let mut r = Reader::new(bytes);
    r.magic(BANK_MAGIC)?;
    let dim = r.count()?;
    let (k_n, k_a) = (r.count()?, r.count()?);
    let kappa = r.f64s(1)?[0];
    let norm = (0..k_n).map(|_| r.unit(dim)).collect::<Result<Vec<_>>>()?;
    let abn = (0..k_a).map(|_| r.unit(dim)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    PrototypeBank::new(norm, abn, kappa)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(Error::InvalidParameter(format!(
            "video id {id:?} cannot be written to CSV"
        )));
    }
    Ok(())
}

pub const LABELS_HEADER: &str = "video_id,frame_index,label";
pub const SCORES_HEADER: &str = "video_id,frame_index,score";

pub fn format_labels(labels: &FrameLabels) -> Result<String> {
    let mut s = format!("{LABELS_HEADER}\n");
    for (id, frames) in &labels.videos {
        check_id(id)?;
        for (i, &l) in frames.iter().enumerate() {
            writeln!(s, "{id},{i},{}", u8::from(l)).expect("string write");
        }
    }
    Ok(s)
}

/// Rows of a three-column CSV, checked against `header`; frame indices must
/// run 0, 1, 2, ... within each video.
fn parse_rows<T>(text: &str, header: &str, mut value: impl FnMut(&str) -> Option<T>) -> Result<Vec<(String, Vec<T>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == header => {}
        _ => {
            return Err(Error::ParseError {
                line: 1,
                message: format!("expected header {header:?}"),
            })
        }
    }
    let mut out: Vec<(String, Vec<T>)> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end();
        if raw.is_empty() {
            continue;
        }
        let bad = |message: String| Error::ParseError { line, message };
        let mut cols = raw.split(',');
        let (Some(id), Some(idx), Some(v), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad("expected 3 columns".into()));
        };
        let idx: usize = idx.parse().map_err(|_| bad(format!("bad frame index {idx:?}")))?;
        let v = value(v).ok_or_else(|| bad(format!("bad value {v:?}")))?;
        if out.last().is_none_or(|(last, _)| last != id) {
            if out.iter().any(|(seen, _)| seen == id) {
                return Err(bad(format!("rows of video {id:?} are not contiguous")));
            }
            out.push((id.to_string(), Vec::new()));
        }
        let frames = &mut out.last_mut().expect("pushed").1;
        if idx != frames.len() {
            return Err(bad(format!("expected frame index {}, found {idx}", frames.len())));
        }
        frames.push(v);
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> Result<FrameLabels> {
    let rows = parse_rows(text, LABELS_HEADER, |v| match v {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    })?;
    Ok(FrameLabels {
        videos: rows.into_iter().collect(),
    })
}

pub fn write_labels(labels: &FrameLabels, path: &Path) -> Result<()> {
    write_bytes(path, format_labels(labels)?.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<FrameLabels> {
    parse_labels(&String::from_utf8_lossy(&read_bytes(path)?))
}

/// Frame scores in trace order; values use the shortest representation
/// that parses back to the same f64.
pub fn format_scores(traces: &[ScoreTrace]) -> Result<String> {
    let mut s = format!("{SCORES_HEADER}\n");
    for t in traces {
        check_id(&t.video_id)?;
        for (i, x) in t.frame_scores.iter().enumerate() {
            writeln!(s, "{},{i},{x}", t.video_id).expect("string write");
        }
    }
    Ok(s)
}

/// Traces carrying frame scores only.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreTrace>> {
    let rows = parse_rows(text, SCORES_HEADER, |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))?;
    Ok(rows
        .into_iter()
        .map(|(video_id, frame_scores)| ScoreTrace {
            video_id,
            clip_scores_init: Vec::new(),
            clip_scores_final: Vec::new(),
            frame_scores,
        })
        .collect())
}

pub fn write_scores(traces: &[ScoreTrace], path: &Path) -> Result<()> {
    write_bytes(path, format_scores(traces)?.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreTrace>> {
    parse_scores(&String::from_utf8_lossy(&read_bytes(path)?))
}

/// Parses `key = value` lines over the defaults. `#` starts a comment. A
/// `preset` line is applied before every other key wherever it appears.
pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let mut entries = Vec::new();
    let mut preset: Option<(usize, &str)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ParseError {
                line,
                message: format!("expected key=value, found {content:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "preset" {
            if preset.is_some() {
                return Err(Error::ParseError {
                    line,
                    message: "preset given more than once".into(),
                });
            }
            preset = Some((line, value));
        } else {
            entries.push((line, key, value));
        }
    }
    let mut config = PipelineConfig::default();
    for (line, key, value) in preset.map(|(l, v)| (l, "preset", v)).into_iter().chain(entries) {
        config.set(key, value).map_err(|e| match e {
            SetError::UnknownKey(key) => Error::UnknownKey { key, line },
            SetError::BadValue(v) => Error::ParseError {
                line,
                message: format!("bad value {v:?} for {key}"),
            },
        })?;
    }
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    parse_config_str(&String::from_utf8_lossy(&read_bytes(path)?))
}

/// Sweep axes, one `key = v1, v2, ...` line each; `#` starts a comment.
pub fn parse_grid_str(text: &str) -> Result<Vec<GridAxis>> {
    let mut axes: Vec<GridAxis> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let bad = |message: String| Error::ParseError { line, message };
        let (key, values) = content
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key = values, found {content:?}")))?;
        let key = key.trim();
        if !PipelineConfig::KEYS.contains(&key) {
            return Err(Error::UnknownKey { key: key.into(), line });
        }
        if axes.iter().any(|a| a.key == key) {
            return Err(bad(format!("key {key:?} repeated")));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(bad("empty value".into()));
        }
        axes.push(GridAxis {
            key: key.into(),
            values,
        });
    }
    if axes.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    Ok(axes)
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    if let Some(first) = rows.first() {
        for (k, _) in &first.settings {
            write!(s, "{k},").expect("string write");
        }
    }
    s.push_str("auc,ap\n");
    for r in rows {
        for (_, v) in &r.settings {
            write!(s, "{v},").expect("string write");
        }
        writeln!(s, "{},{}", r.metrics.auc, r.metrics.ap).expect("string write");
    }
    s
}

pub const SALIENCY_HEADER: &str = "layer,kl,ldr,entropy,z_kl,z_ldr,z_entropy,composite";

pub fn format_saliency(saliency: &LayerSaliency) -> String {
    let mut s = format!("{SALIENCY_HEADER}\n");
    for (i, r) in saliency.layers.iter().enumerate() {
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{}",
            r.kl, r.ldr, r.entropy, r.z_kl, r.z_ldr, r.z_entropy, r.composite
        )
        .expect("string write");
    }
    s
}
