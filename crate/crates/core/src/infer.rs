//! Frame-sequence inference, temporal vote smoothing and latency timing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::dataset::load_image;
use crate::error::{Error, Result};
use crate::model::{argmax, predict_proba, ModelSpec};
use crate::param::ParamSet;
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: usize = 9;

/// Centered majority vote over a window of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalSmoother {
    window: usize,
}

impl Default for TemporalSmoother {
    fn default() -> Self {
        TemporalSmoother { window: DEFAULT_WINDOW }
    }
}

impl TemporalSmoother {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("smoothing window {window} must be odd and positive")));
        }
        Ok(TemporalSmoother { window })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Label at `t` is the most frequent label among valid frames within
    /// `window / 2` of `t` (truncated at the ends). A tie goes to frame
    /// `t`'s own label when it is among the leaders, else to the lowest
    /// class index. Invalid frames (`None`) do not vote; they receive the
    /// vote of their neighbours, or `None` if there are none.
    pub fn smooth(&self, labels: &[Option<usize>]) -> Vec<Option<usize>> {
        let half = self.window / 2;
        let classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0usize; classes];
        (0..labels.len())
            .map(|t| {
                counts.fill(0);
                let lo = t.saturating_sub(half);
                let hi = (t + half).min(labels.len() - 1);
                for l in labels[lo..=hi].iter().flatten() {
                    counts[*l] += 1;
                }
                let best = *counts.iter().max()?;
                if best == 0 {
                    return None;
                }
                match labels[t] {
                    Some(c) if counts[c] == best => Some(c),
                    _ => counts.iter().position(|&n| n == best),
                }
            })
            .collect()
    }
}

/// Inclusive frame range sharing one smoothed label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: Option<usize>,
}

/// Merges runs of equal labels. The segments partition `0..labels.len()`.
pub fn segments(labels: &[Option<usize>]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &class) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.class == class => s.end = t,
            _ => out.push(Segment { start: t, end: t, class }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePrediction {
    pub frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Per-frame argmax; `None` for an unreadable frame.
    pub label: Option<usize>,
    pub smoothed: Option<usize>,
    pub probabilities: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Milliseconds per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles of the samples.
    pub fn from_samples(samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::InvalidArgument("no latency samples".into()));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Ok(LatencyStats {
            iterations: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub per_frame: Vec<FramePrediction>,
    pub segments: Vec<Segment>,
    /// Forward latency over the valid frames; `None` when no frame was valid.
    pub timing: Option<LatencyStats>,
}

impl InferenceResult {
    /// One JSON object per frame, newline terminated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for f in &self.per_frame {
            out.push_str(&serde_json::to_string(f).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

/// Classifies already decoded frames (`Err` marks an unreadable frame).
pub fn infer_frames(
    spec: &ModelSpec,
    params: &ParamSet<f32>,
    frames: Vec<Result<Tensor<f32>>>,
    smoother: &TemporalSmoother,
) -> Result<InferenceResult> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to classify".into()));
    }
    let (h, w) = spec.input_size;
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut times = Vec::new();
    for (i, frame) in frames.into_iter().enumerate() {
        let mut pred = FramePrediction {
            frame: i,
            path: None,
            label: None,
            smoothed: None,
            probabilities: None,
            error: None,
        };
        match frame {
            Ok(img) => {
                let batch = img.reshape([1, h, w, 3])?;
                let start = Instant::now();
                let probs = predict_proba(spec, params, &batch)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
                pred.label = Some(argmax(probs.data()));
                pred.probabilities = Some(probs.into_data());
            }
            Err(e) => pred.error = Some(e.to_string()),
        }
        per_frame.push(pred);
    }
    let labels: Vec<Option<usize>> = per_frame.iter().map(|f| f.label).collect();
    let smoothed = smoother.smooth(&labels);
    for (f, s) in per_frame.iter_mut().zip(&smoothed) {
        f.smoothed = *s;
    }
    Ok(InferenceResult {
        per_frame,
        segments: segments(&smoothed),
        timing: if times.is_empty() { None } else { Some(LatencyStats::from_samples(&times)?) },
    })
}

/// Loads each frame at the model's input size, then classifies and smooths.
pub fn infer_sequence(
    spec: &ModelSpec,
    params: &ParamSet<f32>,
    frames: &[PathBuf],
    smoother: &TemporalSmoother,
) -> Result<InferenceResult> {
    let loaded = frames.iter().map(|p| load_image(p, spec.input_size)).collect();
    let mut result = infer_frames(spec, params, loaded, smoother)?;
    for (f, p) in result.per_frame.iter_mut().zip(frames) {
        f.path = Some(p.clone());
    }
    Ok(result)
}

pub const WARMUP_ITERATIONS: usize = 3;
pub const REFERENCE_LINE: &str = "reference: <5 ms/frame (GPU)";

/// Times single-frame forward passes on a fixed input after discarding
/// `WARMUP_ITERATIONS` runs.
pub fn bench_latency(spec: &ModelSpec, params: &ParamSet<f32>, iterations: usize) -> Result<LatencyStats> {
    if iterations < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 iterations, got {iterations}")));
    }
    let (h, w) = spec.input_size;
    let input = Tensor::from_fn([1, h, w, 3], |i| ((i * 37) % 101) as f32 / 100.0);
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..WARMUP_ITERATIONS + iterations {
        let start = Instant::now();
        std::hint::black_box(predict_proba(spec, params, &input)?);
        if i >= WARMUP_ITERATIONS {
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    LatencyStats::from_samples(&samples)
}

/// Header plus one data row.
pub fn latency_csv(spec: &ModelSpec, stats: &LatencyStats) -> String {
    format!(
        "backbone,head,iterations,mean_ms,p50_ms,p95_ms\n{},{},{},{:.4},{:.4},{:.4}\n",
        spec.backbone_name,
        spec.head.as_str(),
        stats.iterations,
        stats.mean_ms,
        stats.p50_ms,
        stats.p95_ms
    )
}

/// Writes `contents` to `path`, naming the path on failure.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
