//! On-the-fly refinement: embed overlapped chunks of the incoming feature
//! stream, compare them to a reference speaker embedding, scale and clip the
//! similarity into [0, 1], upsample it to frame rate, and stack it under the
//! repeated reference embedding as a conditioning sequence.

use std::collections::VecDeque;

use crate::dsp::FeatureMatrix;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{self, EncoderWeights};
use crate::par;

/// Chunking layout: windows of `chunk_len` frames with 50% overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkConfig {
    pub chunk_len: usize,
}

impl Default for ChunkConfig {
    /// One second of frames at the default 10 ms hop.
    fn default() -> Self {
        ChunkConfig { chunk_len: 100 }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_len < 2 {
            return Err(Error::Config("chunk_len must be >= 2 frames".into()));
        }
        if self.chunk_len % 2 != 0 {
            return Err(Error::Config(format!(
                "chunk_len ({}) must be even so the 50% hop is integral",
                self.chunk_len
            )));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.chunk_len / 2
    }
}

/// How the raw similarity is mapped into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimilarityActivation {
    /// min(1, max(0, alpha * v)) — the default.
    ScaleClip,
    /// sigmoid(alpha * v + beta); kept behind a config switch.
    Sigmoid { beta: f64 },
}

/// Which encoder embeds the incoming chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderMode {
    /// The tiny distilled encoder.
    Light,
    /// A reference-space embedder standing in for the heavy encoder.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementConfig {
    pub alpha: f64,
    pub mode: EmbedderMode,
    pub activation: SimilarityActivation,
    /// Linearly interpolate between chunk anchors instead of step-holding.
    /// Offline only.
    pub linear_upsample: bool,
}

impl RefinementConfig {
    /// Scaling defaults: alpha 6 with the tiny embedder, alpha 2 with the
    /// reference-space one.
    pub fn for_mode(mode: EmbedderMode) -> Self {
        let alpha = match mode {
            EmbedderMode::Light => 6.0,
            EmbedderMode::Oracle => 2.0,
        };
        RefinementConfig {
            alpha,
            mode,
            activation: SimilarityActivation::ScaleClip,
            linear_upsample: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "scaling factor alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn activate(&self, v: f64) -> f64 {
        match self.activation {
            SimilarityActivation::ScaleClip => (self.alpha * v).clamp(0.0, 1.0),
            SimilarityActivation::Sigmoid { beta } => {
                1.0 / (1.0 + (-(self.alpha * v + beta)).exp())
            }
        }
    }
}

/// Embeds one `in_dim x chunk_len` feature window.
pub trait ChunkEmbedder: Sync {
    fn embed_dim(&self) -> usize;
    fn embed_chunk(&self, chunk: &Mat) -> Result<Embedding>;
}

/// The distilled encoder as a chunk embedder.
pub struct TinyEmbedder {
    weights: EncoderWeights,
}

impl TinyEmbedder {
    pub fn new(weights: EncoderWeights) -> Self {
        TinyEmbedder { weights }
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }
}

impl ChunkEmbedder for TinyEmbedder {
    fn embed_dim(&self) -> usize {
        self.weights.cfg.embed_dim
    }

    fn embed_chunk(&self, chunk: &Mat) -> Result<Embedding> {
        Embedding::from_normalized_f64(&nn::forward(&self.weights, chunk)?)
    }
}

/// Embeddings of the overlapped chunks, in stream order.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub embeddings: Vec<Embedding>,
    pub chunk_len: usize,
}

impl EmbeddingSequence {
    pub fn k(&self) -> usize {
        self.embeddings.len()
    }
}

/// Window start offsets: 0, hop, 2*hop, ... while a full window fits.
/// With chunk_len | total this yields 2*total/chunk_len - 1 windows.
pub fn chunk_starts(total_frames: usize, cfg: &ChunkConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if total_frames < cfg.chunk_len {
        return Err(Error::TooShort(format!(
            "{total_frames} frames cannot fill one {}-frame chunk",
            cfg.chunk_len
        )));
    }
    Ok((0..=(total_frames - cfg.chunk_len))
        .step_by(cfg.hop())
        .collect())
}

/// Embed every chunk of a feature matrix.
pub fn chunk_embeddings(
    features: &FeatureMatrix,
    embedder: &dyn ChunkEmbedder,
    cfg: &ChunkConfig,
) -> Result<EmbeddingSequence> {
    let starts = chunk_starts(features.frames(), cfg)?;
    let embeddings: Vec<Result<Embedding>> = par::map(&starts, |&s| {
        embedder.embed_chunk(&features.data.col_slice(s, cfg.chunk_len))
    });
    let embeddings = embeddings.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EmbeddingSequence {
        embeddings,
        chunk_len: cfg.chunk_len,
    })
}

/// Utterance-level embedding: mean of the chunk embeddings, renormalized.
pub fn utterance_embedding(
    features: &FeatureMatrix,
    embedder: &dyn ChunkEmbedder,
    cfg: &ChunkConfig,
) -> Result<Embedding> {
    let seq = chunk_embeddings(features, embedder, cfg)?;
    let dim = embedder.embed_dim();
    let mut mean = vec![0.0f64; dim];
    for e in &seq.embeddings {
        for (m, &v) in mean.iter_mut().zip(e.values()) {
            *m += v as f64;
        }
    }
    let k = seq.k() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    let (unit, _) = crate::nn::ops::l2_normalize(&mean)?;
    Embedding::from_normalized_f64(&unit)
}

/// Cosine of the reference against each chunk embedding.
pub fn similarity_track(reference: &Embedding, seq: &EmbeddingSequence) -> Result<Vec<f64>> {
    if !reference.is_normalized() {
        return Err(Error::Numeric("reference embedding is not normalized".into()));
    }
    seq.embeddings.iter().map(|e| reference.dot(e)).collect()
}

/// Elementwise min(1, max(0, alpha * v)).
pub fn scale_clip(values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!(
            "scaling factor alpha must be positive, got {alpha}"
        )));
    }
    Ok(values.iter().map(|&v| (alpha * v).clamp(0.0, 1.0)).collect())
}

/// Chunk index whose value frame `t` takes: the first chunk containing `t`,
/// i.e. the causally earliest one to complete. Clamped to the last chunk for
/// the trailing remainder.
fn frame_chunk_index(t: usize, chunk_len: usize, hop: usize, k: usize) -> usize {
    let raw = if t < chunk_len {
        0
    } else {
        (t - chunk_len) / hop + 1
    };
    raw.min(k - 1)
}

/// Step-hold upsampling of per-chunk values to per-frame values of length
/// `total_frames`.
pub fn upsample_pad(chunk_values: &[f64], total_frames: usize, cfg: &ChunkConfig) -> Vec<f64> {
    let k = chunk_values.len();
    debug_assert!(k >= 1);
    (0..total_frames)
        .map(|t| chunk_values[frame_chunk_index(t, cfg.chunk_len, cfg.hop(), k)])
        .collect()
}

/// Linear interpolation between chunk anchors (window centers), clamped at
/// the stream edges.
pub fn upsample_linear(chunk_values: &[f64], total_frames: usize, cfg: &ChunkConfig) -> Vec<f64> {
    let k = chunk_values.len();
    let anchor = |idx: usize| (idx * cfg.hop() + cfg.chunk_len / 2) as f64;
    (0..total_frames)
        .map(|t| {
            let tf = t as f64;
            if k == 1 || tf <= anchor(0) {
                chunk_values[0]
            } else if tf >= anchor(k - 1) {
                chunk_values[k - 1]
            } else {
                let idx = ((tf - anchor(0)) / cfg.hop() as f64).floor() as usize;
                let idx = idx.min(k - 2);
                let w = (tf - anchor(idx)) / (anchor(idx + 1) - anchor(idx));
                chunk_values[idx] * (1.0 - w) + chunk_values[idx + 1] * w
            }
        })
        .collect()
}

/// `(d_E + 1) x T` conditioning: the reference embedding repeated over time
/// with the similarity track as the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSequence {
    pub data: Mat,
    pub embed_dim: usize,
}

impl ConditioningSequence {
    pub fn frames(&self) -> usize {
        self.data.cols()
    }
}

pub fn assemble_conditioning(
    reference: &Embedding,
    track: &[f64],
) -> Result<ConditioningSequence> {
    if track.is_empty() {
        return Err(Error::Shape("similarity track is empty".into()));
    }
    let d = reference.dim();
    let t_len = track.len();
    let mut data = Mat::zeros(d + 1, t_len);
    for (r, &v) in reference.values().iter().enumerate() {
        let row = data.row_mut(r);
        let vv = v as f64;
        for x in row.iter_mut() {
            *x = vv;
        }
    }
    data.row_mut(d).copy_from_slice(track);
    Ok(ConditioningSequence {
        data,
        embed_dim: d,
    })
}

/// Offline refinement output (per-frame tracks plus the conditioning stack).
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub conditioning: ConditioningSequence,
}

/// Whole-utterance refinement over precomputed features.
pub fn refine_offline(
    features: &FeatureMatrix,
    reference: &Embedding,
    embedder: &dyn ChunkEmbedder,
    chunk_cfg: &ChunkConfig,
    refine_cfg: &RefinementConfig,
) -> Result<RefineOutput> {
    refine_cfg.validate()?;
    if reference.dim() != embedder.embed_dim() {
        return Err(Error::Shape(format!(
            "reference embedding has {} dims, embedder produces {}",
            reference.dim(),
            embedder.embed_dim()
        )));
    }
    let seq = chunk_embeddings(features, embedder, chunk_cfg)?;
    let per_chunk = similarity_track(reference, &seq)?;
    let raw = if refine_cfg.linear_upsample {
        upsample_linear(&per_chunk, features.frames(), chunk_cfg)
    } else {
        upsample_pad(&per_chunk, features.frames(), chunk_cfg)
    };
    let scaled: Vec<f64> = raw.iter().map(|&v| refine_cfg.activate(v)).collect();
    let conditioning = assemble_conditioning(reference, &scaled)?;
    Ok(RefineOutput {
        raw,
        scaled,
        conditioning,
    })
}

/// One finalized frame of streaming output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: usize,
    pub raw: f64,
    pub scaled: f64,
}

/// Incremental refinement over a stream of feature columns.
///
/// A frame's output is final once the first chunk containing it completes,
/// giving a worst-case algorithmic latency of one chunk. The emitted tracks
/// are bit-identical to [`refine_offline`] on the same columns.
pub struct StreamRefiner<'a> {
    embedder: &'a dyn ChunkEmbedder,
    reference: Embedding,
    chunk_cfg: ChunkConfig,
    refine_cfg: RefinementConfig,
    window: VecDeque<Vec<f64>>,
    frames_seen: usize,
    chunk_values: Vec<f64>,
    emitted: usize,
    finished: bool,
}

impl<'a> StreamRefiner<'a> {
    pub fn new(
        embedder: &'a dyn ChunkEmbedder,
        reference: Embedding,
        chunk_cfg: ChunkConfig,
        refine_cfg: RefinementConfig,
    ) -> Result<Self> {
        chunk_cfg.validate()?;
        refine_cfg.validate()?;
        if refine_cfg.linear_upsample {
            return Err(Error::Config(
                "linear upsampling needs future chunks; not available in streaming mode".into(),
            ));
        }
        if !reference.is_normalized() {
            return Err(Error::Numeric("reference embedding is not normalized".into()));
        }
        if reference.dim() != embedder.embed_dim() {
            return Err(Error::Shape(format!(
                "reference embedding has {} dims, embedder produces {}",
                reference.dim(),
                embedder.embed_dim()
            )));
        }
        Ok(StreamRefiner {
            embedder,
            reference,
            chunk_cfg,
            refine_cfg,
            window: VecDeque::new(),
            frames_seen: 0,
            chunk_values: Vec::new(),
            emitted: 0,
            finished: false,
        })
    }

    pub fn reference(&self) -> &Embedding {
        &self.reference
    }

    /// Feed one feature column; returns frames that became final.
    pub fn push_frame(&mut self, column: &[f64]) -> Result<Vec<TrackPoint>> {
        assert!(!self.finished, "push after finish");
        self.window.push_back(column.to_vec());
        if self.window.len() > self.chunk_cfg.chunk_len {
            self.window.pop_front();
        }
        self.frames_seen += 1;

        let t_chunk = self.chunk_cfg.chunk_len;
        if self.frames_seen >= t_chunk && (self.frames_seen - t_chunk) % self.chunk_cfg.hop() == 0
        {
            let dim = self.window[0].len();
            let chunk = Mat::from_fn(dim, t_chunk, |r, c| self.window[c][r]);
            let emb = self.embedder.embed_chunk(&chunk)?;
            self.chunk_values.push(self.reference.dot(&emb)?);
        }
        Ok(self.drain(false))
    }

    /// Flush trailing frames once the stream ends.
    pub fn finish(&mut self) -> Result<Vec<TrackPoint>> {
        self.finished = true;
        if self.chunk_values.is_empty() {
            return Err(Error::TooShort(format!(
                "{} frames cannot fill one {}-frame chunk",
                self.frames_seen, self.chunk_cfg.chunk_len
            )));
        }
        Ok(self.drain(true))
    }

    fn drain(&mut self, end_of_stream: bool) -> Vec<TrackPoint> {
        let k = self.chunk_values.len();
        if k == 0 {
            return Vec::new();
        }
        let (t_chunk, hop) = (self.chunk_cfg.chunk_len, self.chunk_cfg.hop());
        let mut out = Vec::new();
        while self.emitted < self.frames_seen {
            let t = self.emitted;
            // index of the first chunk containing frame t, unclamped
            let want = if t < t_chunk { 0 } else { (t - t_chunk) / hop + 1 };
            if want >= k && !end_of_stream {
                break;
            }
            let raw = self.chunk_values[want.min(k - 1)];
            out.push(TrackPoint {
                frame: t,
                raw,
                scaled: self.refine_cfg.activate(raw),
            });
            self.emitted += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderConfig;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cfg4() -> ChunkConfig {
        ChunkConfig { chunk_len: 4 }
    }

    #[test]
    fn chunk_count_follows_overlap_formula() {
        // total = 10 * chunk -> 2*10 - 1 = 19 windows
        let cfg = cfg4();
        assert_eq!(chunk_starts(40, &cfg).unwrap().len(), 19);
        assert_eq!(chunk_starts(4, &cfg).unwrap().len(), 1);
        assert_eq!(chunk_starts(6, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn short_input_is_refused() {
        assert!(matches!(
            chunk_starts(3, &cfg4()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn odd_chunk_len_is_rejected() {
        let cfg = ChunkConfig { chunk_len: 5 };
        assert!(matches!(chunk_starts(10, &cfg), Err(Error::Config(_))));
    }

    struct MeanEmbedder {
        dim: usize,
    }

    impl ChunkEmbedder for MeanEmbedder {
        fn embed_dim(&self) -> usize {
            self.dim
        }

        fn embed_chunk(&self, chunk: &Mat) -> Result<Embedding> {
            let t = chunk.cols() as f64;
            let mean: Vec<f64> = (0..chunk.rows())
                .map(|r| chunk.row(r).iter().sum::<f64>() / t)
                .collect();
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            Embedding::from_normalized_f64(
                &mean.iter().map(|v| v / norm).collect::<Vec<_>>(),
            )
        }
    }

    #[test]
    fn similarity_track_endpoints() {
        let reference = Embedding::new(vec![1.0, 0.0], true).unwrap();
        let same = Embedding::new(vec![1.0, 0.0], true).unwrap();
        let orth = Embedding::new(vec![0.0, 1.0], true).unwrap();
        let seq = EmbeddingSequence {
            embeddings: vec![same, orth],
            chunk_len: 4,
        };
        let track = similarity_track(&reference, &seq).unwrap();
        assert_eq!(track[0], 1.0);
        assert_eq!(track[1], 0.0);
    }

    #[test]
    fn similarity_track_matches_dot_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        let mk = |rng: &mut StdRng| {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Embedding::from_normalized_f64(&v.iter().map(|x| x / n).collect::<Vec<_>>()).unwrap()
        };
        let reference = mk(&mut rng);
        let e = mk(&mut rng);
        let seq = EmbeddingSequence {
            embeddings: vec![e.clone()],
            chunk_len: 4,
        };
        let track = similarity_track(&reference, &seq).unwrap();
        let want: f64 = reference
            .values()
            .iter()
            .zip(e.values())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert_eq!(track[0], want);
    }

    #[test]
    fn similarity_track_rejects_dim_mismatch() {
        let reference = Embedding::new(vec![1.0, 0.0], true).unwrap();
        let seq = EmbeddingSequence {
            embeddings: vec![Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap()],
            chunk_len: 4,
        };
        assert!(matches!(
            similarity_track(&reference, &seq),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn scale_clip_reference_points() {
        assert_eq!(scale_clip(&[0.3], 2.0).unwrap()[0], 0.6);
        assert_eq!(scale_clip(&[0.25], 6.0).unwrap()[0], 1.0);
        assert_eq!(scale_clip(&[-0.4], 2.0).unwrap()[0], 0.0);
        assert_eq!(scale_clip(&[-0.4], 6.0).unwrap()[0], 0.0);
    }

    #[test]
    fn scale_clip_rejects_non_positive_alpha() {
        assert!(matches!(scale_clip(&[0.5], 0.0), Err(Error::Config(_))));
        assert!(matches!(scale_clip(&[0.5], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn scale_clip_is_monotone() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let v1 = rng.random_range(-1.0..1.0);
            let v2 = rng.random_range(-1.0..1.0);
            let a1 = rng.random_range(0.1..8.0);
            let a2 = rng.random_range(0.1..8.0);
            let (lo_v, hi_v) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            let s1 = scale_clip(&[lo_v], a1).unwrap()[0];
            let s2 = scale_clip(&[hi_v], a1).unwrap()[0];
            assert!(s1 <= s2);
            let (lo_a, hi_a) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let v = rng.random_range(0.0..1.0);
            assert!(scale_clip(&[v], lo_a).unwrap()[0] <= scale_clip(&[v], hi_a).unwrap()[0]);
        }
    }

    #[test]
    fn scale_preserves_argmax_when_unsaturated() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..0.15)).collect();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            // alpha up to 6: 0.15 * 6 = 0.9 < 1, nothing saturates
            for alpha in [1.0, 2.0, 6.0] {
                let s = scale_clip(&vals, alpha).unwrap();
                assert_eq!(argmax(&s), argmax(&vals));
            }
        }
    }

    #[test]
    fn upsample_single_chunk_is_constant() {
        let cfg = cfg4();
        let out = upsample_pad(&[0.7], 9, &cfg);
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn upsample_span_layout() {
        // K=3, T=8, T'=4: first window covers its full span, then hop spans
        let cfg = cfg4();
        let out = upsample_pad(&[1.0, 2.0, 3.0], 8, &cfg);
        assert_eq!(out, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn upsample_trailing_remainder_replicates_last() {
        let cfg = cfg4();
        // T = 9: one frame beyond the last full window's coverage
        let out = upsample_pad(&[1.0, 2.0], 9, &cfg);
        assert_eq!(out, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_length_always_matches() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..50 {
            let chunk_len = 2 * rng.random_range(1..8usize);
            let cfg = ChunkConfig { chunk_len };
            let total = rng.random_range(chunk_len..chunk_len * 12);
            let k = chunk_starts(total, &cfg).unwrap().len();
            let vals: Vec<f64> = (0..k).map(|i| i as f64).collect();
            assert_eq!(upsample_pad(&vals, total, &cfg).len(), total);
            assert_eq!(upsample_linear(&vals, total, &cfg).len(), total);
        }
    }

    #[test]
    fn conditioning_repeats_reference_and_appends_track() {
        let reference = Embedding::new(vec![0.6, 0.8], true).unwrap();
        let track = vec![0.1, 0.9, 0.5];
        let cond = assemble_conditioning(&reference, &track).unwrap();
        assert_eq!(cond.data.rows(), 3);
        assert_eq!(cond.frames(), 3);
        for t in 0..3 {
            assert_eq!(cond.data[(0, t)], 0.6f32 as f64);
            assert_eq!(cond.data[(1, t)], 0.8f32 as f64);
        }
        assert_eq!(cond.data.row(2), &[0.1, 0.9, 0.5]);

        // stripping the last row recovers the repeated reference
        for t in 0..3 {
            for (r, &v) in reference.values().iter().enumerate() {
                assert_eq!(cond.data[(r, t)], v as f64);
            }
        }
    }

    #[test]
    fn conditioning_zero_track() {
        let reference = Embedding::new(vec![1.0, 0.0], true).unwrap();
        let cond = assemble_conditioning(&reference, &[0.0, 0.0]).unwrap();
        assert!(cond.data.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditioning_rejects_empty_track() {
        let reference = Embedding::new(vec![1.0, 0.0], true).unwrap();
        assert!(matches!(
            assemble_conditioning(&reference, &[]),
            Err(Error::Shape(_))
        ));
    }

    fn feature_matrix(rng: &mut StdRng, dim: usize, frames: usize) -> FeatureMatrix {
        FeatureMatrix {
            data: Mat::from_fn(dim, frames, |_, _| rng.random_range(-1.0..1.0)),
            frame_rate: 100.0,
        }
    }

    #[test]
    fn streaming_matches_offline_bit_exactly() {
        let mut rng = StdRng::seed_from_u64(7);
        let embedder = MeanEmbedder { dim: 6 };
        let reference = {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Embedding::from_normalized_f64(&v.iter().map(|x| x / n).collect::<Vec<_>>()).unwrap()
        };
        let chunk_cfg = ChunkConfig { chunk_len: 6 };
        let refine_cfg = RefinementConfig::for_mode(EmbedderMode::Light);

        for frames in [6usize, 7, 9, 14, 23] {
            let f = feature_matrix(&mut rng, 6, frames);
            let offline =
                refine_offline(&f, &reference, &embedder, &chunk_cfg, &refine_cfg).unwrap();

            let mut stream =
                StreamRefiner::new(&embedder, reference.clone(), chunk_cfg.clone(), refine_cfg.clone())
                    .unwrap();
            let mut points = Vec::new();
            for t in 0..frames {
                let col: Vec<f64> = (0..6).map(|r| f.data[(r, t)]).collect();
                points.extend(stream.push_frame(&col).unwrap());
            }
            points.extend(stream.finish().unwrap());

            assert_eq!(points.len(), frames);
            for (t, p) in points.iter().enumerate() {
                assert_eq!(p.frame, t);
                assert_eq!(p.raw.to_bits(), offline.raw[t].to_bits());
                assert_eq!(p.scaled.to_bits(), offline.scaled[t].to_bits());
            }
        }
    }

    #[test]
    fn streaming_latency_is_at_most_one_chunk() {
        let mut rng = StdRng::seed_from_u64(8);
        let embedder = MeanEmbedder { dim: 3 };
        let reference = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        let chunk_cfg = ChunkConfig { chunk_len: 4 };
        let mut stream = StreamRefiner::new(
            &embedder,
            reference,
            chunk_cfg,
            RefinementConfig::for_mode(EmbedderMode::Light),
        )
        .unwrap();
        for t in 0..12 {
            let col: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pts = stream.push_frame(&col).unwrap();
            for p in &pts {
                assert!(t + 1 - (p.frame + 1) < 4, "frame {} emitted at t={t}", p.frame);
            }
        }
    }

    #[test]
    fn streaming_refuses_too_short_input() {
        let embedder = MeanEmbedder { dim: 3 };
        let reference = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        let mut stream = StreamRefiner::new(
            &embedder,
            reference,
            ChunkConfig { chunk_len: 4 },
            RefinementConfig::for_mode(EmbedderMode::Light),
        )
        .unwrap();
        stream.push_frame(&[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(stream.finish(), Err(Error::TooShort(_))));
    }

    #[test]
    fn streaming_rejects_linear_upsample() {
        let embedder = MeanEmbedder { dim: 3 };
        let reference = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        let mut cfg = RefinementConfig::for_mode(EmbedderMode::Light);
        cfg.linear_upsample = true;
        assert!(matches!(
            StreamRefiner::new(&embedder, reference, ChunkConfig { chunk_len: 4 }, cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn refine_with_tiny_encoder_produces_clipped_tracks() {
        let cfg = EncoderConfig {
            in_dim: 6,
            block_channels: [4, 4, 4],
            kernels: [3, 3, 3],
            se_bottleneck: [2, 2, 2],
            pooled_dim: 8,
            embed_dim: 5,
        };
        let embedder = TinyEmbedder::new(EncoderWeights::init(&cfg, 3).unwrap());
        let mut rng = StdRng::seed_from_u64(9);
        let f = feature_matrix(&mut rng, 6, 20);
        let reference = {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Embedding::from_normalized_f64(&v.iter().map(|x| x / n).collect::<Vec<_>>()).unwrap()
        };
        let out = refine_offline(
            &f,
            &reference,
            &embedder,
            &ChunkConfig { chunk_len: 4 },
            &RefinementConfig::for_mode(EmbedderMode::Light),
        )
        .unwrap();
        assert_eq!(out.raw.len(), 20);
        assert!(out.scaled.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(out.conditioning.data.rows(), 6);
    }

    #[test]
    fn silence_features_yield_finite_constant_track() {
        // constant (zero-ish) features: every chunk identical, no NaN
        let embedder = MeanEmbedder { dim: 3 };
        let reference = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        let f = FeatureMatrix {
            data: Mat::from_fn(3, 12, |r, _| if r == 0 { 1e-9 } else { 0.0 }),
            frame_rate: 100.0,
        };
        let out = refine_offline(
            &f,
            &reference,
            &embedder,
            &cfg4(),
            &RefinementConfig::for_mode(EmbedderMode::Light),
        )
        .unwrap();
        assert!(out.raw.iter().all(|v| v.is_finite()));
        assert!(out.raw.iter().all(|&v| v == out.raw[0]));
    }
}
