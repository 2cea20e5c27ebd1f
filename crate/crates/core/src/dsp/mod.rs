//! Acoustic front-end: 16 kHz mono audio to MFCC+delta feature matrices.
//!
//! The feature stack is MFCC with C0 dropped, concatenated with delta and
//! delta-delta of all coefficients, giving `3*C - 1` rows (80 for C = 27).

pub mod wav;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::par;

/// Mono audio at the pipeline sample rate.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let w = Waveform {
            samples,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::TooShort("waveform is empty".into()));
        }
        if self.sample_rate != wav::PIPELINE_SAMPLE_RATE {
            return Err(Error::Config(format!(
                "waveform sample rate {} != {}",
                self.sample_rate,
                wav::PIPELINE_SAMPLE_RATE
            )));
        }
        Ok(())
    }
}

/// Front-end configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Number of cepstral coefficients C.
    pub n_mfcc: usize,
    /// Mel filter count.
    pub n_mels: usize,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    /// Mel filterbank edges in Hz.
    pub fmin: f64,
    pub fmax: f64,
    /// Half-width of the delta regression window.
    pub delta_window: usize,
    /// Cepstral mean normalization of the static coefficients (off by default).
    pub mean_normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mfcc: 27,
            n_mels: 40,
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            fmin: 20.0,
            fmax: 7600.0,
            delta_window: 2,
            mean_normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mfcc < 2 {
            return Err(Error::Config("n_mfcc must be >= 2".into()));
        }
        if !(self.hop_ms > 0.0 && self.frame_len_ms > self.hop_ms) {
            return Err(Error::Config(
                "need frame_len_ms > hop_ms > 0".into(),
            ));
        }
        if self.n_mels < self.n_mfcc {
            return Err(Error::Config(format!(
                "n_mels ({}) must be >= n_mfcc ({})",
                self.n_mels, self.n_mfcc
            )));
        }
        if self.fft_size < self.frame_len() {
            return Err(Error::Config(format!(
                "fft_size ({}) smaller than frame length ({} samples)",
                self.fft_size,
                self.frame_len()
            )));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return Err(Error::Config("need 0 <= fmin < fmax".into()));
        }
        if self.fmax > wav::PIPELINE_SAMPLE_RATE as f64 / 2.0 {
            return Err(Error::Config("fmax above Nyquist".into()));
        }
        if self.delta_window == 0 {
            return Err(Error::Config("delta_window must be >= 1".into()));
        }
        Ok(())
    }

    /// Frame length in samples at the pipeline sample rate.
    pub fn frame_len(&self) -> usize {
        (self.frame_len_ms * wav::PIPELINE_SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    /// Hop size in samples.
    pub fn hop_len(&self) -> usize {
        (self.hop_ms * wav::PIPELINE_SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    /// Frames per second of audio.
    pub fn frame_rate(&self) -> f64 {
        wav::PIPELINE_SAMPLE_RATE as f64 / self.hop_len() as f64
    }

    /// Rows of the assembled feature matrix: 3*C - 1.
    pub fn feature_dim(&self) -> usize {
        3 * self.n_mfcc - 1
    }
}

/// `(3C-1) x T` feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Mat,
    pub frame_rate: f64,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.data.cols()
    }

    pub fn dim(&self) -> usize {
        self.data.rows()
    }
}

/// Precomputed window, mel filterbank and FFT plan for one configuration.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    filter_centers_hz: Vec<f64>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let window = periodic_hann(cfg.frame_len());
        let (filterbank, filter_centers_hz) = mel_filterbank(
            cfg.n_mels,
            cfg.fft_size,
            wav::PIPELINE_SAMPLE_RATE as f64,
            cfg.fmin,
            cfg.fmax,
        );
        let dct = dct_ii_ortho_rows(cfg.n_mfcc, cfg.n_mels);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(FeatureExtractor {
            cfg,
            window,
            filterbank,
            filter_centers_hz,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Center frequencies (Hz) of the mel filters.
    pub fn filter_centers_hz(&self) -> &[f64] {
        &self.filter_centers_hz
    }

    /// Slice the waveform into windowed frames.
    ///
    /// Frame count is `1 + floor((len - frame_len) / hop)`.
    pub fn frame_and_window(&self, wave: &Waveform) -> Result<Vec<Vec<f64>>> {
        wave.validate()?;
        let frame_len = self.cfg.frame_len();
        let hop = self.cfg.hop_len();
        if wave.samples.len() < frame_len {
            return Err(Error::TooShort(format!(
                "waveform has {} samples, one frame needs {}",
                wave.samples.len(),
                frame_len
            )));
        }
        let n_frames = 1 + (wave.samples.len() - frame_len) / hop;
        let mut frames = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let start = i * hop;
            let frame: Vec<f64> = wave.samples[start..start + frame_len]
                .iter()
                .zip(self.window.iter())
                .map(|(s, w)| s * w)
                .collect();
            frames.push(frame);
        }
        Ok(frames)
    }

    /// Power spectrum of one windowed frame (`fft_size/2 + 1` bins).
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
        for (b, &s) in buf.iter_mut().zip(frame.iter()) {
            b.re = s;
        }
        self.fft.process(&mut buf);
        buf[..n / 2 + 1]
            .iter()
            .map(|c| c.re * c.re + c.im * c.im)
            .collect()
    }

    /// Log mel energies of one windowed frame.
    pub fn log_mel_energies(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        self.filterbank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(power.iter()).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }

    /// MFCC vector (C coefficients) of one windowed frame.
    pub fn mfcc_frame(&self, frame: &[f64]) -> Vec<f64> {
        let log_mel = self.log_mel_energies(frame);
        self.dct
            .iter()
            .map(|row| row.iter().zip(log_mel.iter()).map(|(d, x)| d * x).sum())
            .collect()
    }

    /// MFCC matrix (C x T) over pre-windowed frames.
    pub fn mfcc(&self, frames: &[Vec<f64>]) -> Mat {
        let cols = par::map(frames, |f| self.mfcc_frame(f));
        mat_from_cols(self.cfg.n_mfcc, &cols)
    }

    /// Regression deltas and delta-deltas of a coefficient matrix.
    pub fn deltas(&self, m: &Mat) -> (Mat, Mat) {
        let d = delta_matrix(m, self.cfg.delta_window);
        let dd = delta_matrix(&d, self.cfg.delta_window);
        (d, dd)
    }

    /// Stack `[mfcc without row 0; delta; delta2]` into the 3C-1 row layout.
    pub fn assemble_features(&self, m: &Mat, delta: &Mat, delta2: &Mat) -> Result<FeatureMatrix> {
        let c = self.cfg.n_mfcc;
        let t = m.cols();
        if m.rows() != c || delta.rows() != c || delta2.rows() != c {
            return Err(Error::Shape(format!(
                "coefficient rows {}/{}/{} do not all equal C={}",
                m.rows(),
                delta.rows(),
                delta2.rows(),
                c
            )));
        }
        if delta.cols() != t || delta2.cols() != t {
            return Err(Error::Shape(format!(
                "frame counts {}/{}/{} disagree",
                t,
                delta.cols(),
                delta2.cols()
            )));
        }
        let dim = self.cfg.feature_dim();
        let mut out = Mat::zeros(dim, t);
        for r in 1..c {
            out.row_mut(r - 1).copy_from_slice(m.row(r));
        }
        for r in 0..c {
            out.row_mut(c - 1 + r).copy_from_slice(delta.row(r));
        }
        for r in 0..c {
            out.row_mut(2 * c - 1 + r).copy_from_slice(delta2.row(r));
        }
        Ok(FeatureMatrix {
            data: out,
            frame_rate: self.cfg.frame_rate(),
        })
    }

    /// Full pipeline: waveform to `(3C-1) x T` features.
    pub fn extract(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let frames = self.frame_and_window(wave)?;
        let mut m = self.mfcc(&frames);
        if self.cfg.mean_normalize {
            cepstral_mean_normalize(&mut m);
        }
        let (d, dd) = self.deltas(&m);
        self.assemble_features(&m, &d, &dd)
    }
}

const LOG_FLOOR: f64 = 1e-10;

/// Periodic Hann window (period N, not N-1).
pub fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank evaluated at bin center frequencies.
/// Returns the filters and their center frequencies in Hz.
fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut filt = vec![0.0; n_bins];
        for (k, w) in filt.iter_mut().enumerate() {
            let f = k as f64 * sample_rate / fft_size as f64;
            if f > left && f < right {
                *w = if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
            }
        }
        filters.push(filt);
    }
    let centers = edges[1..=n_mels].to_vec();
    (filters, centers)
}

/// Orthonormal DCT-II rows 0..C over M mel bands.
fn dct_ii_ortho_rows(n_coeffs: usize, n_bands: usize) -> Vec<Vec<f64>> {
    let m = n_bands as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..n_bands)
                .map(|n| scale * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / m).cos())
                .collect()
        })
        .collect()
}

/// One regression-delta value with edge-replicated (clamped) indexing.
///
/// `get(i)` must be valid for `i < len`. Shared by the batch and streaming
/// paths so both produce bit-identical output.
pub(crate) fn regression_delta(
    get: impl Fn(usize) -> f64,
    len: usize,
    t: usize,
    half_width: usize,
) -> f64 {
    let mut acc = 0.0;
    let mut denom = 0.0;
    for n in 1..=half_width {
        let plus = get((t + n).min(len - 1));
        let minus = get(t.saturating_sub(n));
        acc += n as f64 * (plus - minus);
        denom += (n * n) as f64;
    }
    acc / (2.0 * denom)
}

fn delta_matrix(m: &Mat, half_width: usize) -> Mat {
    let (rows, cols) = (m.rows(), m.cols());
    Mat::from_fn(rows, cols, |r, t| {
        regression_delta(|i| m[(r, i)], cols, t, half_width)
    })
}

fn cepstral_mean_normalize(m: &mut Mat) {
    let t = m.cols();
    if t == 0 {
        return;
    }
    for r in 0..m.rows() {
        let mean: f64 = m.row(r).iter().sum::<f64>() / t as f64;
        for v in m.row_mut(r) {
            *v -= mean;
        }
    }
}

fn mat_from_cols(rows: usize, cols: &[Vec<f64>]) -> Mat {
    let mut m = Mat::zeros(rows, cols.len());
    for (t, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m[(r, t)] = v;
        }
    }
    m
}

/// Incremental front-end producing assembled feature columns as audio
/// arrives. Output is bit-identical to [`FeatureExtractor::extract`] on the
/// same samples; columns become final once the delta look-ahead (2W frames)
/// is available or the stream is finished.
pub struct StreamingExtractor<'a> {
    ex: &'a FeatureExtractor,
    pending: Vec<f64>,
    mfcc_cols: Vec<Vec<f64>>,
    delta_cols: Vec<Vec<f64>>,
    delta2_cols: Vec<Vec<f64>>,
    emitted: usize,
    finished: bool,
}

impl<'a> StreamingExtractor<'a> {
    pub fn new(ex: &'a FeatureExtractor) -> Result<Self> {
        if ex.cfg.mean_normalize {
            return Err(Error::Config(
                "mean_normalize requires the whole utterance; not available in streaming mode"
                    .into(),
            ));
        }
        Ok(StreamingExtractor {
            ex,
            pending: Vec::new(),
            mfcc_cols: Vec::new(),
            delta_cols: Vec::new(),
            delta2_cols: Vec::new(),
            emitted: 0,
            finished: false,
        })
    }

    /// Feed samples; returns any feature columns that became final.
    pub fn push_samples(&mut self, samples: &[f64]) -> Vec<Vec<f64>> {
        assert!(!self.finished, "push after finish");
        self.pending.extend_from_slice(samples);
        let frame_len = self.ex.cfg.frame_len();
        let hop = self.ex.cfg.hop_len();
        while self.pending.len() >= frame_len {
            let frame: Vec<f64> = self.pending[..frame_len]
                .iter()
                .zip(self.ex.window.iter())
                .map(|(s, w)| s * w)
                .collect();
            self.mfcc_cols.push(self.ex.mfcc_frame(&frame));
            self.pending.drain(..hop);
        }
        self.advance(false)
    }

    /// Flush the tail once the stream ends.
    pub fn finish(&mut self) -> Vec<Vec<f64>> {
        self.finished = true;
        self.advance(true)
    }

    fn advance(&mut self, end_of_stream: bool) -> Vec<Vec<f64>> {
        let w = self.ex.cfg.delta_window;
        let n = self.mfcc_cols.len();
        let c = self.ex.cfg.n_mfcc;

        // A delta column at t is final once index t+w no longer clamps
        // (or the stream ended, fixing the clamp boundary).
        let delta_ready = if end_of_stream {
            n
        } else {
            n.saturating_sub(w)
        };
        for t in self.delta_cols.len()..delta_ready {
            let col: Vec<f64> = (0..c)
                .map(|r| regression_delta(|i| self.mfcc_cols[i][r], n, t, w))
                .collect();
            self.delta_cols.push(col);
        }
        let nd = self.delta_cols.len();
        let delta2_ready = if end_of_stream {
            nd
        } else {
            nd.saturating_sub(w)
        };
        for t in self.delta2_cols.len()..delta2_ready {
            let col: Vec<f64> = (0..c)
                .map(|r| regression_delta(|i| self.delta_cols[i][r], nd, t, w))
                .collect();
            self.delta2_cols.push(col);
        }

        let ready = self.delta2_cols.len();
        let mut out = Vec::new();
        for t in self.emitted..ready {
            let mut col = Vec::with_capacity(self.ex.cfg.feature_dim());
            col.extend_from_slice(&self.mfcc_cols[t][1..]);
            col.extend_from_slice(&self.delta_cols[t]);
            col.extend_from_slice(&self.delta2_cols[t]);
            out.push(col);
        }
        self.emitted = ready;
        out
    }
}
