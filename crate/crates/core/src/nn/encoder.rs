//! Encoder assembly: three conv blocks -> statistics pooling -> projection
//! -> batchnorm -> L2 normalization.
//!
//! Inference runs per chunk with running batchnorm statistics. Training runs
//! over a batch of chunks with batch statistics (momentum-updated running
//! estimates) and full reverse-mode gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::ops::{self, BatchNorm, BnBatchCache, SeCache, SeWeights};
use crate::par;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_dim: usize,
    /// Output channels of the three conv blocks.
    pub block_channels: [usize; 3],
    pub kernels: [usize; 3],
    pub se_bottleneck: [usize; 3],
    /// Statistics-pooling output size; must equal 2x the last block width.
    pub pooled_dim: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_dim: 80,
            block_channels: [80, 128, 192],
            kernels: [3, 5, 7],
            se_bottleneck: [20, 32, 48],
            pooled_dim: 384,
            embed_dim: 192,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "in_dim and embed_dim must be positive".into(),
            ));
        }
        if self.block_channels.iter().any(|&c| c == 0)
            || self.se_bottleneck.iter().any(|&b| b == 0)
        {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernels.iter().any(|&k| k % 2 == 0 || k == 0) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.pooled_dim != 2 * self.block_channels[2] {
            return Err(Error::Config(format!(
                "pooled_dim ({}) must equal 2 x last block channels ({})",
                self.pooled_dim,
                2 * self.block_channels[2]
            )));
        }
        Ok(())
    }

    /// Input channels of each block.
    fn block_inputs(&self) -> [usize; 3] {
        [
            self.in_dim,
            self.block_channels[0],
            self.block_channels[1],
        ]
    }
}

/// Tensor ledger entry: name, shape, and whether it is learnable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub learnable: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

/// The full tensor ledger for a configuration, in serialization order.
pub fn tensor_specs(cfg: &EncoderConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, learnable: bool| {
        specs.push(TensorSpec {
            name,
            rows,
            cols,
            learnable,
        });
    };
    let ins = cfg.block_inputs();
    for b in 0..3 {
        let (c_in, c_out) = (ins[b], cfg.block_channels[b]);
        let (k, bott) = (cfg.kernels[b], cfg.se_bottleneck[b]);
        push(format!("block{b}.depthwise"), c_in, k, true);
        push(format!("block{b}.pointwise"), c_in, c_out, true);
        push(format!("block{b}.bn.gamma"), 1, c_out, true);
        push(format!("block{b}.bn.beta"), 1, c_out, true);
        push(format!("block{b}.bn.running_mean"), 1, c_out, false);
        push(format!("block{b}.bn.running_var"), 1, c_out, false);
        push(format!("block{b}.prelu"), 1, c_out, true);
        push(format!("block{b}.se.w1"), bott, c_out, true);
        push(format!("block{b}.se.b1"), 1, bott, true);
        push(format!("block{b}.se.w2"), c_out, bott, true);
        push(format!("block{b}.se.b2"), 1, c_out, true);
    }
    push("proj.weight".into(), cfg.pooled_dim, cfg.embed_dim, true);
    push("proj.bias".into(), 1, cfg.embed_dim, true);
    push("out_bn.gamma".into(), 1, cfg.embed_dim, true);
    push("out_bn.beta".into(), 1, cfg.embed_dim, true);
    push("out_bn.running_mean".into(), 1, cfg.embed_dim, false);
    push("out_bn.running_var".into(), 1, cfg.embed_dim, false);
    specs
}

/// Learnable parameter count (running statistics excluded).
pub fn param_count(cfg: &EncoderConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(tensor_specs(cfg)
        .iter()
        .filter(|s| s.learnable)
        .map(|s| s.len())
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub depthwise: Mat,
    pub pointwise: Mat,
    pub bn: BatchNorm,
    pub prelu: Vec<f64>,
    pub se: SeWeights,
}

/// All encoder parameters plus batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub cfg: EncoderConfig,
    pub blocks: Vec<BlockWeights>,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
    pub out_bn: BatchNorm,
}

impl EncoderWeights {
    /// Seeded random initialization. Values are quantized to f32 so that the
    /// on-disk float32 format round-trips bit-exactly.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| -> Mat {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Mat::from_fn(rows, cols, |_, _| {
                rng.random_range(-bound..bound) as f32 as f64
            })
        };
        let ins = cfg.block_inputs();
        let mut blocks = Vec::with_capacity(3);
        for b in 0..3 {
            let (c_in, c_out) = (ins[b], cfg.block_channels[b]);
            let (k, bott) = (cfg.kernels[b], cfg.se_bottleneck[b]);
            blocks.push(BlockWeights {
                depthwise: uniform(c_in, k, k),
                pointwise: uniform(c_in, c_out, c_in),
                bn: BatchNorm::identity(c_out),
                prelu: vec![0.25; c_out],
                se: SeWeights {
                    w1: uniform(bott, c_out, c_out),
                    b1: vec![0.0; bott],
                    w2: uniform(c_out, bott, bott),
                    b2: vec![0.0; c_out],
                },
            });
        }
        let proj_w = uniform(cfg.pooled_dim, cfg.embed_dim, cfg.pooled_dim);
        Ok(EncoderWeights {
            cfg: cfg.clone(),
            blocks,
            proj_w,
            proj_b: vec![0.0; cfg.embed_dim],
            out_bn: BatchNorm::identity(cfg.embed_dim),
        })
    }

    /// All tensors in ledger order: (name, rows, cols, learnable, data).
    pub fn tensors(&self) -> Vec<(String, usize, usize, bool, &[f64])> {
        let specs = tensor_specs(&self.cfg);
        let datas = self.tensor_data();
        specs
            .into_iter()
            .zip(datas)
            .map(|(s, d)| (s.name, s.rows, s.cols, s.learnable, d))
            .collect()
    }

    fn tensor_data(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(b.depthwise.data());
            out.push(b.pointwise.data());
            out.push(&b.bn.gamma);
            out.push(&b.bn.beta);
            out.push(&b.bn.running_mean);
            out.push(&b.bn.running_var);
            out.push(&b.prelu);
            out.push(b.se.w1.data());
            out.push(&b.se.b1);
            out.push(b.se.w2.data());
            out.push(&b.se.b2);
        }
        out.push(self.proj_w.data());
        out.push(&self.proj_b);
        out.push(&self.out_bn.gamma);
        out.push(&self.out_bn.beta);
        out.push(&self.out_bn.running_mean);
        out.push(&self.out_bn.running_var);
        out
    }

    /// Mutable views of all tensors in ledger order.
    pub fn tensor_data_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.depthwise.data_mut());
            out.push(b.pointwise.data_mut());
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
            out.push(&mut b.bn.running_mean);
            out.push(&mut b.bn.running_var);
            out.push(&mut b.prelu);
            out.push(b.se.w1.data_mut());
            out.push(&mut b.se.b1);
            out.push(b.se.w2.data_mut());
            out.push(&mut b.se.b2);
        }
        out.push(self.proj_w.data_mut());
        out.push(&mut self.proj_b);
        out.push(&mut self.out_bn.gamma);
        out.push(&mut self.out_bn.beta);
        out.push(&mut self.out_bn.running_mean);
        out.push(&mut self.out_bn.running_var);
        out
    }

    /// Mutable views of the learnable tensors only, in ledger order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let learnable: Vec<bool> = tensor_specs(&self.cfg).iter().map(|s| s.learnable).collect();
        self.tensor_data_mut()
            .into_iter()
            .zip(learnable)
            .filter_map(|(d, l)| l.then_some(d))
            .collect()
    }

    /// Quantize every tensor through f32, making the in-memory values match
    /// the on-disk format exactly.
    pub fn quantize_f32(&mut self) {
        for t in self.tensor_data_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Finiteness and running-variance sanity checks.
    pub fn validate_values(&self) -> Result<()> {
        for (name, _, _, _, data) in self.tensors() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite values in {name}")));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.bn.running_var.iter().any(|&v| v <= 0.0) {
                return Err(Error::Format(format!(
                    "non-positive running variance in block{i}.bn"
                )));
            }
        }
        if self.out_bn.running_var.iter().any(|&v| v <= 0.0) {
            return Err(Error::Format("non-positive running variance in out_bn".into()));
        }
        Ok(())
    }

    pub fn expect_config(&self, cfg: &EncoderConfig) -> Result<()> {
        if &self.cfg != cfg {
            return Err(Error::ConfigMismatch(format!(
                "weights were built for {:?}, pipeline expects {:?}",
                self.cfg, cfg
            )));
        }
        Ok(())
    }
}

/// Gradients of every learnable tensor, mirroring [`EncoderWeights`].
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub depthwise: Mat,
    pub pointwise: Mat,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub prelu: Vec<f64>,
    pub se_w1: Mat,
    pub se_b1: Vec<f64>,
    pub se_w2: Mat,
    pub se_b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub blocks: Vec<BlockGrads>,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
    pub out_bn_gamma: Vec<f64>,
    pub out_bn_beta: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let ins = cfg.block_inputs();
        let blocks = (0..3)
            .map(|b| {
                let (c_in, c_out) = (ins[b], cfg.block_channels[b]);
                BlockGrads {
                    depthwise: Mat::zeros(c_in, cfg.kernels[b]),
                    pointwise: Mat::zeros(c_in, c_out),
                    bn_gamma: vec![0.0; c_out],
                    bn_beta: vec![0.0; c_out],
                    prelu: vec![0.0; c_out],
                    se_w1: Mat::zeros(cfg.se_bottleneck[b], c_out),
                    se_b1: vec![0.0; cfg.se_bottleneck[b]],
                    se_w2: Mat::zeros(c_out, cfg.se_bottleneck[b]),
                    se_b2: vec![0.0; c_out],
                }
            })
            .collect();
        EncoderGrads {
            blocks,
            proj_w: Mat::zeros(cfg.pooled_dim, cfg.embed_dim),
            proj_b: vec![0.0; cfg.embed_dim],
            out_bn_gamma: vec![0.0; cfg.embed_dim],
            out_bn_beta: vec![0.0; cfg.embed_dim],
        }
    }

    /// Flat views in the same order as [`EncoderWeights::params_mut`].
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(b.depthwise.data());
            out.push(b.pointwise.data());
            out.push(&b.bn_gamma);
            out.push(&b.bn_beta);
            out.push(&b.prelu);
            out.push(b.se_w1.data());
            out.push(&b.se_b1);
            out.push(b.se_w2.data());
            out.push(&b.se_b2);
        }
        out.push(self.proj_w.data());
        out.push(&self.proj_b);
        out.push(&self.out_bn_gamma);
        out.push(&self.out_bn_beta);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.depthwise.data_mut());
            out.push(b.pointwise.data_mut());
            out.push(&mut b.bn_gamma);
            out.push(&mut b.bn_beta);
            out.push(&mut b.prelu);
            out.push(b.se_w1.data_mut());
            out.push(&mut b.se_b1);
            out.push(b.se_w2.data_mut());
            out.push(&mut b.se_b2);
        }
        out.push(self.proj_w.data_mut());
        out.push(&mut self.proj_b);
        out.push(&mut self.out_bn_gamma);
        out.push(&mut self.out_bn_beta);
        out
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

fn check_finite(m: &Mat, stage: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values after {stage}")))
    }
}

fn check_finite_vec(v: &[f64], stage: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values after {stage}")))
    }
}

fn col_mat(v: &[f64]) -> Mat {
    Mat::from_vec(v.len(), 1, v.to_vec()).expect("column shape")
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

pub struct BlockCache {
    pub input: Mat,
    pub conv_mid: Mat,
    pub conv_out: Mat,
    pub bn_out: Mat,
    pub prelu_out: Mat,
    pub se: SeCache,
}

pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    pub trunk_out: Mat,
    pub pooled: Vec<f64>,
    pub lin_out: Vec<f64>,
    pub embedding: Vec<f64>,
    pub norm: f64,
}

/// Single-chunk inference (running batchnorm statistics). Returns the
/// L2-normalized embedding.
pub fn forward(w: &EncoderWeights, chunk: &Mat) -> Result<Vec<f64>> {
    Ok(forward_cached(w, chunk)?.embedding)
}

/// Inference forward that keeps the activations needed by [`backward`].
pub fn forward_cached(w: &EncoderWeights, chunk: &Mat) -> Result<ForwardCache> {
    if chunk.rows() != w.cfg.in_dim {
        return Err(Error::Shape(format!(
            "chunk has {} rows, encoder expects {}",
            chunk.rows(),
            w.cfg.in_dim
        )));
    }
    let mut x = chunk.clone();
    let mut blocks = Vec::with_capacity(3);
    for (i, b) in w.blocks.iter().enumerate() {
        let (conv_out, conv_mid) = ops::separable_conv1d(&x, &b.depthwise, &b.pointwise)?;
        check_finite(&conv_out, &format!("block{i} conv"))?;
        let bn_out = ops::batchnorm_infer(&conv_out, &b.bn);
        check_finite(&bn_out, &format!("block{i} batchnorm"))?;
        let prelu_out = ops::prelu(&bn_out, &b.prelu);
        let (se_out, se) = ops::squeeze_excite(&prelu_out, &b.se);
        check_finite(&se_out, &format!("block{i} squeeze-excite"))?;
        blocks.push(BlockCache {
            input: x,
            conv_mid,
            conv_out,
            bn_out,
            prelu_out,
            se,
        });
        x = se_out;
    }
    let pooled = ops::stats_pool(&x)?;
    check_finite_vec(&pooled, "statistics pooling")?;
    let lin_out = ops::linear(&pooled, &w.proj_w, &w.proj_b);
    check_finite_vec(&lin_out, "projection")?;
    let bn_vec_mat = ops::batchnorm_infer(&col_mat(&lin_out), &w.out_bn);
    let bn_vec = bn_vec_mat.data().to_vec();
    check_finite_vec(&bn_vec, "output batchnorm")?;
    let (embedding, norm) = ops::l2_normalize(&bn_vec)?;
    Ok(ForwardCache {
        blocks,
        trunk_out: x,
        pooled,
        lin_out,
        embedding,
        norm,
    })
}

/// Reverse-mode gradients of the inference forward for one chunk, given the
/// upstream gradient on the normalized embedding. Returns the parameter
/// gradients and the gradient on the input chunk.
pub fn backward(
    w: &EncoderWeights,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<(EncoderGrads, Mat)> {
    if upstream.len() != w.cfg.embed_dim {
        return Err(Error::Shape(format!(
            "upstream gradient has {} dims, embedding has {}",
            upstream.len(),
            w.cfg.embed_dim
        )));
    }
    let mut grads = EncoderGrads::zeros(&w.cfg);

    let d_bn_vec = ops::l2_normalize_backward(&cache.embedding, cache.norm, upstream);
    let (d_lin_mat, dg, db) =
        ops::batchnorm_infer_backward(&col_mat(&cache.lin_out), &w.out_bn, &col_mat(&d_bn_vec));
    grads.out_bn_gamma = dg;
    grads.out_bn_beta = db;
    let (d_pooled, dw, db) = ops::linear_backward(&cache.pooled, &w.proj_w, d_lin_mat.data());
    grads.proj_w = dw;
    grads.proj_b = db;
    let mut dy = ops::stats_pool_backward(&cache.trunk_out, &cache.pooled, &d_pooled);

    for i in (0..3).rev() {
        let b = &w.blocks[i];
        let c = &cache.blocks[i];
        let g = &mut grads.blocks[i];
        let (d_prelu_out, se_g) = ops::squeeze_excite_backward(&c.prelu_out, &b.se, &c.se, &dy);
        g.se_w1 = se_g.dw1;
        g.se_b1 = se_g.db1;
        g.se_w2 = se_g.dw2;
        g.se_b2 = se_g.db2;
        let (d_bn_out, d_slope) = ops::prelu_backward(&c.bn_out, &b.prelu, &d_prelu_out);
        g.prelu = d_slope;
        let (d_conv_out, dgamma, dbeta) = ops::batchnorm_infer_backward(&c.conv_out, &b.bn, &d_bn_out);
        g.bn_gamma = dgamma;
        g.bn_beta = dbeta;
        let conv_g =
            ops::separable_conv1d_backward(&c.input, &b.depthwise, &b.pointwise, &c.conv_mid, &d_conv_out);
        g.depthwise = conv_g.d_depthwise;
        g.pointwise = conv_g.d_pointwise;
        dy = conv_g.dx;
    }
    Ok((grads, dy))
}

// ---------------------------------------------------------------------------
// Training (batched, batch statistics)
// ---------------------------------------------------------------------------

pub struct BlockBatchCache {
    pub inputs: Vec<Mat>,
    pub conv_mid: Vec<Mat>,
    pub conv_out: Vec<Mat>,
    pub bn: BnBatchCache,
    pub bn_out: Vec<Mat>,
    pub prelu_out: Vec<Mat>,
    pub se: Vec<SeCache>,
}

pub struct BatchTrainCache {
    pub blocks: Vec<BlockBatchCache>,
    pub trunk_out: Vec<Mat>,
    pub pooled: Vec<Vec<f64>>,
    pub lin_out: Vec<Vec<f64>>,
    pub out_bn: BnBatchCache,
    pub embeddings: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

/// Training-mode forward over a batch of chunks. Batchnorm uses batch
/// statistics (normalization set = all chunks) and updates the running
/// estimates with `momentum`. Returns normalized embeddings per chunk.
///
/// Per-chunk stages may run in parallel; every cross-chunk reduction is
/// sequential in chunk order, so results are identical with and without
/// `parallel`.
pub fn forward_train(
    w: &mut EncoderWeights,
    chunks: &[Mat],
    momentum: f64,
    parallel: bool,
) -> Result<(Vec<Vec<f64>>, BatchTrainCache)> {
    if chunks.is_empty() {
        return Err(Error::Degenerate("empty training batch".into()));
    }
    for c in chunks {
        if c.rows() != w.cfg.in_dim {
            return Err(Error::Shape(format!(
                "chunk has {} rows, encoder expects {}",
                c.rows(),
                w.cfg.in_dim
            )));
        }
    }
    let n = chunks.len();
    let mut xs: Vec<Mat> = chunks.to_vec();
    let mut block_caches = Vec::with_capacity(3);
    for i in 0..3 {
        let b = &w.blocks[i];
        let conv: Vec<(Mat, Mat)> = collect_results(par::map_range_auto(parallel, n, |j| {
            ops::separable_conv1d(&xs[j], &b.depthwise, &b.pointwise)
        }))?;
        let (conv_out, conv_mid): (Vec<Mat>, Vec<Mat>) = conv.into_iter().unzip();
        for m in &conv_out {
            check_finite(m, &format!("block{i} conv"))?;
        }
        let (bn_out, bn_cache) = ops::batchnorm_train(&conv_out, &mut w.blocks[i].bn, momentum)?;
        let b = &w.blocks[i];
        let prelu_out: Vec<Mat> =
            par::map_range_auto(parallel, n, |j| ops::prelu(&bn_out[j], &b.prelu));
        let se_pairs: Vec<(Mat, SeCache)> =
            par::map_range_auto(parallel, n, |j| ops::squeeze_excite(&prelu_out[j], &b.se));
        let (se_out, se_caches): (Vec<Mat>, Vec<SeCache>) = se_pairs.into_iter().unzip();
        for m in &se_out {
            check_finite(m, &format!("block{i} squeeze-excite"))?;
        }
        block_caches.push(BlockBatchCache {
            inputs: std::mem::take(&mut xs),
            conv_mid,
            conv_out,
            bn: bn_cache,
            bn_out,
            prelu_out,
            se: se_caches,
        });
        xs = se_out;
    }

    let pooled: Vec<Vec<f64>> =
        collect_results(par::map_range_auto(parallel, n, |j| ops::stats_pool(&xs[j])))?;
    let lin_out: Vec<Vec<f64>> = par::map_range_auto(parallel, n, |j| {
        ops::linear(&pooled[j], &w.proj_w, &w.proj_b)
    });
    for v in &lin_out {
        check_finite_vec(v, "projection")?;
    }
    let lin_mats: Vec<Mat> = lin_out.iter().map(|v| col_mat(v)).collect();
    let (bn_mats, out_bn_cache) = ops::batchnorm_train(&lin_mats, &mut w.out_bn, momentum)?;
    let normed: Vec<(Vec<f64>, f64)> = collect_results(par::map_range_auto(parallel, n, |j| {
        ops::l2_normalize(bn_mats[j].data())
    }))?;
    let (embeddings, norms): (Vec<Vec<f64>>, Vec<f64>) = normed.into_iter().unzip();

    Ok((
        embeddings.clone(),
        BatchTrainCache {
            blocks: block_caches,
            trunk_out: xs,
            pooled,
            lin_out,
            out_bn: out_bn_cache,
            embeddings,
            norms,
        },
    ))
}

/// Reverse-mode gradients of [`forward_train`] given upstream gradients on
/// each normalized embedding. Parameter gradients are summed over the batch
/// in chunk order.
pub fn backward_train(
    w: &EncoderWeights,
    cache: &BatchTrainCache,
    upstream: &[Vec<f64>],
    parallel: bool,
) -> Result<EncoderGrads> {
    let n = cache.embeddings.len();
    if upstream.len() != n {
        return Err(Error::Shape(format!(
            "{} upstream gradients for a batch of {n}",
            upstream.len()
        )));
    }
    let mut grads = EncoderGrads::zeros(&w.cfg);

    let d_bn_vecs: Vec<Mat> = par::map_range_auto(parallel, n, |j| {
        col_mat(&ops::l2_normalize_backward(
            &cache.embeddings[j],
            cache.norms[j],
            &upstream[j],
        ))
    });
    let (d_lin_mats, dg, db) = ops::batchnorm_train_backward(&w.out_bn, &cache.out_bn, &d_bn_vecs);
    grads.out_bn_gamma = dg;
    grads.out_bn_beta = db;

    let lin_back: Vec<(Vec<f64>, Mat, Vec<f64>)> = par::map_range_auto(parallel, n, |j| {
        ops::linear_backward(&cache.pooled[j], &w.proj_w, d_lin_mats[j].data())
    });
    let mut d_pooled = Vec::with_capacity(n);
    for (dx, dw, db) in lin_back {
        add_mat(&mut grads.proj_w, &dw);
        add_vec(&mut grads.proj_b, &db);
        d_pooled.push(dx);
    }

    let mut dys: Vec<Mat> = par::map_range_auto(parallel, n, |j| {
        ops::stats_pool_backward(&cache.trunk_out[j], &cache.pooled[j], &d_pooled[j])
    });

    for i in (0..3).rev() {
        let b = &w.blocks[i];
        let c = &cache.blocks[i];

        let se_back: Vec<(Mat, ops::SeGrads)> = par::map_range_auto(parallel, n, |j| {
            ops::squeeze_excite_backward(&c.prelu_out[j], &b.se, &c.se[j], &dys[j])
        });
        let mut d_prelu_out = Vec::with_capacity(n);
        for (dx, g) in se_back {
            add_mat(&mut grads.blocks[i].se_w1, &g.dw1);
            add_vec(&mut grads.blocks[i].se_b1, &g.db1);
            add_mat(&mut grads.blocks[i].se_w2, &g.dw2);
            add_vec(&mut grads.blocks[i].se_b2, &g.db2);
            d_prelu_out.push(dx);
        }

        let prelu_back: Vec<(Mat, Vec<f64>)> = par::map_range_auto(parallel, n, |j| {
            ops::prelu_backward(&c.bn_out[j], &b.prelu, &d_prelu_out[j])
        });
        let mut d_bn_out = Vec::with_capacity(n);
        for (dx, ds) in prelu_back {
            add_vec(&mut grads.blocks[i].prelu, &ds);
            d_bn_out.push(dx);
        }

        let (d_conv_out, dgamma, dbeta) = ops::batchnorm_train_backward(&b.bn, &c.bn, &d_bn_out);
        grads.blocks[i].bn_gamma = dgamma;
        grads.blocks[i].bn_beta = dbeta;

        let conv_back: Vec<ops::SeparableConvGrads> = par::map_range_auto(parallel, n, |j| {
            ops::separable_conv1d_backward(
                &c.inputs[j],
                &b.depthwise,
                &b.pointwise,
                &c.conv_mid[j],
                &d_conv_out[j],
            )
        });
        let mut next = Vec::with_capacity(n);
        for g in conv_back {
            add_mat(&mut grads.blocks[i].depthwise, &g.d_depthwise);
            add_mat(&mut grads.blocks[i].pointwise, &g.d_pointwise);
            next.push(g.dx);
        }
        dys = next;
    }
    Ok(grads)
}

fn add_mat(acc: &mut Mat, g: &Mat) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn add_vec(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn collect_results<T>(v: Vec<Result<T>>) -> Result<Vec<T>> {
    v.into_iter().collect()
}
