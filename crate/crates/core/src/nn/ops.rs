//! Network operators with hand-written forward and backward passes.
//!
//! Matrices are `channels x time`. Every backward here is checked against
//! central finite differences in the tests below and again in the
//! acceptance suite.

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const BN_EPS: f64 = 1e-5;
pub const POOL_STD_EPS: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Separable 1-D convolution
// ---------------------------------------------------------------------------

/// Depthwise convolution with same (zero) padding. `depthwise` is `c_in x k`,
/// k odd.
pub fn depthwise_conv(x: &Mat, depthwise: &Mat) -> Result<Mat> {
    let (ch, t_len) = (x.rows(), x.cols());
    let k = depthwise.cols();
    if depthwise.rows() != ch {
        return Err(Error::Shape(format!(
            "depthwise kernel has {} channels, input has {}",
            depthwise.rows(),
            ch
        )));
    }
    if k % 2 == 0 {
        return Err(Error::Shape(format!("kernel size {k} must be odd")));
    }
    let off = (k - 1) / 2;
    let mut z = Mat::zeros(ch, t_len);
    for c in 0..ch {
        let xr = x.row(c);
        let kr = depthwise.row(c);
        let zr = z.row_mut(c);
        for (t, out) in zr.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &w) in kr.iter().enumerate() {
                let src = t + j;
                if src >= off && src - off < t_len {
                    acc += w * xr[src - off];
                }
            }
            *out = acc;
        }
    }
    Ok(z)
}

/// 1x1 channel mix. `pointwise` is `c_in x c_out`.
pub fn pointwise_conv(z: &Mat, pointwise: &Mat) -> Result<Mat> {
    let (ch_in, t_len) = (z.rows(), z.cols());
    if pointwise.rows() != ch_in {
        return Err(Error::Shape(format!(
            "pointwise kernel expects {} input channels, got {}",
            pointwise.rows(),
            ch_in
        )));
    }
    let ch_out = pointwise.cols();
    let mut y = Mat::zeros(ch_out, t_len);
    for c in 0..ch_in {
        let zr = z.row(c);
        for o in 0..ch_out {
            let w = pointwise[(c, o)];
            if w == 0.0 {
                continue;
            }
            let yr = y.row_mut(o);
            for (t, out) in yr.iter_mut().enumerate() {
                *out += w * zr[t];
            }
        }
    }
    Ok(y)
}

/// Depthwise then pointwise. Returns the intermediate depthwise output too,
/// since the backward pass needs it.
pub fn separable_conv1d(x: &Mat, depthwise: &Mat, pointwise: &Mat) -> Result<(Mat, Mat)> {
    let z = depthwise_conv(x, depthwise)?;
    let y = pointwise_conv(&z, pointwise)?;
    Ok((y, z))
}

pub struct SeparableConvGrads {
    pub dx: Mat,
    pub d_depthwise: Mat,
    pub d_pointwise: Mat,
}

pub fn separable_conv1d_backward(
    x: &Mat,
    depthwise: &Mat,
    pointwise: &Mat,
    z: &Mat,
    dy: &Mat,
) -> SeparableConvGrads {
    let (ch_in, t_len) = (x.rows(), x.cols());
    let ch_out = pointwise.cols();
    let k = depthwise.cols();
    let off = (k - 1) / 2;

    // through the pointwise mix
    let mut dz = Mat::zeros(ch_in, t_len);
    let mut d_pointwise = Mat::zeros(ch_in, ch_out);
    for c in 0..ch_in {
        let zr = z.row(c);
        let dzr = dz.row_mut(c);
        for o in 0..ch_out {
            let w = pointwise[(c, o)];
            let dyr = dy.row(o);
            let mut acc = 0.0;
            for t in 0..t_len {
                dzr[t] += w * dyr[t];
                acc += zr[t] * dyr[t];
            }
            d_pointwise[(c, o)] = acc;
        }
    }

    // through the depthwise convolution
    let mut dx = Mat::zeros(ch_in, t_len);
    let mut d_depthwise = Mat::zeros(ch_in, k);
    for c in 0..ch_in {
        let xr = x.row(c);
        let dzr = dz.row(c);
        for j in 0..k {
            let mut acc = 0.0;
            for t in 0..t_len {
                let src = t + j;
                if src >= off && src - off < t_len {
                    acc += dzr[t] * xr[src - off];
                }
            }
            d_depthwise[(c, j)] = acc;
        }
        let w = depthwise.row(c);
        let dxr = dx.row_mut(c);
        for (s, out) in dxr.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                let tt = s + off;
                if tt >= j && tt - j < t_len {
                    acc += wj * dzr[tt - j];
                }
            }
            *out = acc;
        }
    }

    SeparableConvGrads {
        dx,
        d_depthwise,
        d_pointwise,
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batchnorm parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Inference-mode normalization with running statistics.
pub fn batchnorm_infer(x: &Mat, bn: &BatchNorm) -> Mat {
    let mut y = Mat::zeros(x.rows(), x.cols());
    for c in 0..x.rows() {
        let inv_std = 1.0 / (bn.running_var[c] + BN_EPS).sqrt();
        let (g, b, m) = (bn.gamma[c], bn.beta[c], bn.running_mean[c]);
        for (out, &v) in y.row_mut(c).iter_mut().zip(x.row(c)) {
            *out = g * (v - m) * inv_std + b;
        }
    }
    y
}

pub fn batchnorm_infer_backward(
    x: &Mat,
    bn: &BatchNorm,
    dy: &Mat,
) -> (Mat, Vec<f64>, Vec<f64>) {
    let ch = x.rows();
    let mut dx = Mat::zeros(ch, x.cols());
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for c in 0..ch {
        let inv_std = 1.0 / (bn.running_var[c] + BN_EPS).sqrt();
        let m = bn.running_mean[c];
        let g = bn.gamma[c];
        for t in 0..x.cols() {
            let xhat = (x[(c, t)] - m) * inv_std;
            let d = dy[(c, t)];
            dgamma[c] += d * xhat;
            dbeta[c] += d;
            dx[(c, t)] = d * g * inv_std;
        }
    }
    (dx, dgamma, dbeta)
}

/// Training-mode statistics and normalized values for a batch of matrices
/// (normalization set = every column of every item, per channel).
pub struct BnBatchCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Vec<Mat>,
    pub count: usize,
}

/// Training-mode batchnorm over a batch. Normalizes with batch statistics
/// and folds them into the running estimates with the given momentum.
///
/// Statistics are reduced sequentially in item order, so results do not
/// depend on thread count.
pub fn batchnorm_train(
    xs: &[Mat],
    bn: &mut BatchNorm,
    momentum: f64,
) -> Result<(Vec<Mat>, BnBatchCache)> {
    let ch = bn.channels();
    let count: usize = xs.iter().map(|x| x.cols()).sum();
    if count < 2 {
        return Err(Error::Degenerate(
            "batchnorm needs at least 2 values per channel".into(),
        ));
    }
    let mut sum = vec![0.0; ch];
    let mut sumsq = vec![0.0; ch];
    for x in xs {
        debug_assert_eq!(x.rows(), ch);
        for c in 0..ch {
            for &v in x.row(c) {
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
    }
    let n = count as f64;
    let mut mean = vec![0.0; ch];
    let mut inv_std = vec![0.0; ch];
    for c in 0..ch {
        mean[c] = sum[c] / n;
        let var = (sumsq[c] / n - mean[c] * mean[c]).max(0.0);
        inv_std[c] = 1.0 / (var + BN_EPS).sqrt();
        bn.running_mean[c] = (1.0 - momentum) * bn.running_mean[c] + momentum * mean[c];
        bn.running_var[c] = (1.0 - momentum) * bn.running_var[c] + momentum * var;
    }

    let mut ys = Vec::with_capacity(xs.len());
    let mut xhats = Vec::with_capacity(xs.len());
    for x in xs {
        let mut y = Mat::zeros(ch, x.cols());
        let mut xh = Mat::zeros(ch, x.cols());
        for c in 0..ch {
            let (g, b) = (bn.gamma[c], bn.beta[c]);
            for t in 0..x.cols() {
                let h = (x[(c, t)] - mean[c]) * inv_std[c];
                xh[(c, t)] = h;
                y[(c, t)] = g * h + b;
            }
        }
        ys.push(y);
        xhats.push(xh);
    }
    Ok((
        ys,
        BnBatchCache {
            mean,
            inv_std,
            xhat: xhats,
            count,
        },
    ))
}

/// Backward through training-mode batchnorm (gradients flow through the
/// batch statistics).
pub fn batchnorm_train_backward(
    bn: &BatchNorm,
    cache: &BnBatchCache,
    dys: &[Mat],
) -> (Vec<Mat>, Vec<f64>, Vec<f64>) {
    let ch = bn.channels();
    let n = cache.count as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    // sum(dy) and sum(dy * xhat) per channel over the whole set
    for (dy, xh) in dys.iter().zip(cache.xhat.iter()) {
        for c in 0..ch {
            for t in 0..dy.cols() {
                dgamma[c] += dy[(c, t)] * xh[(c, t)];
                dbeta[c] += dy[(c, t)];
            }
        }
    }
    let mut dxs = Vec::with_capacity(dys.len());
    for (dy, xh) in dys.iter().zip(cache.xhat.iter()) {
        let mut dx = Mat::zeros(ch, dy.cols());
        for c in 0..ch {
            let scale = bn.gamma[c] * cache.inv_std[c];
            let mean_dy = dbeta[c] / n;
            let mean_dy_xhat = dgamma[c] / n;
            for t in 0..dy.cols() {
                dx[(c, t)] = scale * (dy[(c, t)] - mean_dy - xh[(c, t)] * mean_dy_xhat);
            }
        }
        dxs.push(dx);
    }
    (dxs, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// PReLU
// ---------------------------------------------------------------------------

/// Per-channel parametric ReLU.
pub fn prelu(x: &Mat, slope: &[f64]) -> Mat {
    let mut y = Mat::zeros(x.rows(), x.cols());
    for c in 0..x.rows() {
        let a = slope[c];
        for (out, &v) in y.row_mut(c).iter_mut().zip(x.row(c)) {
            *out = if v >= 0.0 { v } else { a * v };
        }
    }
    y
}

pub fn prelu_backward(x: &Mat, slope: &[f64], dy: &Mat) -> (Mat, Vec<f64>) {
    let mut dx = Mat::zeros(x.rows(), x.cols());
    let mut dslope = vec![0.0; slope.len()];
    for c in 0..x.rows() {
        let a = slope[c];
        for t in 0..x.cols() {
            let v = x[(c, t)];
            let d = dy[(c, t)];
            if v >= 0.0 {
                dx[(c, t)] = d;
            } else {
                dx[(c, t)] = a * d;
                dslope[c] += v * d;
            }
        }
    }
    (dx, dslope)
}

// ---------------------------------------------------------------------------
// Squeeze-excitation
// ---------------------------------------------------------------------------

/// SE weights: squeeze to `bottleneck` and back.
/// `w1` is `bottleneck x ch`, `w2` is `ch x bottleneck`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeWeights {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

pub struct SeCache {
    pub squeeze: Vec<f64>,
    pub hidden: Vec<f64>,
    pub gate: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Channel gating: gate = sigmoid(W2 relu(W1 mean_t(x) + b1) + b2),
/// y[c,t] = x[c,t] * gate[c].
pub fn squeeze_excite(x: &Mat, se: &SeWeights) -> (Mat, SeCache) {
    let (ch, t_len) = (x.rows(), x.cols());
    let bott = se.w1.rows();
    let inv_t = 1.0 / t_len as f64;
    let squeeze: Vec<f64> = (0..ch)
        .map(|c| x.row(c).iter().sum::<f64>() * inv_t)
        .collect();
    let hidden: Vec<f64> = (0..bott)
        .map(|b| {
            let z: f64 = se.w1.row(b).iter().zip(&squeeze).map(|(w, s)| w * s).sum::<f64>()
                + se.b1[b];
            z.max(0.0)
        })
        .collect();
    let gate: Vec<f64> = (0..ch)
        .map(|c| {
            let z: f64 = se.w2.row(c).iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
                + se.b2[c];
            sigmoid(z)
        })
        .collect();
    let mut y = Mat::zeros(ch, t_len);
    for c in 0..ch {
        let g = gate[c];
        for (out, &v) in y.row_mut(c).iter_mut().zip(x.row(c)) {
            *out = v * g;
        }
    }
    (
        y,
        SeCache {
            squeeze,
            hidden,
            gate,
        },
    )
}

pub struct SeGrads {
    pub dw1: Mat,
    pub db1: Vec<f64>,
    pub dw2: Mat,
    pub db2: Vec<f64>,
}

pub fn squeeze_excite_backward(
    x: &Mat,
    se: &SeWeights,
    cache: &SeCache,
    dy: &Mat,
) -> (Mat, SeGrads) {
    let (ch, t_len) = (x.rows(), x.cols());
    let bott = se.w1.rows();
    let inv_t = 1.0 / t_len as f64;

    // d gate
    let dgate: Vec<f64> = (0..ch)
        .map(|c| {
            dy.row(c)
                .iter()
                .zip(x.row(c))
                .map(|(d, v)| d * v)
                .sum::<f64>()
        })
        .collect();
    // through the sigmoid
    let dz2: Vec<f64> = (0..ch)
        .map(|c| dgate[c] * cache.gate[c] * (1.0 - cache.gate[c]))
        .collect();
    let mut dw2 = Mat::zeros(ch, bott);
    for c in 0..ch {
        for b in 0..bott {
            dw2[(c, b)] = dz2[c] * cache.hidden[b];
        }
    }
    let db2 = dz2.clone();
    // through the relu
    let dhidden: Vec<f64> = (0..bott)
        .map(|b| (0..ch).map(|c| se.w2[(c, b)] * dz2[c]).sum())
        .collect();
    let dz1: Vec<f64> = (0..bott)
        .map(|b| if cache.hidden[b] > 0.0 { dhidden[b] } else { 0.0 })
        .collect();
    let mut dw1 = Mat::zeros(bott, ch);
    for b in 0..bott {
        for c in 0..ch {
            dw1[(b, c)] = dz1[b] * cache.squeeze[c];
        }
    }
    let db1 = dz1.clone();
    // back to the squeeze mean and the direct gating path
    let dsqueeze: Vec<f64> = (0..ch)
        .map(|c| (0..bott).map(|b| se.w1[(b, c)] * dz1[b]).sum())
        .collect();
    let mut dx = Mat::zeros(ch, t_len);
    for c in 0..ch {
        let g = cache.gate[c];
        let ds = dsqueeze[c] * inv_t;
        for t in 0..t_len {
            dx[(c, t)] = dy[(c, t)] * g + ds;
        }
    }
    (
        dx,
        SeGrads {
            dw1,
            db1,
            dw2,
            db2,
        },
    )
}

// ---------------------------------------------------------------------------
// Statistics pooling
// ---------------------------------------------------------------------------

/// Concatenated per-channel temporal mean and standard deviation
/// (population variance, epsilon inside the square root).
pub fn stats_pool(x: &Mat) -> Result<Vec<f64>> {
    let (ch, t_len) = (x.rows(), x.cols());
    if t_len < 2 {
        return Err(Error::Degenerate(format!(
            "statistics pooling needs >= 2 frames, got {t_len}"
        )));
    }
    let inv_t = 1.0 / t_len as f64;
    let mut out = vec![0.0; 2 * ch];
    for c in 0..ch {
        let mean = x.row(c).iter().sum::<f64>() * inv_t;
        let var = x
            .row(c)
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<f64>()
            * inv_t;
        out[c] = mean;
        out[ch + c] = (var + POOL_STD_EPS).sqrt();
    }
    Ok(out)
}

pub fn stats_pool_backward(x: &Mat, pooled: &[f64], dpooled: &[f64]) -> Mat {
    let (ch, t_len) = (x.rows(), x.cols());
    let inv_t = 1.0 / t_len as f64;
    let mut dx = Mat::zeros(ch, t_len);
    for c in 0..ch {
        let mean = pooled[c];
        let std = pooled[ch + c];
        let dmean = dpooled[c];
        let dstd = dpooled[ch + c];
        for t in 0..t_len {
            dx[(c, t)] = dmean * inv_t + dstd * (x[(c, t)] - mean) * inv_t / std;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Affine projection
// ---------------------------------------------------------------------------

/// y = W^T x + b with `w` stored input-major (`in x out`).
pub fn linear(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), n_in);
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate().take(n_in) {
        if xi == 0.0 {
            continue;
        }
        let wr = w.row(i);
        for (o, out) in y.iter_mut().enumerate().take(n_out) {
            *out += xi * wr[o];
        }
    }
    y
}

pub fn linear_backward(x: &[f64], w: &Mat, dy: &[f64]) -> (Vec<f64>, Mat, Vec<f64>) {
    let (n_in, n_out) = (w.rows(), w.cols());
    let mut dx = vec![0.0; n_in];
    let mut dw = Mat::zeros(n_in, n_out);
    for i in 0..n_in {
        let wr = w.row(i);
        let dwr = dw.row_mut(i);
        let mut acc = 0.0;
        for o in 0..n_out {
            acc += wr[o] * dy[o];
            dwr[o] = x[i] * dy[o];
        }
        dx[i] = acc;
    }
    (dx, dw, dy.to_vec())
}

// ---------------------------------------------------------------------------
// L2 normalization
// ---------------------------------------------------------------------------

pub fn l2_normalize(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Numeric(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    Ok((x.iter().map(|v| v / norm).collect(), norm))
}

/// dx = (dy - (dy . y) y) / norm, with y the normalized output.
pub fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj: f64 = dy.iter().zip(y).map(|(d, v)| d * v).sum();
    y.iter()
        .zip(dy)
        .map(|(&v, &d)| (d - proj * v) / norm)
        .collect()
}
