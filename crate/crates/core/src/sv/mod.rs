//! Speaker-verification scoring: cosine trial scores, equal error rate, and
//! normalized minimum detection cost.
//!
//! Convention: a trial is accepted when its score is >= the threshold. The
//! threshold sweep visits every observed score plus a reject-all point, so
//! both trivial operating points are considered.

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::par;

/// One verification trial: enrollment vs test embedding and the
/// ground-truth same-speaker label.
#[derive(Debug, Clone)]
pub struct Trial {
    pub enroll: Embedding,
    pub test: Embedding,
    pub target: bool,
}

impl Trial {
    pub fn new(enroll: Embedding, test: Embedding, target: bool) -> Result<Self> {
        if !enroll.is_normalized() || !test.is_normalized() {
            return Err(Error::Numeric(
                "trial embeddings must be unit-norm".into(),
            ));
        }
        Ok(Trial {
            enroll,
            test,
            target,
        })
    }
}

/// Detection-cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config("p_target must be in (0, 1)".into()));
        }
        if self.c_miss <= 0.0 || self.c_fa <= 0.0 {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine score of each trial.
pub fn score_trials(trials: &[Trial]) -> Result<Vec<f64>> {
    par::map(trials, |t| t.enroll.dot(&t.test))
        .into_iter()
        .collect()
}

/// False-accept and false-reject rates at each candidate threshold,
/// ascending; the final entry is the reject-all point.
struct Sweep {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    frr: Vec<f64>,
}

fn sweep(scores: &[f64], labels: &[bool]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite trial score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "need both trial classes, got {n_pos} target / {n_neg} nontarget"
        )));
    }

    let mut pairs: Vec<(f64, bool)> = scores.iter().cloned().zip(labels.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut thresholds = Vec::new();
    let mut far = Vec::new();
    let mut frr = Vec::new();
    let mut pos_below = 0usize; // positives with score < threshold
    let mut neg_below = 0usize;
    let mut idx = 0usize;
    while idx < pairs.len() {
        let threshold = pairs[idx].0;
        thresholds.push(threshold);
        far.push((n_neg - neg_below) as f64 / n_neg as f64);
        frr.push(pos_below as f64 / n_pos as f64);
        // consume the tie group at this threshold
        while idx < pairs.len() && pairs[idx].0 == threshold {
            if pairs[idx].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            idx += 1;
        }
    }
    // reject-all point
    thresholds.push(f64::INFINITY);
    far.push(0.0);
    frr.push(1.0);
    Ok(Sweep {
        thresholds,
        far,
        frr,
    })
}

/// Equal error rate and the threshold where the false-accept and
/// false-reject rates cross, with linear interpolation between adjacent
/// sweep points when there is no exact crossing. The interpolated threshold
/// falls back to the last finite sweep point when the crossing involves the
/// reject-all endpoint.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let s = sweep(scores, labels)?;
    // far - frr is non-increasing: 1 at the lowest threshold, -1 at the top
    for i in 0..s.thresholds.len() {
        let diff = s.far[i] - s.frr[i];
        if diff == 0.0 {
            return Ok((s.far[i], s.thresholds[i]));
        }
        if diff < 0.0 {
            debug_assert!(i > 0);
            let (fa_a, fr_a) = (s.far[i - 1], s.frr[i - 1]);
            let (fa_b, fr_b) = (s.far[i], s.frr[i]);
            let diff_a = fa_a - fr_a;
            let diff_b = fa_b - fr_b;
            let t = diff_a / (diff_a - diff_b);
            let value = fa_a + t * (fa_b - fa_a);
            let threshold = if s.thresholds[i].is_finite() {
                s.thresholds[i - 1] + t * (s.thresholds[i] - s.thresholds[i - 1])
            } else {
                s.thresholds[i - 1]
            };
            return Ok((value, threshold));
        }
    }
    unreachable!("far - frr ends at -1");
}

/// Minimum normalized detection cost over the threshold sweep:
/// min over thresholds of
/// (c_miss * p_target * FRR + c_fa * (1 - p_target) * FAR)
///   / min(c_miss * p_target, c_fa * (1 - p_target)).
pub fn min_dcf(scores: &[f64], labels: &[bool], p: &DcfParams) -> Result<(f64, f64)> {
    p.validate()?;
    let s = sweep(scores, labels)?;
    let w_miss = p.c_miss * p.p_target;
    let w_fa = p.c_fa * (1.0 - p.p_target);
    let norm = w_miss.min(w_fa);
    let mut best = f64::INFINITY;
    let mut best_threshold = s.thresholds[0];
    for i in 0..s.thresholds.len() {
        let dcf = (w_miss * s.frr[i] + w_fa * s.far[i]) / norm;
        if dcf < best {
            best = dcf;
            best_threshold = s.thresholds[i];
        }
    }
    Ok((best, best_threshold))
}
