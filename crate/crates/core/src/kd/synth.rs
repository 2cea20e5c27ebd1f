//! Synthetic desk-scale training data: speakers as spectral templates with
//! controlled intra-speaker variability, and a frozen random-projection
//! teacher standing in for a heavy reference encoder.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::ops::l2_normalize;

#[derive(Debug, Clone)]
pub struct SyntheticSpeaker {
    pub id: u32,
    /// Clean spectral template, one value per feature dimension.
    pub template: Vec<f64>,
    /// Amplitude of the smooth temporal modulation.
    pub pitch_jitter: f64,
    /// Per-frame gaussian noise level.
    pub noise_level: f64,
}

/// Rejection-sample `n` speakers whose templates keep a minimum pairwise
/// L2 distance in latent space.
///
/// Templates live on a shared `rank`-dimensional latent basis (speaker
/// variation is low-dimensional relative to the feature space); a training
/// split larger than `rank` can therefore span it, which is what makes the
/// distillation target identifiable on held-out speakers.
pub fn generate_corpus(
    n: usize,
    dim: usize,
    rank: usize,
    pitch_jitter: f64,
    noise_level: f64,
    min_distance: f64,
    seed: u64,
) -> Result<Vec<SyntheticSpeaker>> {
    if rank == 0 || rank > dim {
        return Err(Error::Config(format!(
            "template rank {rank} must be in 1..={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // shared basis; entry variance 1/rank keeps template entries ~ N(0, 1)
    let scale = 1.0 / (rank as f64).sqrt();
    let basis = Mat::from_fn(dim, rank, |_, _| {
        let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        g * scale
    });

    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut speakers: Vec<SyntheticSpeaker> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while speakers.len() < n {
        attempts += 1;
        if attempts > 100 * n + 1000 {
            return Err(Error::Config(format!(
                "cannot place {n} latents with min distance {min_distance} in {rank} dims"
            )));
        }
        let z: Vec<f64> = (0..rank)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let far_enough = latents.iter().all(|other| {
            let d2: f64 = other
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= min_distance
        });
        if far_enough {
            let template: Vec<f64> = (0..dim)
                .map(|r| basis.row(r).iter().zip(&z).map(|(b, v)| b * v).sum())
                .collect();
            speakers.push(SyntheticSpeaker {
                id: speakers.len() as u32,
                template,
                pitch_jitter,
                noise_level,
            });
            latents.push(z);
        }
    }
    Ok(speakers)
}

/// Frozen random projection from feature space to the reference embedding
/// space; the distillation target.
#[derive(Debug, Clone)]
pub struct TeacherOracle {
    projection: Mat,
}

impl TeacherOracle {
    pub fn new(in_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let projection = Mat::from_fn(embed_dim, in_dim, |_, _| {
            let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            g * scale
        });
        TeacherOracle { projection }
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.projection.cols()
    }

    /// Unit-norm projection of a clean template.
    pub fn embed_template(&self, template: &[f64]) -> Result<Vec<f64>> {
        if template.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "template has {} dims, oracle expects {}",
                template.len(),
                self.in_dim()
            )));
        }
        let raw: Vec<f64> = (0..self.projection.rows())
            .map(|r| {
                self.projection
                    .row(r)
                    .iter()
                    .zip(template)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect();
        Ok(l2_normalize(&raw)?.0)
    }

    /// Unit-norm projection of a feature chunk's temporal mean. This is the
    /// reference-space chunk embedder used by the oracle refinement mode.
    pub fn embed_feature_mean(&self, chunk: &Mat) -> Result<Vec<f64>> {
        let t = chunk.cols();
        if t == 0 {
            return Err(Error::Shape("empty chunk".into()));
        }
        let mean: Vec<f64> = (0..chunk.rows())
            .map(|r| chunk.row(r).iter().sum::<f64>() / t as f64)
            .collect();
        self.embed_template(&mean)
    }
}

impl crate::refine::ChunkEmbedder for TeacherOracle {
    fn embed_dim(&self) -> usize {
        self.embed_dim()
    }

    fn embed_chunk(&self, chunk: &Mat) -> Result<crate::embedding::Embedding> {
        crate::embedding::Embedding::from_normalized_f64(&self.embed_feature_mean(chunk)?)
    }
}

/// One training pair: the teacher embedding of the clean template, and a
/// noisy student feature excerpt. The template is broadcast over time, a
/// smooth sinusoidal modulation is added along a random direction, then
/// per-frame gaussian noise.
pub fn generate_pair(
    speaker: &SyntheticSpeaker,
    frames: usize,
    oracle: &TeacherOracle,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Mat)> {
    let dim = speaker.template.len();
    let teacher = oracle.embed_template(&speaker.template)?;

    let cycles: f64 = rng.random_range(0.5..3.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut direction: Vec<f64> = (0..dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for d in direction.iter_mut() {
        *d /= norm;
    }

    let mut features = Mat::zeros(dim, frames);
    for t in 0..frames {
        let wobble = (std::f64::consts::TAU * cycles * t as f64 / frames as f64 + phase).sin();
        for c in 0..dim {
            let noise: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            features[(c, t)] = speaker.template[c]
                + speaker.pitch_jitter * wobble * direction[c]
                + speaker.noise_level * noise;
        }
    }
    Ok((teacher, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_separated() {
        let a = generate_corpus(16, 20, 6, 0.2, 0.1, 1.5, 7).unwrap();
        let b = generate_corpus(16, 20, 6, 0.2, 0.1, 1.5, 7).unwrap();
        assert_eq!(a.len(), 16);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.template, y.template);
        }
        // latent min distance implies template separation under the shared
        // basis; check the templates are at least pairwise distinct
        for i in 0..16 {
            for j in (i + 1)..16 {
                let d: f64 = a[i]
                    .template
                    .iter()
                    .zip(&a[j].template)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > 0.1, "speakers {i},{j} too close: {d}");
            }
        }
    }

    #[test]
    fn corpus_templates_share_a_low_rank_basis() {
        let rank = 4;
        let speakers = generate_corpus(12, 16, rank, 0.0, 0.0, 0.5, 3).unwrap();
        // every template must be a combination of the first `rank`
        // linearly-independent templates: check via Gram-Schmidt residual
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for s in &speakers {
            let mut v = s.template.clone();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                basis.push(v);
            }
        }
        assert_eq!(basis.len(), rank);
    }

    #[test]
    fn noiseless_pair_is_the_broadcast_template() {
        let speaker = SyntheticSpeaker {
            id: 0,
            template: vec![1.0, -2.0, 0.5],
            pitch_jitter: 0.0,
            noise_level: 0.0,
        };
        let oracle = TeacherOracle::new(3, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, f) = generate_pair(&speaker, 5, &oracle, &mut rng).unwrap();
        for t in 0..5 {
            assert_eq!(f[(0, t)], 1.0);
            assert_eq!(f[(1, t)], -2.0);
            assert_eq!(f[(2, t)], 0.5);
        }
    }

    #[test]
    fn same_seed_gives_identical_pairs() {
        let speaker = SyntheticSpeaker {
            id: 0,
            template: vec![0.3; 6],
            pitch_jitter: 0.2,
            noise_level: 0.1,
        };
        let oracle = TeacherOracle::new(6, 4, 1);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let (t1, f1) = generate_pair(&speaker, 7, &oracle, &mut r1).unwrap();
        let (t2, f2) = generate_pair(&speaker, 7, &oracle, &mut r2).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(f1, f2);
    }

    #[test]
    fn orthogonal_templates_give_dissimilar_teachers() {
        // evaluate the oracle on two orthogonal templates directly
        let dim = 40;
        let mut ta = vec![0.0; dim];
        let mut tb = vec![0.0; dim];
        for i in 0..dim / 2 {
            ta[i] = 1.0;
            tb[dim / 2 + i] = 1.0;
        }
        let oracle = TeacherOracle::new(dim, 64, 5);
        let ea = oracle.embed_template(&ta).unwrap();
        let eb = oracle.embed_template(&tb).unwrap();
        let cos: f64 = ea.iter().zip(&eb).map(|(a, b)| a * b).sum();
        assert!(cos.abs() < 0.5, "teacher cosine {cos}");
    }

    #[test]
    fn teacher_embeddings_are_unit_norm() {
        let oracle = TeacherOracle::new(8, 16, 11);
        let e = oracle.embed_template(&vec![0.7; 8]).unwrap();
        let n: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
