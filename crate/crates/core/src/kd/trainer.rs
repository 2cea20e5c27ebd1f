//! Desk-scale contrastive distillation: match the tiny encoder's chunk
//! embeddings to a frozen teacher's template embeddings over a synthetic
//! speaker corpus.
//!
//! The realized dataset (pair draws and batch partition) is fixed up front
//! from the seed, so training is bit-reproducible and, with learning rate 0,
//! the loss is constant across epochs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kd::loss::{
    contrastive_loss, loss_backward, retrieval_accuracy, similarity_matrix, Temperature,
};
use crate::kd::optimizer::{Adam, AdamConfig};
use crate::kd::synth::{generate_corpus, generate_pair, SyntheticSpeaker, TeacherOracle};
use crate::mat::Mat;
use crate::nn::{self, EncoderConfig, EncoderWeights};
use crate::refine::{chunk_starts, ChunkConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Contrastive batch size N (distinct speakers per batch).
    pub batch_size: usize,
    /// Chunk length T' in frames.
    pub chunk_len: usize,
    /// Excerpt length T in frames.
    pub excerpt_frames: usize,
    pub epochs: usize,
    /// Fixed pair realizations drawn per training speaker.
    pub pairs_per_speaker: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub n_speakers: usize,
    /// Held-out fraction; at least one full batch of speakers is held out.
    pub val_fraction: f64,
    pub pitch_jitter: f64,
    pub noise_level: f64,
    /// Latent dimensionality of the synthetic templates.
    pub template_rank: usize,
    pub init_log_tau: f64,
    pub bn_momentum: f64,
    pub parallel: bool,
}

impl TrainConfig {
    /// The 32-speaker desk-scale setup.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            batch_size: 8,
            chunk_len: 100,
            excerpt_frames: 300,
            epochs: 30,
            pairs_per_speaker: 2,
            adam: AdamConfig::default(),
            seed,
            n_speakers: 32,
            val_fraction: 0.05,
            pitch_jitter: 0.25,
            noise_level: 0.15,
            template_rank: 10,
            init_log_tau: 1.0,
            bn_momentum: 0.1,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (contrastive loss is degenerate at N=1)".into(),
            ));
        }
        if self.chunk_len < 2 || self.chunk_len % 2 != 0 {
            return Err(Error::Config("chunk_len must be even and >= 2".into()));
        }
        if self.excerpt_frames < self.chunk_len {
            return Err(Error::Config(
                "excerpt_frames must be >= chunk_len".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.pairs_per_speaker == 0 {
            return Err(Error::Config("pairs_per_speaker must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub row_loss: f64,
    pub col_loss: f64,
    pub tau: f64,
    pub retrieval_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: EncoderWeights,
    pub history: Vec<EpochStats>,
    pub train_ids: Vec<u32>,
    pub val_ids: Vec<u32>,
}

/// Seed for the frozen teacher projection, derived from the training seed.
pub fn oracle_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(2)
}

/// Corpus and oracle derived from the training seed.
pub fn build_toy_corpus(
    cfg: &TrainConfig,
    enc: &EncoderConfig,
) -> Result<(Vec<SyntheticSpeaker>, TeacherOracle)> {
    let corpus_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let min_distance = (cfg.template_rank as f64).sqrt() * 0.7;
    let corpus = generate_corpus(
        cfg.n_speakers,
        enc.in_dim,
        cfg.template_rank,
        cfg.pitch_jitter,
        cfg.noise_level,
        min_distance,
        corpus_seed,
    )?;
    let oracle = TeacherOracle::new(enc.in_dim, enc.embed_dim, oracle_seed(cfg.seed));
    Ok((corpus, oracle))
}

struct Pair {
    teacher: Vec<f64>,
    features: Mat,
}

/// Run contrastive distillation and return the final (f32-quantized) weights
/// plus the per-epoch history.
pub fn train_kd(
    cfg: &TrainConfig,
    enc: &EncoderConfig,
    corpus: &[SyntheticSpeaker],
    oracle: &TeacherOracle,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    enc.validate()?;
    if oracle.in_dim() != enc.in_dim || oracle.embed_dim() != enc.embed_dim {
        return Err(Error::ConfigMismatch(format!(
            "oracle maps {} -> {}, encoder expects {} -> {}",
            oracle.in_dim(),
            oracle.embed_dim(),
            enc.in_dim,
            enc.embed_dim
        )));
    }
    for s in corpus {
        if s.template.len() != enc.in_dim {
            return Err(Error::Shape(format!(
                "speaker {} template has {} dims, encoder expects {}",
                s.id,
                s.template.len(),
                enc.in_dim
            )));
        }
    }

    // hold out at least one full batch of speakers for validation
    let n = corpus.len();
    let val_count = ((n as f64 * cfg.val_fraction).ceil() as usize).max(cfg.batch_size);
    if n < val_count + cfg.batch_size {
        return Err(Error::Config(format!(
            "corpus of {n} cannot provide {val_count} validation speakers plus a training batch"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng);
    let (val_idx, train_idx) = order.split_at(val_count);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    // fixed batch partition: drop the remainder that cannot fill a batch
    train_idx.truncate(train_idx.len() - train_idx.len() % cfg.batch_size);

    // fixed pair realizations
    let val_pairs: Vec<Pair> = val_idx
        .iter()
        .map(|&i| {
            generate_pair(&corpus[i], cfg.excerpt_frames, oracle, &mut rng).map(
                |(teacher, features)| Pair { teacher, features },
            )
        })
        .collect::<Result<_>>()?;
    let train_pairs: Vec<Vec<Pair>> = train_idx
        .iter()
        .map(|&i| {
            (0..cfg.pairs_per_speaker)
                .map(|_| {
                    generate_pair(&corpus[i], cfg.excerpt_frames, oracle, &mut rng).map(
                        |(teacher, features)| Pair { teacher, features },
                    )
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let chunk_cfg = ChunkConfig {
        chunk_len: cfg.chunk_len,
    };
    let starts = chunk_starts(cfg.excerpt_frames, &chunk_cfg)?;
    let k = starts.len();

    let weight_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(3);
    let mut weights = EncoderWeights::init(enc, weight_seed)?;
    let mut temperature = Temperature::new(cfg.init_log_tau);

    let grad_lens: Vec<usize> = nn::EncoderGrads::zeros(enc)
        .params()
        .iter()
        .map(|p| p.len())
        .chain(std::iter::once(1))
        .collect();
    let mut adam = Adam::new(cfg.adam, &grad_lens);

    let n_batches = train_idx.len() / cfg.batch_size;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for round in 0..cfg.pairs_per_speaker {
            for batch in 0..n_batches {
                let members = &train_idx[batch * cfg.batch_size..(batch + 1) * cfg.batch_size];
                let pairs: Vec<&Pair> = (0..cfg.batch_size)
                    .map(|i| &train_pairs[batch * cfg.batch_size + i][round])
                    .collect();
                debug_assert_eq!(members.len(), pairs.len());

                // item-major chunk batch
                let chunks: Vec<Mat> = pairs
                    .iter()
                    .flat_map(|p| starts.iter().map(|&s| p.features.col_slice(s, cfg.chunk_len)))
                    .collect();
                let (embs, cache) =
                    nn::forward_train(&mut weights, &chunks, cfg.bn_momentum, cfg.parallel)?;

                let teacher: Vec<Vec<f64>> = pairs.iter().map(|p| p.teacher.clone()).collect();
                let student: Vec<Vec<Vec<f64>>> =
                    embs.chunks(k).map(|c| c.to_vec()).collect();
                let s = similarity_matrix(&teacher, &student)?;
                let loss = contrastive_loss(&s, temperature.tau())?;
                if !loss.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged at epoch {epoch} batch {batch}: loss = {}",
                        loss.total
                    )));
                }
                sums.0 += loss.total;
                sums.1 += loss.row_loss;
                sums.2 += loss.col_loss;
                steps += 1;

                let (ds, d_log_tau) = loss_backward(&s, temperature.tau());
                // dL/dM_{j,k} = (1/K) sum_i dS[i,j] * E_i
                let inv_k = 1.0 / k as f64;
                let upstream: Vec<Vec<f64>> = (0..cfg.batch_size)
                    .flat_map(|j| {
                        let mut u = vec![0.0; enc.embed_dim];
                        for (i, e) in teacher.iter().enumerate() {
                            let w = ds[(i, j)] * inv_k;
                            for (uu, ee) in u.iter_mut().zip(e) {
                                *uu += w * ee;
                            }
                        }
                        std::iter::repeat_n(u, k)
                    })
                    .collect();
                let grads = nn::backward_train(&weights, &cache, &upstream, cfg.parallel)?;
                if !grads.is_finite() || !d_log_tau.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged at epoch {epoch} batch {batch}: non-finite gradients"
                    )));
                }

                let mut log_tau_param = [temperature.log_tau];
                let mut params = weights.params_mut();
                params.push(&mut log_tau_param);
                let mut grad_views = grads.params();
                let d_log_tau_arr = [d_log_tau];
                grad_views.push(&d_log_tau_arr);
                adam.step(&mut params, &grad_views);
                temperature.log_tau = log_tau_param[0];
            }
        }

        let acc = validation_accuracy(&weights, &val_pairs, &starts, cfg, k)?;
        let denom = steps as f64;
        let stats = EpochStats {
            epoch,
            loss: sums.0 / denom,
            row_loss: sums.1 / denom,
            col_loss: sums.2 / denom,
            tau: temperature.tau(),
            retrieval_accuracy: acc,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} tau {:.3} val-retrieval {:.3}",
            stats.loss,
            stats.tau,
            stats.retrieval_accuracy
        );
        history.push(stats);
    }

    // saved weights run on running statistics; pin values to the f32 grid
    // the weight file stores
    weights.quantize_f32();
    weights.validate_values()?;
    Ok(TrainOutcome {
        weights,
        history,
        train_ids: train_idx.iter().map(|&i| corpus[i].id).collect(),
        val_ids: val_idx.iter().map(|&i| corpus[i].id).collect(),
    })
}

/// Retrieval accuracy over the held-out speakers, embedded in inference
/// mode (running statistics), as the saved weights would behave.
fn validation_accuracy(
    weights: &EncoderWeights,
    val_pairs: &[Pair],
    starts: &[usize],
    cfg: &TrainConfig,
    k: usize,
) -> Result<f64> {
    let teacher: Vec<Vec<f64>> = val_pairs.iter().map(|p| p.teacher.clone()).collect();
    let student: Vec<Vec<Vec<f64>>> = val_pairs
        .iter()
        .map(|p| {
            starts
                .iter()
                .map(|&s| nn::forward(weights, &p.features.col_slice(s, cfg.chunk_len)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    debug_assert!(student.iter().all(|s| s.len() == k));
    let s = similarity_matrix(&teacher, &student)?;
    Ok(retrieval_accuracy(&s))
}

/// CSV rendering of the history:
/// `epoch,loss,row_loss,col_loss,tau,retrieval_accuracy`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,row_loss,col_loss,tau,retrieval_accuracy\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch, h.loss, h.row_loss, h.col_loss, h.tau, h.retrieval_accuracy
        ));
    }
    out
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}
