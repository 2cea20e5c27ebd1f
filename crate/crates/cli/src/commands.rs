//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use spkr_core::config::PipelineConfig;
use spkr_core::dsp::{wav, FeatureExtractor, StreamingExtractor};
use spkr_core::embedding::Embedding;
use spkr_core::error::{Error, Result};
use spkr_core::io::{load_weights, read_embedding, save_weights, write_embedding, write_tensor_file};
use spkr_core::kd;
use spkr_core::nn::{param_count, tensor_specs, EncoderWeights};
use spkr_core::refine::{
    assemble_conditioning, utterance_embedding, ChunkConfig, ChunkEmbedder, EmbedderMode,
    RefinementConfig, StreamRefiner, TinyEmbedder,
};
use spkr_core::sv::{eer, min_dcf, score_trials, DcfParams, Trial};

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p),
        None => Ok(PipelineConfig::default()),
    }
}

/// Load weights and check them against the pipeline. An explicit --config
/// must match the weight file exactly; otherwise the weight file's own
/// architecture is adopted, provided the front-end feeds it.
fn load_checked_weights(
    path: &Path,
    cfg: &mut PipelineConfig,
    config_explicit: bool,
) -> Result<EncoderWeights> {
    let weights = load_weights(path)?;
    if config_explicit {
        weights.expect_config(&cfg.encoder)?;
    } else {
        cfg.encoder = weights.cfg.clone();
    }
    if cfg.feature.feature_dim() != weights.cfg.in_dim {
        return Err(Error::ConfigMismatch(format!(
            "front-end produces {} feature rows, weights expect {}",
            cfg.feature.feature_dim(),
            weights.cfg.in_dim
        )));
    }
    Ok(weights)
}

pub fn embed(wav_path: &Path, weights_path: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    let weights = load_checked_weights(weights_path, &mut cfg, config.is_some())?;
    let wave = wav::read_wav(wav_path)?;
    let extractor = FeatureExtractor::new(cfg.feature.clone())?;
    let features = extractor.extract(&wave)?;
    let embedder = TinyEmbedder::new(weights);
    let embedding = utterance_embedding(&features, &embedder, &cfg.chunk)?;
    write_embedding(out, &embedding)?;
    println!(
        "embedded {} ({} frames) -> {} ({} dims)",
        wav_path.display(),
        features.frames(),
        out.display(),
        embedding.dim()
    );
    Ok(())
}

pub fn train_kd(
    config: Option<&Path>,
    out_weights: &Path,
    history_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    let (corpus, oracle) = kd::build_toy_corpus(&cfg.train, &cfg.encoder)?;
    log::info!(
        "training on {} synthetic speakers (batch {}, {} epochs)",
        corpus.len(),
        cfg.train.batch_size,
        cfg.train.epochs
    );
    let outcome = kd::train_kd(&cfg.train, &cfg.encoder, &corpus, &oracle)?;
    save_weights(out_weights, &outcome.weights)?;
    if let Some(h) = history_path {
        fs::write(h, kd::history_csv(&outcome.history))?;
    }
    let first = outcome.history.first().expect("at least one epoch");
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs: loss {:.4} -> {:.4}, val retrieval {:.3}, tau {:.3}",
        outcome.history.len(),
        first.loss,
        last.loss,
        last.retrieval_accuracy,
        last.tau
    );
    println!("weights written to {}", out_weights.display());
    Ok(())
}

pub struct RefineRequest {
    pub wav: PathBuf,
    pub reference: PathBuf,
    pub weights: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub chunk_ms: Option<f64>,
    pub oracle_seed: Option<u64>,
    pub track_csv: PathBuf,
    pub conditioning: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn refine(req: &RefineRequest) -> Result<()> {
    let mut cfg = load_config(req.config.as_deref())?;

    let mode = match req.mode.as_deref() {
        None => cfg.refine.mode,
        Some("light") => EmbedderMode::Light,
        Some("oracle") => EmbedderMode::Oracle,
        Some(other) => {
            return Err(Error::Config(format!(
                "mode must be light or oracle, got {other}"
            )))
        }
    };
    // alpha: explicit flag, else the mode default when the mode was given
    // explicitly, else the config value
    let mut refine_cfg = cfg.refine.clone();
    refine_cfg.mode = mode;
    if req.mode.is_some() {
        refine_cfg.alpha = RefinementConfig::for_mode(mode).alpha;
    }
    if let Some(a) = req.alpha {
        refine_cfg.alpha = a;
    }
    refine_cfg.validate()?;

    let chunk = match req.chunk_ms {
        Some(ms) => ChunkConfig {
            chunk_len: cfg.chunk_frames_from_ms(ms)?,
        },
        None => cfg.chunk.clone(),
    };

    let reference = read_embedding(&req.reference)?;
    let tiny;
    let oracle;
    let embedder: &dyn ChunkEmbedder = match mode {
        EmbedderMode::Light => {
            let path = req.weights.as_deref().ok_or_else(|| {
                Error::Config("light mode needs --weights".into())
            })?;
            tiny = TinyEmbedder::new(load_checked_weights(path, &mut cfg, req.config.is_some())?);
            &tiny
        }
        EmbedderMode::Oracle => {
            let seed = req.oracle_seed.unwrap_or_else(|| kd::oracle_seed(cfg.seed));
            oracle = kd::TeacherOracle::new(cfg.encoder.in_dim, reference.dim(), seed);
            &oracle
        }
    };

    let wave = wav::read_wav(&req.wav)?;
    let extractor = FeatureExtractor::new(cfg.feature.clone())?;
    let mut feature_stream = StreamingExtractor::new(&extractor)?;
    let mut refiner = StreamRefiner::new(embedder, reference.clone(), chunk, refine_cfg)?;

    let mut points = Vec::new();
    for block in wave.samples.chunks(1600) {
        for col in feature_stream.push_samples(block) {
            points.extend(refiner.push_frame(&col)?);
        }
    }
    for col in feature_stream.finish() {
        points.extend(refiner.push_frame(&col)?);
    }
    points.extend(refiner.finish()?);

    let mut csv = String::from("frame_index,raw_similarity,scaled_clipped\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p.frame, p.raw, p.scaled));
    }
    let mut f = fs::File::create(&req.track_csv)?;
    f.write_all(csv.as_bytes())?;

    if let Some(cond_path) = &req.conditioning {
        let scaled: Vec<f64> = points.iter().map(|p| p.scaled).collect();
        let cond = assemble_conditioning(&reference, &scaled)?;
        write_tensor_file(
            cond_path,
            &[(
                "conditioning",
                cond.data.rows(),
                cond.data.cols(),
                cond.data.data(),
            )],
        )?;
    }
    let mean_scaled: f64 = points.iter().map(|p| p.scaled).sum::<f64>() / points.len() as f64;
    println!(
        "refined {} frames (alpha {}, {:?}): mean scaled similarity {:.4}",
        points.len(),
        req.alpha.map_or_else(
            || "default".to_string(),
            |a| a.to_string()
        ),
        mode,
        mean_scaled
    );
    Ok(())
}

pub fn eval_sv(
    trials_path: &Path,
    weights_path: &Path,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    let weights = load_checked_weights(weights_path, &mut cfg, config.is_some())?;
    let embedder = TinyEmbedder::new(weights);
    let extractor = FeatureExtractor::new(cfg.feature.clone())?;
    let base = trials_path.parent().unwrap_or(Path::new("."));

    let text = fs::read_to_string(trials_path)?;
    let mut trials = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected enroll<TAB>test<TAB>label",
                trials_path.display(),
                lineno + 1
            )));
        }
        let target = match fields[2] {
            "1" | "target" => true,
            "0" | "nontarget" => false,
            other => {
                return Err(Error::Format(format!(
                    "{}:{}: label must be 1/0, got {other}",
                    trials_path.display(),
                    lineno + 1
                )))
            }
        };
        let enroll = load_side(base, fields[0], &extractor, &embedder, &cfg.chunk)?;
        let test = load_side(base, fields[1], &extractor, &embedder, &cfg.chunk)?;
        trials.push(Trial::new(enroll, test, target)?);
    }
    if trials.is_empty() {
        return Err(Error::Degenerate("trial list is empty".into()));
    }

    let scores = score_trials(&trials)?;
    let labels: Vec<bool> = trials.iter().map(|t| t.target).collect();
    let n_target = labels.iter().filter(|&&l| l).count();
    let (eer_value, eer_threshold) = eer(&scores, &labels)?;
    let params = DcfParams {
        p_target,
        c_miss,
        c_fa,
    };
    let (dcf_value, dcf_threshold) = min_dcf(&scores, &labels, &params)?;

    println!(
        "trials: {} ({} target / {} nontarget)",
        trials.len(),
        n_target,
        trials.len() - n_target
    );
    println!("eer: {:.4}% (threshold {:.6})", eer_value * 100.0, eer_threshold);
    println!(
        "min_dcf: {:.4} (threshold {:.6}, p_target={}, c_miss={}, c_fa={})",
        dcf_value, dcf_threshold, p_target, c_miss, c_fa
    );
    Ok(())
}

fn load_side(
    base: &Path,
    field: &str,
    extractor: &FeatureExtractor,
    embedder: &TinyEmbedder,
    chunk: &ChunkConfig,
) -> Result<Embedding> {
    let path = base.join(field);
    if path.extension().is_some_and(|e| e == "emb") {
        read_embedding(&path)
    } else {
        let wave = wav::read_wav(&path)?;
        let features = extractor.extract(&wave)?;
        utterance_embedding(&features, embedder, chunk)
    }
}

pub fn inspect_weights(weights_path: Option<&Path>) -> Result<()> {
    let (cfg, from_file) = match weights_path {
        Some(p) => (load_weights(p)?.cfg, true),
        None => (spkr_core::nn::EncoderConfig::default(), false),
    };
    if from_file {
        println!("weights: {}", weights_path.unwrap().display());
    } else {
        println!("weights: <default architecture>");
    }
    println!(
        "config: in_dim={} blocks={:?} kernels={:?} se={:?} pooled={} embed={}",
        cfg.in_dim, cfg.block_channels, cfg.kernels, cfg.se_bottleneck, cfg.pooled_dim, cfg.embed_dim
    );
    println!("{:<28} {:>12} {:>10}", "tensor", "shape", "values");
    let mut learnable = 0usize;
    let mut stats = 0usize;
    for spec in tensor_specs(&cfg) {
        println!(
            "{:<28} {:>12} {:>10}",
            spec.name,
            format!("{}x{}", spec.rows, spec.cols),
            spec.len()
        );
        if spec.learnable {
            learnable += spec.len();
        } else {
            stats += spec.len();
        }
    }
    println!("learnable parameters: {learnable}");
    println!("running-statistic values: {stats}");
    debug_assert_eq!(learnable, param_count(&cfg)?);
    Ok(())
}
