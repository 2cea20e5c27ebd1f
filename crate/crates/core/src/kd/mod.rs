//! Contrastive knowledge distillation: the similarity-matrix objective and
//! the desk-scale training loop with its synthetic corpus and teacher.

pub mod loss;
pub mod optimizer;
pub mod synth;
pub mod trainer;

pub use loss::{
    contrastive_loss, loss_backward, retrieval_accuracy, similarity_matrix, ContrastiveLoss,
    SimilarityMatrix, Temperature,
};
pub use optimizer::{Adam, AdamConfig};
pub use synth::{generate_corpus, generate_pair, SyntheticSpeaker, TeacherOracle};
pub use trainer::{
    build_toy_corpus, history_csv, oracle_seed, train_kd, EpochStats, TrainConfig, TrainOutcome,
};
