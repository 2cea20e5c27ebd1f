//! The tiny speaker encoder: separable-convolution blocks with
//! squeeze-excitation, statistics pooling, and a linear projection to a
//! unit-norm embedding. Forward and backward passes are written by hand.

pub mod encoder;
pub mod ops;

pub use encoder::{
    backward, backward_train, forward, forward_cached, forward_train, param_count, tensor_specs,
    BatchTrainCache, EncoderConfig, EncoderGrads, EncoderWeights, ForwardCache, TensorSpec,
};

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference helpers shared by the operator tests.

    use crate::mat::Mat;
    use rand::Rng;

    pub const FD_H: f64 = 1e-4;
    pub const FD_TOL: f64 = 1e-4;

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    pub fn rng_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    pub fn rng_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}
