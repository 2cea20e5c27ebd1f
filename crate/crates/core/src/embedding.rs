//! Fixed-length speaker embedding vectors.
//!
//! Values are stored as f32, matching the on-disk embedding format exactly;
//! similarity math accumulates in f64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f32>, normalized: bool) -> Result<Self> {
        let e = Embedding { values, normalized };
        e.validate()?;
        Ok(e)
    }

    /// Build from an f64 vector that is already unit-norm (within 1e-6
    /// after the f32 cast).
    pub fn from_normalized_f64(values: &[f64]) -> Result<Self> {
        Embedding::new(values.iter().map(|&v| v as f32).collect(), true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Shape("empty embedding".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite values".into()));
        }
        if self.normalized {
            let norm = self.norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Numeric(format!(
                    "embedding flagged normalized has norm {norm}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// f64 copy of the values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Cosine similarity via dot product (exact for normalized inputs).
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "embedding dims disagree: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_flag_is_checked() {
        assert!(Embedding::new(vec![0.6, 0.8], true).is_ok());
        assert!(matches!(
            Embedding::new(vec![0.5, 0.5], true),
            Err(Error::Numeric(_))
        ));
        // unnormalized values are fine when not flagged
        assert!(Embedding::new(vec![0.5, 0.5], false).is_ok());
    }

    #[test]
    fn dot_product_and_dim_check() {
        let a = Embedding::new(vec![1.0, 0.0], true).unwrap();
        let b = Embedding::new(vec![0.0, 1.0], true).unwrap();
        assert_eq!(a.dot(&b).unwrap(), 0.0);
        assert_eq!(a.dot(&a).unwrap(), 1.0);
        let c = Embedding::new(vec![1.0, 0.0, 0.0], true).unwrap();
        assert!(matches!(a.dot(&c), Err(Error::Shape(_))));
    }
}
