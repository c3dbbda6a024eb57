//! Weak and strong stochastic augmentation in feature space.
//!
//! The weak view adds small Gaussian noise; the strong view adds larger noise
//! and then zeroes coordinates independently. This keeps the two-view
//! structure (a label-preserving weak view for pseudo-labels, a harder strong
//! view for the consistency loss) without any image-specific machinery.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CatError, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    /// Fraction of coordinates zeroed in the strong view.
    pub strong_dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_sigma: 0.1,
            strong_sigma: 0.5,
            strong_dropout: 0.25,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weak_sigma < 0.0 || self.strong_sigma < 0.0 {
            return Err(CatError::Config("sigmas must be >= 0".into()));
        }
        if self.weak_sigma > 0.0 && self.strong_sigma > 0.0 && self.weak_sigma >= self.strong_sigma
        {
            return Err(CatError::Config(
                "weak_sigma must be < strong_sigma when both are positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.strong_dropout) {
            return Err(CatError::Config("strong_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Weak view: `x + eps`, `eps ~ N(0, weak_sigma^2 I)`.
    pub fn weak<R: Rng>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let n: f64 = StandardNormal.sample(rng);
                v + self.weak_sigma * n
            })
            .collect()
    }

    /// Strong view: additive noise at `strong_sigma`, then each coordinate
    /// independently zeroed with probability `strong_dropout`.
    pub fn strong<R: Rng>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .map(|&v| {
                let n: f64 = StandardNormal.sample(rng);
                v + self.strong_sigma * n
            })
            .collect();
        for v in out.iter_mut() {
            let coin: f64 = rng.random();
            if coin < self.strong_dropout {
                *v = 0.0;
            }
        }
        out
    }

    /// Applies `weak` row-wise.
    pub fn weak_matrix<R: Rng>(&self, x: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        self.map_rows(x, |row, rng| self.weak(row, rng), rng)
    }

    /// Applies `strong` row-wise.
    pub fn strong_matrix<R: Rng>(&self, x: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        self.map_rows(x, |row, rng| self.strong(row, rng), rng)
    }

    fn map_rows<R: Rng, F: Fn(&[f64], &mut R) -> Vec<f64>>(
        &self,
        x: &Array2<f64>,
        f: F,
        rng: &mut R,
    ) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let augmented = f(row.as_slice().expect("contiguous row"), rng);
            for (dst, src) in row.iter_mut().zip(augmented) {
                *dst = src;
            }
        }
        out
    }
}
