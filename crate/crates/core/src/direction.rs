//! Gradient-like update directions, one per parametric layer.
//!
//! Both oracles (backpropagation and the proximal one) emit this structure;
//! outer optimizers consume it without knowing which oracle produced it.

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LayerDirection {
    /// Theta-shaped direction; optimizers subtract `lr * dir`.
    pub dir: Tensor,
    /// Whether the direction came from an implicit (proximal) step.
    pub implicit: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DirectionSet {
    pub layers: Vec<LayerDirection>,
    /// Set when the producing forward pass saw non-finite values; the
    /// training loop stops and marks the run instead of erroring.
    pub diverged: bool,
}

impl DirectionSet {
    pub fn explicit(dirs: Vec<Tensor>) -> Self {
        Self {
            layers: dirs
                .into_iter()
                .map(|dir| LayerDirection {
                    dir,
                    implicit: false,
                })
                .collect(),
            diverged: false,
        }
    }

    pub fn diverged() -> Self {
        Self {
            layers: Vec::new(),
            diverged: true,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Largest Euclidean norm over the per-layer directions.
    pub fn max_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.dir.norm()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.dir.all_finite())
    }
}
