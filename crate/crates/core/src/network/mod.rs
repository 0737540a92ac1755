//! Feed-forward networks as a chain of linear transfers and nonlinearities,
//! with a caching forward pass and backpropagated gradients.
//!
//! A network is a sequence of blocks; block `i` applies its parametric linear
//! transfer and then a (possibly empty) chain of nonlinear stages. The last
//! block has no stages: its output feeds the softmax cross-entropy loss
//! directly.

pub mod loss;
pub mod nonlin;
pub mod transfer;

use crate::direction::DirectionSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand_core::Rng;

pub use loss::{accuracy, softmax_xent};
pub use nonlin::Nonlin;
pub use transfer::{ConvTransfer, DenseTransfer, LinearTransfer, Prepared};

/// One linear layer plus the nonlinear stages applied to its output.
#[derive(Debug, Clone)]
pub struct Block {
    pub transfer: LinearTransfer,
    pub theta: Tensor,
    pub sigma: Vec<Nonlin>,
}

impl Block {
    /// Feature count leaving this block (after all stages).
    pub fn out_dim(&self) -> Result<usize> {
        let mut d = self.transfer.out_dim();
        for s in &self.sigma {
            d = s.out_dim(d)?;
        }
        Ok(d)
    }

    /// Pulls an output-of-sigma residual back to pre-activation space using
    /// the cached stage inputs.
    pub fn pull_back_sigma(&self, cache: &BlockCache, r: &Tensor) -> Result<Tensor> {
        let mut cur = r.clone();
        for (j, s) in self.sigma.iter().enumerate().rev() {
            let input = if j == 0 { &cache.z } else { &cache.stages[j - 1] };
            cur = s.jac_adjoint(input, &cur)?;
        }
        Ok(cur)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub blocks: Vec<Block>,
    input_dim: usize,
    num_classes: usize,
}

impl Network {
    /// Validates that the block chain composes and ends in a loss-ready
    /// logits layer (no trailing nonlinearity).
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Input("network needs at least one layer".into()));
        }
        if !blocks.last().unwrap().sigma.is_empty() {
            return Err(Error::Input(
                "final layer must output logits without a nonlinearity".into(),
            ));
        }
        let input_dim = blocks[0].transfer.in_dim();
        let mut d = input_dim;
        for (i, b) in blocks.iter().enumerate() {
            b.transfer.check_theta(&b.theta)?;
            if b.transfer.in_dim() != d {
                return Err(Error::Dim(format!(
                    "layer {i} expects {} inputs, previous layer provides {d}",
                    b.transfer.in_dim()
                )));
            }
            d = b.out_dim()?;
        }
        Ok(Self {
            num_classes: d,
            blocks,
            input_dim,
        })
    }

    /// Fully-connected network with the given widths (`dims[0]` inputs,
    /// `dims.last()` classes) and the same activation between layers.
    pub fn mlp<R: Rng>(dims: &[usize], activation: Nonlin, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Input("mlp needs at least input and output dims".into()));
        }
        if matches!(activation, Nonlin::MaxPool2d { .. }) {
            return Err(Error::Input("mlp activation must be elementwise".into()));
        }
        let mut blocks = Vec::new();
        for i in 0..dims.len() - 1 {
            let transfer = LinearTransfer::dense(dims[i], dims[i + 1]);
            let theta = transfer.init_theta(rng);
            let sigma = if i + 2 < dims.len() {
                vec![activation.clone()]
            } else {
                vec![]
            };
            blocks.push(Block {
                transfer,
                theta,
                sigma,
            });
        }
        Self::new(blocks)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn thetas(&self) -> Vec<&Tensor> {
        self.blocks.iter().map(|b| &b.theta).collect()
    }

    pub fn thetas_cloned(&self) -> Vec<Tensor> {
        self.blocks.iter().map(|b| b.theta.clone()).collect()
    }

    pub fn set_thetas(&mut self, thetas: Vec<Tensor>) -> Result<()> {
        if thetas.len() != self.blocks.len() {
            return Err(Error::Dim(format!(
                "{} parameter blocks for {} layers",
                thetas.len(),
                self.blocks.len()
            )));
        }
        for (b, t) in self.blocks.iter_mut().zip(thetas) {
            b.transfer.check_theta(&t)?;
            b.theta = t;
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.theta.all_finite())
    }

    /// Runs the network on one batch (one sample per column), recording every
    /// pre-activation and stage output.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardCache> {
        if x.shape().len() != 2 || x.rows() != self.input_dim {
            return Err(Error::Dim(format!(
                "input shape {:?}, expected {} rows",
                x.shape(),
                self.input_dim
            )));
        }
        let mut caches: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        let mut diverged = !x.all_finite();
        for (i, block) in self.blocks.iter().enumerate() {
            let (prep, z, stages) = {
                let a_prev: &Tensor = if i == 0 {
                    x
                } else {
                    caches[i - 1].activation()
                };
                let prep = block.transfer.prepare(a_prev)?;
                let z = block.transfer.apply(&block.theta, &prep)?;
                let mut stages = Vec::with_capacity(block.sigma.len());
                for s in &block.sigma {
                    let input = stages.last().unwrap_or(&z);
                    stages.push(s.eval(input)?);
                }
                (prep, z, stages)
            };
            diverged = diverged
                || !z.all_finite()
                || stages.iter().any(|t| !t.all_finite());
            caches.push(BlockCache { prep, z, stages });
        }
        let logits = caches.last().unwrap().z.clone();
        Ok(ForwardCache {
            x: x.clone(),
            blocks: caches,
            logits,
            batch: x.cols(),
            diverged,
        })
    }
}

/// Everything recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// The batch the pass ran on.
    pub x: Tensor,
    pub blocks: Vec<BlockCache>,
    /// Output of the final linear layer.
    pub logits: Tensor,
    pub batch: usize,
    /// True when any value along the pass was non-finite.
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    /// The block's input activations, already in multiply-ready form.
    pub prep: Prepared,
    /// Pre-activation `z = phi(theta, a_prev)`.
    pub z: Tensor,
    /// Output of each nonlinear stage; the last one is the block activation.
    pub stages: Vec<Tensor>,
}

impl BlockCache {
    /// The activation leaving this block.
    pub fn activation(&self) -> &Tensor {
        self.stages.last().unwrap_or(&self.z)
    }
}

impl ForwardCache {
    /// Input activation of block `i` (the raw batch for the first block).
    pub fn input_of(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.x
        } else {
            self.blocks[i - 1].activation()
        }
    }

    fn check_fresh(&self, net: &Network) -> Result<()> {
        if self.blocks.len() != net.blocks.len() {
            return Err(Error::Inconsistent(format!(
                "cache has {} blocks, network has {}",
                self.blocks.len(),
                net.blocks.len()
            )));
        }
        for (i, (bc, b)) in self.blocks.iter().zip(&net.blocks).enumerate() {
            if bc.z.rows() != b.transfer.out_dim() || bc.z.cols() != self.batch {
                return Err(Error::Inconsistent(format!(
                    "cache block {i} shape {:?} no longer matches the network",
                    bc.z.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Classical backpropagation: the chain-rule gradient of the mean
/// cross-entropy in every parameter block.
pub fn backprop_grad(
    net: &Network,
    cache: &ForwardCache,
    labels: &[usize],
) -> Result<DirectionSet> {
    cache.check_fresh(net)?;
    let (_, grad_logits) = softmax_xent(&cache.logits, labels)?;
    backprop_from_residual(net, cache, grad_logits)
}

/// Chain rule from an already-computed logits-space residual.
pub(crate) fn backprop_from_residual(
    net: &Network,
    cache: &ForwardCache,
    grad_logits: Tensor,
) -> Result<DirectionSet> {
    let last = net.blocks.len() - 1;
    let mut dirs: Vec<Tensor> = vec![Tensor::zeros(&[0]); net.blocks.len()];
    let mut r = grad_logits; // residual in z-space of block i
    for i in (0..=last).rev() {
        let block = &net.blocks[i];
        dirs[i] = block.transfer.param_adjoint(&r, &cache.blocks[i].prep)?;
        if i > 0 {
            let below = block.transfer.input_adjoint(&r, &block.theta)?;
            r = net.blocks[i - 1].pull_back_sigma(&cache.blocks[i - 1], &below)?;
        }
    }
    Ok(DirectionSet::explicit(dirs))
}
