//! Quadratic penalty energy over free layer variables, and the ordered
//! gradient sweep on it whose net effect is one gradient descent step.
//!
//! The energy treats each pre-activation `z_l` and activation `a_l` as a free
//! variable, coupled to its neighbors through quadratic penalties:
//!
//! ```text
//! E = loss(phi(theta_last, a_last))
//!   + sum_l gamma/2 ||sigma(z_l) - a_l||^2 + rho/2 ||phi(theta_l, a_{l-1}) - z_l||^2
//! ```
//!
//! After a forward pass every penalty term vanishes, so E equals the plain
//! network loss there. `penalty_backprop_step` then performs the sweep:
//! one gradient step on `(theta_last, a_last)` from the same state, then for
//! each block from the top down, gradient steps on `z_l`, `a_{l-1}` and
//! `theta_l`. With `rho = gamma = 1/tau` the returned parameters equal
//! `theta - tau * grad J` — the classical backpropagation update.

use crate::error::{Error, Result};
use crate::network::{softmax_xent, Network};
use crate::tensor::Tensor;

/// Free copies of the per-block variables (`z_l`, `a_l` for every block
/// except the last). Lengths are `num_blocks - 1`.
#[derive(Debug, Clone)]
pub struct PenaltyPoint {
    pub preacts: Vec<Tensor>,
    pub activations: Vec<Tensor>,
}

impl PenaltyPoint {
    /// Snapshot of a forward pass: the point where all penalties vanish.
    pub fn from_cache(cache: &crate::network::ForwardCache) -> Self {
        let n = cache.blocks.len();
        PenaltyPoint {
            preacts: cache.blocks[..n - 1].iter().map(|b| b.z.clone()).collect(),
            activations: cache.blocks[..n - 1]
                .iter()
                .map(|b| b.activation().clone())
                .collect(),
        }
    }
}

/// Evaluates the penalty energy at free variables `point` for fixed
/// parameters and input batch.
pub fn penalty_energy(
    net: &Network,
    x: &Tensor,
    point: &PenaltyPoint,
    labels: &[usize],
    rho: f64,
    gamma: f64,
) -> Result<f64> {
    let blocks = &net.blocks;
    let hidden = blocks.len() - 1;
    if point.preacts.len() != hidden || point.activations.len() != hidden {
        return Err(Error::Dim(format!(
            "penalty point holds {} blocks, network has {hidden} hidden blocks",
            point.preacts.len()
        )));
    }
    let mut energy = 0.0;
    for l in 0..hidden {
        let a_prev = if l == 0 { x } else { &point.activations[l - 1] };
        let z = &point.preacts[l];
        let coupling = blocks[l]
            .transfer
            .forward(&blocks[l].theta, a_prev)?
            .sub(z)?;
        energy += 0.5 * rho * coupling.dot(&coupling)?;

        let mut sig = z.clone();
        for s in &blocks[l].sigma {
            sig = s.eval(&sig)?;
        }
        let mismatch = sig.sub(&point.activations[l])?;
        energy += 0.5 * gamma * mismatch.dot(&mismatch)?;
    }
    let a_last = if hidden == 0 {
        x
    } else {
        &point.activations[hidden - 1]
    };
    let logits = blocks[hidden]
        .transfer
        .forward(&blocks[hidden].theta, a_last)?;
    let (loss, _) = softmax_xent(&logits, labels)?;
    Ok(energy + loss)
}

/// One ordered sweep of gradient steps on the penalty energy, with
/// `rho = gamma = 1/tau`. Returns the updated parameters; the network is not
/// mutated.
pub fn penalty_backprop_step(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    tau: f64,
) -> Result<Vec<Tensor>> {
    if tau <= 0.0 {
        return Err(Error::Input(format!("step size {tau} must be positive")));
    }
    penalty_backprop_step_general(net, x, labels, tau, 1.0 / tau, 1.0 / tau)
}

/// The same sweep with free penalty weights; `rho` and `gamma` scale the
/// steps on `z_l` / `a_{l-1}` away from the matched regime. Used by the
/// equivalence harness and its negative controls.
pub fn penalty_backprop_step_general(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    tau: f64,
    rho: f64,
    gamma: f64,
) -> Result<Vec<Tensor>> {
    let cache = net.forward(x)?;
    if cache.diverged {
        return Err(Error::Numerical {
            context: "forward pass produced non-finite values".into(),
            iter: 0,
        });
    }
    let last = net.blocks.len() - 1;
    let mut new_thetas = net.thetas_cloned();
    let (_, grad_logits) = softmax_xent(&cache.logits, labels)?;

    // joint gradient step on (theta_last, a_last) from the same state
    let head = &net.blocks[last];
    let mut g_last = head
        .transfer
        .param_adjoint(&grad_logits, &cache.blocks[last].prep)?;
    g_last.scale_in_place(tau);
    new_thetas[last] = head.theta.sub(&g_last)?;
    if last == 0 {
        return Ok(new_thetas);
    }
    let mut a_half = {
        let pull = head.transfer.input_adjoint(&grad_logits, &head.theta)?;
        let mut a = cache.input_of(last).clone();
        a.add_scaled(&pull, -tau)?;
        a
    };

    // top-down: z_l, then a_{l-1}, then theta_l
    for i in (0..last).rev() {
        let block = &net.blocks[i];
        let bc = &cache.blocks[i];
        // sigma(z) equals the cached activation, so the z-gradient of the
        // sigma-coupling is the pulled-back activation mismatch
        let mismatch = bc.activation().sub(&a_half)?;
        let z_half = {
            let pulled = block.pull_back_sigma(bc, &mismatch)?;
            let mut z = bc.z.clone();
            z.add_scaled(&pulled, -tau * gamma)?;
            z
        };
        let z_residual = bc.z.sub(&z_half)?;
        if i > 0 {
            let pull = block.transfer.input_adjoint(&z_residual, &block.theta)?;
            let mut a = cache.input_of(i).clone();
            a.add_scaled(&pull, -tau * rho)?;
            a_half = a;
        }
        let mut g = block.transfer.param_adjoint(&z_residual, &bc.prep)?;
        g.scale_in_place(tau * rho);
        new_thetas[i] = block.theta.sub(&g)?;
    }
    Ok(new_thetas)
}
