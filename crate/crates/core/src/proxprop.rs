//! The proximal first-order oracle.
//!
//! After a cached forward pass, a backward sweep propagates the loss error
//! into per-block half-step targets for the pre-activations and activations.
//! Each linear layer's parameters are then updated by a proximal (implicit)
//! step towards its z-target:
//!
//! ```text
//! theta' = argmin 1/2 ||phi(theta, a_prev) - z_target||^2
//!               + 1/(2 tau_theta) ||theta - theta_k||^2
//! ```
//!
//! solved either in closed form (fully-connected layers) or by a few
//! matrix-free conjugate gradient iterations on
//! `M v = -g`, `M = I/tau_theta + (grad phi)(grad phi)^*`. The oracle emits
//! `theta_k - theta'` as a gradient-like direction, which equals
//! `M^{-1} grad J` for the exact solve; the final layer always gets the plain
//! explicit gradient. Truncating CG at any iteration count keeps the
//! direction a descent direction because CG starts from zero.

use crate::direction::{DirectionSet, LayerDirection};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, direct_spd_solve, LinearOperator};
use crate::network::{softmax_xent, ForwardCache, LinearTransfer, Network, Prepared};
use crate::tensor::{gemm_nt, Tensor};

/// How each implicit layer solves its proximal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxMode {
    /// Closed-form linear solve; fully-connected layers only.
    Exact,
    /// The given number of conjugate gradient iterations, matrix-free.
    Cg(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    pub tau_theta: f64,
    pub mode: ProxMode,
    /// Relative residual at which CG may stop early.
    pub cg_tol: f64,
}

impl ProxConfig {
    /// CG mode with the conventional `tau_theta = 1`.
    pub fn cg(iters: usize) -> Self {
        Self {
            tau_theta: 1.0,
            mode: ProxMode::Cg(iters),
            cg_tol: 1e-10,
        }
    }

    /// Exact mode; defaults to the smaller `tau_theta = 0.05` that suits
    /// closed-form solves.
    pub fn exact() -> Self {
        Self {
            tau_theta: 0.05,
            mode: ProxMode::Exact,
            cg_tol: 1e-10,
        }
    }

    pub fn with_tau_theta(mut self, tau_theta: f64) -> Self {
        self.tau_theta = tau_theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_theta > 0.0) {
            return Err(Error::Input(format!(
                "tau_theta {} must be positive",
                self.tau_theta
            )));
        }
        if let ProxMode::Cg(0) = self.mode {
            return Err(Error::Input("cg mode needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Half-step targets produced by the backward sweep, indexed by block.
/// `z_half[i]` is the target for block `i`'s pre-activation and `a_half[i]`
/// for its output activation; both cover blocks `0..num_blocks-1`.
#[derive(Debug, Clone)]
pub struct SweepTargets {
    pub z_half: Vec<Tensor>,
    pub a_half: Vec<Tensor>,
}

/// Propagates the loss error into half-step targets: an explicit step of
/// size `tau` on the last activation, then unit-size explicit steps on each
/// `z_l` and `a_{l-1}` going down.
pub fn backward_sweep(
    net: &Network,
    cache: &ForwardCache,
    labels: &[usize],
    tau: f64,
) -> Result<SweepTargets> {
    let (_, grad_logits) = softmax_xent(&cache.logits, labels)?;
    sweep_from_grad(net, cache, &grad_logits, tau)
}

fn sweep_from_grad(
    net: &Network,
    cache: &ForwardCache,
    grad_logits: &Tensor,
    tau: f64,
) -> Result<SweepTargets> {
    let last = net.blocks.len() - 1;
    let mut z_half = vec![Tensor::zeros(&[0]); last];
    let mut a_half = vec![Tensor::zeros(&[0]); last];
    if last == 0 {
        return Ok(SweepTargets { z_half, a_half });
    }
    // explicit step on the activation feeding the loss layer
    {
        let head = &net.blocks[last];
        let pull = head.transfer.input_adjoint(grad_logits, &head.theta)?;
        let mut a = cache.input_of(last).clone();
        a.add_scaled(&pull, -tau)?;
        a_half[last - 1] = a;
    }
    for i in (0..last).rev() {
        let block = &net.blocks[i];
        let bc = &cache.blocks[i];
        let mismatch = bc.activation().sub(&a_half[i])?;
        let pulled = block.pull_back_sigma(bc, &mismatch)?;
        let mut z = bc.z.clone();
        z.add_scaled(&pulled, -1.0)?;
        z_half[i] = z;
        if i > 0 {
            let z_residual = bc.z.sub(&z_half[i])?;
            let pull = block.transfer.input_adjoint(&z_residual, &block.theta)?;
            let mut a = cache.input_of(i).clone();
            a.add_scaled(&pull, -1.0)?;
            a_half[i - 1] = a;
        }
    }
    Ok(SweepTargets { z_half, a_half })
}

/// The symmetric positive-definite metric relating a proximal direction to
/// the gradient: `M v = v / tau_theta + param_adjoint(apply(v))` on the
/// layer's prepared input. Its smallest eigenvalue is at least
/// `1 / tau_theta`.
pub struct OperatorM<'a> {
    transfer: &'a LinearTransfer,
    prep: &'a Prepared,
    tau_theta: f64,
}

impl<'a> OperatorM<'a> {
    pub fn new(transfer: &'a LinearTransfer, prep: &'a Prepared, tau_theta: f64) -> Self {
        Self {
            transfer,
            prep,
            tau_theta,
        }
    }
}

impl LinearOperator for OperatorM<'_> {
    fn dim(&self) -> usize {
        let [r, c] = self.transfer.theta_shape();
        r * c
    }

    fn shape(&self) -> Vec<usize> {
        self.transfer.theta_shape().to_vec()
    }

    fn apply(&self, v: &Tensor) -> Result<Tensor> {
        let forward = self.transfer.apply(v, self.prep)?;
        let mut out = self.transfer.param_adjoint(&forward, self.prep)?;
        out.add_scaled(v, 1.0 / self.tau_theta)?;
        Ok(out)
    }
}

/// Applies the descent metric to a theta-shaped tensor.
pub fn apply_m(
    transfer: &LinearTransfer,
    prep: &Prepared,
    tau_theta: f64,
    v: &Tensor,
) -> Result<Tensor> {
    OperatorM::new(transfer, prep, tau_theta).apply(v)
}

/// Closed-form proximal step for a fully-connected layer: with `ah` the
/// ones-augmented activations,
///
/// ```text
/// theta' = (z_target ah^T + theta / tau_theta) (ah ah^T + I / tau_theta)^{-1}
/// ```
///
/// The linear system's size is the layer's input width plus one, independent
/// of the batch size.
pub fn prox_step_exact(
    transfer: &LinearTransfer,
    theta: &Tensor,
    prep: &Prepared,
    z_target: &Tensor,
    tau_theta: f64,
) -> Result<Tensor> {
    if !(tau_theta > 0.0) {
        return Err(Error::Input(format!("tau_theta {tau_theta} must be positive")));
    }
    let augmented = match (transfer, prep) {
        (LinearTransfer::Dense(_), Prepared::Dense { augmented }) => augmented,
        (LinearTransfer::Conv2d(_), _) => {
            return Err(Error::Input(
                "exact proximal steps are only available for fully-connected layers".into(),
            ))
        }
        _ => {
            return Err(Error::Inconsistent(
                "prepared input does not match transfer kind".into(),
            ))
        }
    };
    transfer.check_theta(theta)?;
    if z_target.shape() != [transfer.out_dim(), augmented.cols()] {
        return Err(Error::Dim(format!(
            "z target shape {:?}, expected {:?}",
            z_target.shape(),
            [transfer.out_dim(), augmented.cols()]
        )));
    }
    let d = augmented.rows();
    let mut lhs = gemm_nt(augmented, augmented)?;
    let inv = 1.0 / tau_theta;
    for i in 0..d {
        lhs[(i, i)] += inv;
    }
    let mut rhs = gemm_nt(z_target, augmented)?;
    rhs.add_scaled(theta, inv)?;
    // theta' lhs = rhs with lhs symmetric: solve lhs X = rhs^T, return X^T
    let solved = direct_spd_solve(&lhs, &rhs.transpose())?;
    Ok(solved.transpose())
}

/// Proximal step by truncated conjugate gradient on `M v = -g`, where `g` is
/// the layer gradient recovered from the forward residual. Works for any
/// linear transfer kind and never forms `M`.
pub fn prox_step_cg(
    transfer: &LinearTransfer,
    theta: &Tensor,
    prep: &Prepared,
    z_target: &Tensor,
    tau_theta: f64,
    cg_iters: usize,
    cg_tol: f64,
) -> Result<Tensor> {
    if !(tau_theta > 0.0) {
        return Err(Error::Input(format!("tau_theta {tau_theta} must be positive")));
    }
    if cg_iters == 0 {
        return Err(Error::Input("cg prox step needs at least one iteration".into()));
    }
    let residual = transfer.apply(theta, prep)?.sub(z_target)?;
    let g = transfer.param_adjoint(&residual, prep)?;
    if g.norm() == 0.0 {
        return Ok(theta.clone());
    }
    let op = OperatorM::new(transfer, prep, tau_theta);
    let (v, _) = cg_solve(&op, &g.scale(-1.0), cg_iters, cg_tol)?;
    theta.add(&v)
}

/// Runs the full oracle: forward pass, backward sweep with unit loss step,
/// then one proximal step per hidden layer. Emits `theta - theta'` per
/// implicit layer and the plain gradient for the final layer; parameters are
/// not mutated — applying the directions (and choosing the step size) is the
/// outer optimizer's job.
pub fn proxprop_directions(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    config: &ProxConfig,
) -> Result<DirectionSet> {
    config.validate()?;
    let cache = net.forward(x)?;
    if cache.diverged {
        return Ok(DirectionSet::diverged());
    }
    let (loss, grad_logits) = softmax_xent(&cache.logits, labels)?;
    if !loss.is_finite() {
        return Ok(DirectionSet::diverged());
    }
    let last = net.blocks.len() - 1;
    let targets = sweep_from_grad(net, &cache, &grad_logits, 1.0)?;
    let mut layers = Vec::with_capacity(net.blocks.len());
    for i in 0..last {
        let block = &net.blocks[i];
        let bc = &cache.blocks[i];
        let theta_next = match config.mode {
            ProxMode::Exact => prox_step_exact(
                &block.transfer,
                &block.theta,
                &bc.prep,
                &targets.z_half[i],
                config.tau_theta,
            )?,
            ProxMode::Cg(k) => prox_step_cg(
                &block.transfer,
                &block.theta,
                &bc.prep,
                &targets.z_half[i],
                config.tau_theta,
                k,
                config.cg_tol,
            )?,
        };
        layers.push(LayerDirection {
            dir: block.theta.sub(&theta_next)?,
            implicit: true,
        });
    }
    let head = &net.blocks[last];
    layers.push(LayerDirection {
        dir: head
            .transfer
            .param_adjoint(&grad_logits, &cache.blocks[last].prep)?,
        implicit: false,
    });
    let set = DirectionSet {
        layers,
        diverged: false,
    };
    if !set.all_finite() {
        return Ok(DirectionSet::diverged());
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigenvalues, DenseOperator};
    use crate::network::{backprop_grad, Block, Nonlin};
    use crate::rng::seeded;
    use crate::tensor::gemm;

    fn rel(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).unwrap().norm() / b.norm().max(1e-300)
    }

    /// Materializes the linear map `v -> phi(v, a)` column by column.
    fn materialize_phi(transfer: &LinearTransfer, prep: &Prepared) -> Tensor {
        let [tr, tc] = transfer.theta_shape();
        let out_len = transfer.out_dim() * match prep {
            Prepared::Dense { augmented } => augmented.cols(),
            Prepared::Conv { batch, .. } => *batch,
        };
        let mut a = Tensor::zeros(&[out_len, tr * tc]);
        for j in 0..tr * tc {
            let mut e = Tensor::zeros(&[tr, tc]);
            e.data_mut()[j] = 1.0;
            let col = transfer.apply(&e, prep).unwrap();
            for i in 0..out_len {
                a[(i, j)] = col.data()[i];
            }
        }
        a
    }

    #[test]
    fn sweep_with_zero_loss_gradient_returns_cached_values() {
        let mut rng = seeded(0);
        let mut net = Network::mlp(&[3, 4, 2], Nonlin::Tanh, &mut rng).unwrap();
        for b in &mut net.blocks {
            b.theta = Tensor::zeros(b.theta.shape());
        }
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let cache = net.forward(&x).unwrap();
        let t = backward_sweep(&net, &cache, &[0, 1, 0, 1], 1.0).unwrap();
        assert!(t.z_half[0].sub(&cache.blocks[0].z).unwrap().max_abs() <= 1e-15);
        assert!(t.a_half[0]
            .sub(cache.blocks[0].activation())
            .unwrap()
            .max_abs()
            <= 1e-15);
    }

    #[test]
    fn sweep_single_hidden_layer_z_shift_is_minus_tau_grad() {
        // linear block feeding the loss layer directly through identity sigma
        // chain: z_half - z = -tau * pulled-back loss gradient
        let mut rng = seeded(1);
        let net = Network::mlp(&[3, 4, 2], Nonlin::Tanh, &mut rng).unwrap();
        let x = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let labels = [0usize, 1, 0, 1, 1];
        let cache = net.forward(&x).unwrap();
        let tau = 0.7;
        let t = backward_sweep(&net, &cache, &labels, tau).unwrap();
        let (_, g) = softmax_xent(&cache.logits, &labels).unwrap();
        let pull = net.blocks[1]
            .transfer
            .input_adjoint(&g, &net.blocks[1].theta)
            .unwrap();
        let da = cache.blocks[0]
            .activation()
            .sub(&t.a_half[0])
            .unwrap();
        assert!(rel(&da, &pull.scale(tau)) <= 1e-12);
        // z shift equals sigma-jacobian applied to the activation shift
        let dz = cache.blocks[0].z.sub(&t.z_half[0]).unwrap();
        let expect = net.blocks[0]
            .pull_back_sigma(&cache.blocks[0], &da)
            .unwrap();
        assert!(rel(&dz, &expect) <= 1e-12);
    }

    /// The z-residuals the sweep produces are exactly tau times the chain
    /// rule error signals.
    #[test]
    fn sweep_residuals_match_chain_rule() {
        for seed in 0..5u64 {
            let mut rng = seeded(10 + seed);
            let net = Network::mlp(&[4, 6, 5, 3], Nonlin::Tanh, &mut rng).unwrap();
            let x = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
            let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
            let cache = net.forward(&x).unwrap();
            let tau = 0.4;
            let t = backward_sweep(&net, &cache, &labels, tau).unwrap();

            let (_, mut r) = softmax_xent(&cache.logits, &labels).unwrap();
            for i in (0..net.blocks.len()).rev() {
                if i == net.blocks.len() - 1 {
                    r = net.blocks[i]
                        .transfer
                        .input_adjoint(&r, &net.blocks[i].theta)
                        .unwrap();
                } else {
                    r = net.blocks[i].pull_back_sigma(&cache.blocks[i], &r).unwrap();
                    let dz = cache.blocks[i].z.sub(&t.z_half[i]).unwrap();
                    assert!(
                        rel(&dz, &r.scale(tau)) <= 1e-9,
                        "seed {seed} block {i}: {}",
                        rel(&dz, &r.scale(tau))
                    );
                    if i > 0 {
                        r = net.blocks[i]
                            .transfer
                            .input_adjoint(&r, &net.blocks[i].theta)
                            .unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn exact_prox_fixed_point_at_zero_residual() {
        let mut rng = seeded(2);
        let transfer = LinearTransfer::dense(4, 3);
        let theta = transfer.init_theta(&mut rng);
        let a = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        let z = transfer.apply(&theta, &prep).unwrap();
        let out = prox_step_exact(&transfer, &theta, &prep, &z, 1.0).unwrap();
        assert!(rel(&out, &theta) <= 1e-10);
    }

    #[test]
    fn exact_prox_scalar_hand_example() {
        // a = 1, z_target = 2, theta = 0, tau_theta = 1, no bias influence:
        // minimizing (theta - 2)^2/2 + theta^2/2 gives theta = 1
        let transfer = LinearTransfer::dense(1, 1);
        let theta = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let a = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let prep = transfer.prepare(&a).unwrap();
        let z = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let out = prox_step_exact(&transfer, &theta, &prep, &z, 1.0).unwrap();
        // weight and bias share the target symmetrically: w + b = 2 * 2/3
        // solving [ [2,2],[2,2] ] + I gives w = b = 2/3
        assert!((out[(0, 0)] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((out[(0, 1)] - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn exact_prox_vanishing_step_returns_current_parameters() {
        let mut rng = seeded(3);
        let transfer = LinearTransfer::dense(3, 2);
        let theta = transfer.init_theta(&mut rng);
        let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        let z = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let out = prox_step_exact(&transfer, &theta, &prep, &z, 1e-12).unwrap();
        assert!(out.sub(&theta).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn exact_prox_decreases_the_block_objective_for_any_step() {
        let mut rng = seeded(4);
        for &tau_theta in &[0.01, 1.0, 100.0] {
            for trial in 0..10 {
                let transfer = LinearTransfer::dense(3, 2);
                let theta = transfer.init_theta(&mut rng);
                let a = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
                let prep = transfer.prepare(&a).unwrap();
                let z = Tensor::uniform(&[2, 5], -2.0, 2.0, &mut rng);
                let f = |th: &Tensor| {
                    let r = transfer.apply(th, &prep).unwrap().sub(&z).unwrap();
                    0.5 * r.dot(&r).unwrap()
                };
                let out = prox_step_exact(&transfer, &theta, &prep, &z, tau_theta).unwrap();
                let step = out.sub(&theta).unwrap();
                let lhs = f(&out) + step.dot(&step).unwrap() / (2.0 * tau_theta);
                let rhs = f(&theta);
                assert!(
                    lhs <= rhs + 1e-9 * rhs.max(1.0),
                    "tau_theta {tau_theta} trial {trial}: {lhs} > {rhs}"
                );
            }
        }
    }

    #[test]
    fn proximal_point_iteration_is_monotone() {
        let mut rng = seeded(5);
        for &tau_theta in &[0.05, 1.0, 50.0] {
            let transfer = LinearTransfer::dense(4, 3);
            let mut theta = transfer.init_theta(&mut rng);
            let a = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
            let prep = transfer.prepare(&a).unwrap();
            let z = Tensor::uniform(&[3, 6], -2.0, 2.0, &mut rng);
            let f = |th: &Tensor| {
                let r = transfer.apply(th, &prep).unwrap().sub(&z).unwrap();
                0.5 * r.dot(&r).unwrap()
            };
            let mut prev = f(&theta);
            for _ in 0..12 {
                theta = prox_step_exact(&transfer, &theta, &prep, &z, tau_theta).unwrap();
                let cur = f(&theta);
                assert!(cur <= prev + 1e-12 * prev.max(1.0));
                prev = cur;
            }
        }
    }

    #[test]
    fn operator_m_with_zero_activations_is_scaled_identity() {
        let transfer = LinearTransfer::dense(3, 2);
        let a = Tensor::zeros(&[3, 4]);
        let prep = transfer.prepare(&a).unwrap();
        let mut rng = seeded(6);
        let v = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        // the augmented ones row still contributes; zero the full prepared
        // input to isolate the identity part
        let prep_zero = match prep {
            Prepared::Dense { augmented } => Prepared::Dense {
                augmented: Tensor::zeros(augmented.shape()),
            },
            _ => unreachable!(),
        };
        let out = apply_m(&transfer, &prep_zero, 0.25, &v).unwrap();
        assert!(rel(&out, &v.scale(4.0)) <= 1e-14);
    }

    #[test]
    fn operator_m_matches_dense_materialization() {
        let mut rng = seeded(7);
        let transfer = LinearTransfer::dense(3, 2);
        let a = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        let tau_theta = 0.7;
        let phi = materialize_phi(&transfer, &prep);
        // dense M = I/tau + Phi^T Phi on flattened theta
        let mut m = crate::tensor::gemm_tn(&phi, &phi).unwrap();
        for i in 0..m.rows() {
            m[(i, i)] += 1.0 / tau_theta;
        }
        let v = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let fast = apply_m(&transfer, &prep, tau_theta, &v).unwrap();
        let flat = v.clone().reshape(&[8, 1]).unwrap();
        let dense = gemm(&m, &flat).unwrap().reshape(&[2, 4]).unwrap();
        assert!(rel(&fast, &dense) <= 1e-10);
    }

    #[test]
    fn operator_m_is_linear_on_random_probes() {
        let mut rng = seeded(81);
        let transfer = LinearTransfer::dense(3, 4);
        let a = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        for _ in 0..10 {
            let v = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut rng);
            let combined = apply_m(
                &transfer,
                &prep,
                0.6,
                &v.scale(1.3).add(&w.scale(-0.4)).unwrap(),
            )
            .unwrap();
            let parts = apply_m(&transfer, &prep, 0.6, &v)
                .unwrap()
                .scale(1.3)
                .add(&apply_m(&transfer, &prep, 0.6, &w).unwrap().scale(-0.4))
                .unwrap();
            assert!(rel(&combined, &parts) <= 1e-10);
        }
    }

    #[test]
    fn operator_m_is_symmetric_on_random_probes() {
        let mut rng = seeded(8);
        let transfer = LinearTransfer::dense(4, 3);
        let a = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        for _ in 0..10 {
            let v = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
            let mv = apply_m(&transfer, &prep, 0.3, &v).unwrap();
            let mw = apply_m(&transfer, &prep, 0.3, &w).unwrap();
            let lhs = mv.dot(&w).unwrap();
            let rhs = v.dot(&mw).unwrap();
            assert!((lhs - rhs).abs() / lhs.abs().max(1e-300) <= 1e-10);
        }
    }

    #[test]
    fn cg_prox_with_zero_gradient_keeps_parameters() {
        let mut rng = seeded(9);
        let transfer = LinearTransfer::dense(3, 2);
        let theta = transfer.init_theta(&mut rng);
        let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        let z = transfer.apply(&theta, &prep).unwrap();
        let out = prox_step_cg(&transfer, &theta, &prep, &z, 1.0, 3, 1e-10).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn cg_prox_at_full_dimension_matches_exact_prox() {
        for seed in 0..8u64 {
            let mut rng = seeded(20 + seed);
            let transfer = LinearTransfer::dense(5, 4); // 24 parameters
            let theta = transfer.init_theta(&mut rng);
            let a = Tensor::uniform(&[5, 7], -1.0, 1.0, &mut rng);
            let prep = transfer.prepare(&a).unwrap();
            let z = Tensor::uniform(&[4, 7], -1.0, 1.0, &mut rng);
            let exact = prox_step_exact(&transfer, &theta, &prep, &z, 0.8).unwrap();
            let cg = prox_step_cg(&transfer, &theta, &prep, &z, 0.8, 24, 1e-12).unwrap();
            assert!(rel(&cg, &exact) <= 1e-8, "seed {seed}: {}", rel(&cg, &exact));
        }
    }

    #[test]
    fn single_cg_iteration_still_correlates_with_the_gradient() {
        let mut rng = seeded(30);
        let transfer = LinearTransfer::dense(6, 4);
        let theta = transfer.init_theta(&mut rng);
        let a = Tensor::uniform(&[6, 8], -1.0, 1.0, &mut rng);
        let prep = transfer.prepare(&a).unwrap();
        let z = Tensor::uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let residual = transfer.apply(&theta, &prep).unwrap().sub(&z).unwrap();
        let g = transfer.param_adjoint(&residual, &prep).unwrap();
        let out = prox_step_cg(&transfer, &theta, &prep, &z, 1.0, 1, 1e-12).unwrap();
        let v = out.sub(&theta).unwrap();
        assert!(v.dot(&g.scale(-1.0)).unwrap() > 0.0);
    }

    fn random_net(seed: u64, widths: &[usize]) -> (Network, Tensor, Vec<usize>) {
        let mut rng = seeded(seed);
        let net = Network::mlp(widths, Nonlin::Tanh, &mut rng).unwrap();
        let batch = 5;
        let x = Tensor::uniform(&[widths[0], batch], -1.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..batch).map(|i| i % widths.last().unwrap()).collect();
        (net, x, labels)
    }

    /// Exact-mode directions satisfy `M dir = grad J` on every hidden layer.
    #[test]
    fn exact_directions_solve_the_metric_equation() {
        for seed in 0..6u64 {
            let (net, x, labels) = random_net(40 + seed, &[4, 6, 5, 3]);
            let cfg = ProxConfig::exact().with_tau_theta(0.5);
            let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
            let cache = net.forward(&x).unwrap();
            let grads = backprop_grad(&net, &cache, &labels).unwrap();
            for i in 0..net.blocks.len() - 1 {
                assert!(dirs.layers[i].implicit);
                let md = apply_m(
                    &net.blocks[i].transfer,
                    &cache.blocks[i].prep,
                    cfg.tau_theta,
                    &dirs.layers[i].dir,
                )
                .unwrap();
                assert!(
                    rel(&md, &grads.layers[i].dir) <= 1e-8,
                    "seed {seed} layer {i}: {}",
                    rel(&md, &grads.layers[i].dir)
                );
            }
            // final layer gets the plain gradient
            let lastd = &dirs.layers[net.blocks.len() - 1];
            assert!(!lastd.implicit);
            assert!(rel(&lastd.dir, &grads.layers[net.blocks.len() - 1].dir) <= 1e-12);
        }
    }

    /// Exact-mode direction equals the dense inverse metric applied to the
    /// gradient at small sizes.
    #[test]
    fn exact_directions_match_dense_inverse_metric() {
        let (net, x, labels) = random_net(50, &[3, 4, 2]);
        let cfg = ProxConfig::exact().with_tau_theta(0.9);
        let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
        let cache = net.forward(&x).unwrap();
        let grads = backprop_grad(&net, &cache, &labels).unwrap();
        let transfer = &net.blocks[0].transfer;
        let prep = &cache.blocks[0].prep;
        let phi = materialize_phi(transfer, prep);
        let mut m = crate::tensor::gemm_tn(&phi, &phi).unwrap();
        let dim = m.rows();
        for i in 0..dim {
            m[(i, i)] += 1.0 / cfg.tau_theta;
        }
        let flat_grad = grads.layers[0]
            .dir
            .clone()
            .reshape(&[dim, 1])
            .unwrap();
        let solved = direct_spd_solve(&m, &flat_grad).unwrap();
        let expect = solved.reshape(dirs.layers[0].dir.shape()).unwrap();
        assert!(rel(&dirs.layers[0].dir, &expect) <= 1e-8);
    }

    /// Directions stay positively correlated with the gradient for truncated
    /// CG at several iteration counts.
    #[test]
    fn cg_directions_are_descent_directions() {
        for seed in 0..25u64 {
            let (net, x, labels) = random_net(60 + seed, &[4, 5, 3]);
            let cache = net.forward(&x).unwrap();
            let grads = backprop_grad(&net, &cache, &labels).unwrap();
            for &k in &[1usize, 3, 5, 10] {
                let dirs =
                    proxprop_directions(&net, &x, &labels, &ProxConfig::cg(k)).unwrap();
                for (ld, lg) in dirs.layers.iter().zip(&grads.layers) {
                    if lg.dir.norm() < 1e-14 {
                        continue;
                    }
                    let cos = ld.dir.dot(&lg.dir).unwrap() / (ld.dir.norm() * lg.dir.norm());
                    assert!(cos > 0.0, "seed {seed} k {k}: cos {cos}");
                }
            }
        }
    }

    /// Tiny tau_theta shrinks implicit directions to zero while the explicit
    /// final layer keeps its gradient.
    #[test]
    fn vanishing_tau_theta_shrinks_implicit_directions_only() {
        let (net, x, labels) = random_net(70, &[4, 6, 3]);
        let cache = net.forward(&x).unwrap();
        let grads = backprop_grad(&net, &cache, &labels).unwrap();
        let dirs = proxprop_directions(
            &net,
            &x,
            &labels,
            &ProxConfig::exact().with_tau_theta(1e-9),
        )
        .unwrap();
        assert!(dirs.layers[0].dir.norm() <= 1e-6 * grads.layers[0].dir.norm().max(1.0));
        assert!(rel(&dirs.layers[1].dir, &grads.layers[1].dir) <= 1e-12);
    }

    /// Smallest eigenvalue of the metric stays at or above 1/tau_theta.
    #[test]
    fn metric_spectrum_is_bounded_below() {
        let mut rng = seeded(80);
        for trial in 0..5 {
            let transfer = LinearTransfer::dense(3, 2);
            let a = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
            let prep = transfer.prepare(&a).unwrap();
            let tau_theta = [0.1, 1.0, 10.0][trial % 3];
            let phi = materialize_phi(&transfer, &prep);
            let mut m = crate::tensor::gemm_tn(&phi, &phi).unwrap();
            for i in 0..m.rows() {
                m[(i, i)] += 1.0 / tau_theta;
            }
            let eigs = sym_eigenvalues(&m).unwrap();
            assert!(eigs[0] >= 1.0 / tau_theta - 1e-8, "trial {trial}");
            // cross-check the matrix-free inverse iteration; its Rayleigh
            // quotient approaches the smallest eigenvalue from above, slowly
            // when the spectrum is clustered, so the tolerance is loose
            let op = DenseOperator::new(m).unwrap();
            let lam = crate::linalg::smallest_eigenvalue(&op, 300, 1).unwrap();
            assert!(lam >= eigs[0] - 1e-9, "estimate below true minimum");
            assert!((lam - eigs[0]) / eigs[0] <= 1e-3, "trial {trial}: {lam} vs {}", eigs[0]);
        }
    }

    /// At an exact stationary point every direction is zero; the metric
    /// equation forces the converse.
    #[test]
    fn stationary_points_give_zero_directions() {
        let mut rng = seeded(90);
        let mut net = Network::mlp(&[3, 4, 2], Nonlin::Relu, &mut rng).unwrap();
        for b in &mut net.blocks {
            b.theta = Tensor::zeros(b.theta.shape());
        }
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let labels = [0usize, 1, 0, 1];
        for cfg in [ProxConfig::exact(), ProxConfig::cg(3)] {
            let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
            assert!(dirs.max_norm() <= 1e-12);
        }
    }

    /// Training a tiny contradictory-label problem to numerical
    /// stationarity drives every oracle direction to zero with it.
    #[test]
    fn converged_problem_gives_vanishing_directions() {
        let mut rng = seeded(92);
        let mut net = Network::mlp(&[2, 3, 2], Nonlin::Tanh, &mut rng).unwrap();
        // identical inputs with both labels force an interior minimum
        let x = Tensor::matrix(2, 2, vec![0.4, 0.4, -0.7, -0.7]).unwrap();
        let labels = [0usize, 1];
        let mut grad_norm = f64::INFINITY;
        for _ in 0..200_000 {
            let cache = net.forward(&x).unwrap();
            let grads = backprop_grad(&net, &cache, &labels).unwrap();
            grad_norm = grads.layers.iter().map(|l| l.dir.norm()).fold(0.0, f64::max);
            if grad_norm <= 1e-8 {
                break;
            }
            for (b, g) in net.blocks.iter_mut().zip(&grads.layers) {
                b.theta.add_scaled(&g.dir, -0.5).unwrap();
            }
        }
        assert!(grad_norm <= 1e-8, "did not converge: {grad_norm}");
        for cfg in [ProxConfig::exact(), ProxConfig::cg(3)] {
            let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
            assert!(dirs.max_norm() <= 1e-7, "{:?}: {}", cfg.mode, dirs.max_norm());
        }
    }

    /// Per-step angle bound with the metric's top eigenvalue estimated by
    /// power iteration: cos >= (1/tau_theta) / lambda_max(M).
    #[test]
    fn exact_direction_angle_respects_power_iteration_bound() {
        for seed in 0..8u64 {
            let (net, x, labels) = random_net(200 + seed, &[3, 6, 4, 2]);
            let tau_theta = 0.8;
            let cfg = ProxConfig::exact().with_tau_theta(tau_theta);
            let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
            let cache = net.forward(&x).unwrap();
            let grads = backprop_grad(&net, &cache, &labels).unwrap();
            for i in 0..net.blocks.len() - 1 {
                let (d, g) = (&dirs.layers[i].dir, &grads.layers[i].dir);
                if g.norm() < 1e-12 || d.norm() < 1e-12 {
                    continue;
                }
                let cos = d.dot(g).unwrap() / (d.norm() * g.norm());
                let op = OperatorM::new(&net.blocks[i].transfer, &cache.blocks[i].prep, tau_theta);
                let lam_max = crate::linalg::power_iteration(&op, 200, seed).unwrap();
                let bound = (1.0 / tau_theta) / lam_max;
                assert!(
                    cos >= bound - 1e-8,
                    "seed {seed} layer {i}: cos {cos} below bound {bound}"
                );
            }
        }
    }

    #[test]
    fn exact_mode_on_conv_is_rejected() {
        let mut rng = seeded(91);
        let conv = LinearTransfer::Conv2d(crate::network::ConvTransfer {
            in_shape: (1, 4, 4),
            out_channels: 2,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
            bias: true,
        });
        let theta = conv.init_theta(&mut rng);
        let head = LinearTransfer::dense(2 * 16, 2);
        let theta2 = head.init_theta(&mut rng);
        let net = Network::new(vec![
            Block {
                transfer: conv,
                theta,
                sigma: vec![Nonlin::Relu],
            },
            Block {
                transfer: head,
                theta: theta2,
                sigma: vec![],
            },
        ])
        .unwrap();
        let x = Tensor::uniform(&[16, 2], -1.0, 1.0, &mut rng);
        let err = proxprop_directions(&net, &x, &[0, 1], &ProxConfig::exact());
        assert!(matches!(err, Err(Error::Input(_))));
        // cg mode handles the same net
        let ok = proxprop_directions(&net, &x, &[0, 1], &ProxConfig::cg(3)).unwrap();
        assert_eq!(ok.len(), 2);
    }
}
