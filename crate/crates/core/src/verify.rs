//! Independent oracles and property monitors: finite-difference gradients,
//! descent-angle reports, the penalty-sweep equivalence harness, and data
//! Gram conditioning probes.

use crate::direction::DirectionSet;
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, sym_eigenvalues, GramOperator};
use crate::network::{backprop_grad, softmax_xent, Network, Nonlin};
use crate::penalty::penalty_backprop_step_general;
use crate::rng;
use crate::tensor::{gemm_nt, Tensor};

/// Central-difference estimates at a deterministic subsample of parameter
/// coordinates.
#[derive(Debug, Clone)]
pub struct SampledGrad {
    /// Flat coordinate indices into the layer's parameter block.
    pub coords: Vec<usize>,
    pub values: Vec<f64>,
}

fn batch_loss(net: &Network, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let cache = net.forward(x)?;
    let (loss, _) = softmax_xent(&cache.logits, labels)?;
    Ok(loss)
}

/// Central finite differences `(J(theta + h e_i) - J(theta - h e_i)) / 2h`
/// per layer, subsampled to at most `max_coords` coordinates chosen
/// deterministically from `seed`.
pub fn finite_diff_grad(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<Vec<SampledGrad>> {
    if !(h > 0.0) {
        return Err(Error::Input(format!("step {h} must be positive")));
    }
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.blocks.len());
    for li in 0..net.blocks.len() {
        let len = net.blocks[li].theta.len();
        let mut coords: Vec<usize> = (0..len).collect();
        if len > max_coords {
            let mut r = rng::seeded(seed ^ (li as u64).wrapping_mul(0x517c_c1b7_2722_0a95));
            rng::shuffle(&mut r, &mut coords);
            coords.truncate(max_coords);
            coords.sort_unstable();
        }
        let mut values = Vec::with_capacity(coords.len());
        for &idx in &coords {
            let orig = probe.blocks[li].theta.data()[idx];
            probe.blocks[li].theta.data_mut()[idx] = orig + h;
            let plus = batch_loss(&probe, x, labels)?;
            probe.blocks[li].theta.data_mut()[idx] = orig - h;
            let minus = batch_loss(&probe, x, labels)?;
            probe.blocks[li].theta.data_mut()[idx] = orig;
            values.push((plus - minus) / (2.0 * h));
        }
        out.push(SampledGrad { coords, values });
    }
    Ok(out)
}

/// Largest relative error of `dirs` against finite-difference samples,
/// coordinatewise with an absolute floor for near-zero derivatives.
pub fn max_rel_error(dirs: &DirectionSet, fd: &[SampledGrad], floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (layer, sg) in dirs.layers.iter().zip(fd) {
        for (&idx, &fd_val) in sg.coords.iter().zip(&sg.values) {
            let an = layer.dir.data()[idx];
            let rel = (an - fd_val).abs() / fd_val.abs().max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct DescentLayerReport {
    /// Cosine between the direction and the gradient; absent when either
    /// norm is below 1e-14.
    pub cos_alpha: Option<f64>,
    pub norm_dir: f64,
    pub norm_grad: f64,
    /// Spectral lower bound on the cosine, when spectral data was supplied.
    pub lower_bound: Option<f64>,
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct DescentReport {
    pub layers: Vec<DescentLayerReport>,
    pub violations: usize,
}

/// Per-layer cosine between oracle directions and gradients, flagging
/// non-descent layers. `bounds` optionally supplies the spectral ratio
/// `lambda_min(M^-1) / lambda_max(M^-1)` per layer.
pub fn descent_report(
    dirs: &DirectionSet,
    grads: &DirectionSet,
    bounds: Option<&[Option<f64>]>,
) -> Result<DescentReport> {
    if dirs.len() != grads.len() {
        return Err(Error::Dim(format!(
            "{} directions vs {} gradients",
            dirs.len(),
            grads.len()
        )));
    }
    if let Some(b) = bounds {
        if b.len() != dirs.len() {
            return Err(Error::Dim(format!(
                "{} spectral bounds for {} layers",
                b.len(),
                dirs.len()
            )));
        }
    }
    let mut layers = Vec::with_capacity(dirs.len());
    let mut violations = 0;
    for (i, (d, g)) in dirs.layers.iter().zip(&grads.layers).enumerate() {
        let norm_dir = d.dir.norm();
        let norm_grad = g.dir.norm();
        let cos_alpha = if norm_dir < 1e-14 || norm_grad < 1e-14 {
            None
        } else {
            Some(d.dir.dot(&g.dir)? / (norm_dir * norm_grad))
        };
        let lower_bound = bounds.and_then(|b| b[i]);
        let violation = match (cos_alpha, lower_bound) {
            (Some(c), Some(lb)) => c <= 0.0 || c < lb - 1e-8,
            (Some(c), None) => c <= 0.0,
            _ => false,
        };
        if violation {
            violations += 1;
        }
        layers.push(DescentLayerReport {
            cos_alpha,
            norm_dir,
            norm_grad,
            lower_bound,
            violation,
        });
    }
    Ok(DescentReport { layers, violations })
}

/// Builds a small random tanh network plus a batch for harness runs:
/// up to 3 linear layers, widths at most 16, batch at most 8.
pub fn random_tanh_instance(seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let depth = 2 + (r.next_u64() % 2) as usize; // 2 or 3 linear layers
    let classes = 2 + (r.next_u64() % 3) as usize;
    let mut dims = vec![2 + (r.next_u64() % 6) as usize];
    for _ in 0..depth - 1 {
        dims.push(3 + (r.next_u64() % 14) as usize);
    }
    dims.push(classes);
    let net = Network::mlp(&dims, Nonlin::Tanh, &mut r).expect("valid dims");
    let batch = 2 + (r.next_u64() % 7) as usize;
    let x = Tensor::uniform(&[dims[0], batch], -1.0, 1.0, &mut r);
    let labels = (0..batch).map(|i| i % classes).collect();
    (net, x, labels)
}

use rand_core::Rng;

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// (seed, max relative deviation over layers)
    pub per_seed: Vec<(u64, f64)>,
    pub max_deviation: f64,
    pub pass: bool,
}

/// For each seed, runs the ordered penalty sweep and an explicit gradient
/// descent step on a random tanh instance and reports the largest per-layer
/// relative deviation. Passes when every deviation is at most 1e-9.
pub fn equivalence_harness(seeds: &[u64]) -> Result<EquivalenceReport> {
    equivalence_harness_with_weights(seeds, 1.0)
}

/// Same harness with the penalty weights scaled by `rho_scale / tau`; values
/// other than 1 are negative controls that must fail.
pub fn equivalence_harness_with_weights(
    seeds: &[u64],
    rho_scale: f64,
) -> Result<EquivalenceReport> {
    if seeds.is_empty() {
        return Err(Error::Input("harness needs at least one seed".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut max_deviation = 0.0f64;
    for &seed in seeds {
        let (net, x, labels) = random_tanh_instance(seed);
        let mut r = rng::seeded(seed ^ 0xabcd_ef01);
        let tau = rng::uniform(&mut r, 0.05, 0.5);
        let swept = penalty_backprop_step_general(
            &net,
            &x,
            &labels,
            tau,
            rho_scale / tau,
            1.0 / tau,
        )?;
        let cache = net.forward(&x)?;
        let grads = backprop_grad(&net, &cache, &labels)?;
        let mut dev = 0.0f64;
        for (i, (swept_theta, g)) in swept.iter().zip(&grads.layers).enumerate() {
            let update = swept_theta.sub(&net.blocks[i].theta)?;
            let reference = g.dir.scale(-tau);
            let denom = reference.norm();
            let d = if denom < 1e-300 {
                update.norm()
            } else {
                update.sub(&reference)?.norm() / denom
            };
            dev = dev.max(d);
        }
        max_deviation = max_deviation.max(dev);
        per_seed.push((seed, dev));
    }
    Ok(EquivalenceReport {
        per_seed,
        max_deviation,
        pass: max_deviation <= 1e-9,
    })
}

/// Extreme eigenvalues of the data Gram matrix `X X^T` and their ratio.
///
/// The largest eigenvalue comes from matrix-free power iteration on the full
/// Gram operator. The smallest comes from a dense eigendecomposition of the
/// principal submatrix on at most 512 evenly spaced feature rows; by
/// interlacing this cannot underestimate the true smallest eigenvalue, so
/// the reported ratio is a lower bound on the true one. A rank-deficient
/// (or numerically singular) Gram reports `lambda_min = 0` and an infinite
/// ratio.
pub fn gram_conditioning(x: &Tensor) -> Result<(f64, f64, f64)> {
    if x.shape().len() != 2 || x.is_empty() {
        return Err(Error::Input(format!(
            "conditioning probe needs a non-empty matrix, got {:?}",
            x.shape()
        )));
    }
    let rows = x.rows();
    let op = GramOperator::new(x);
    let lambda_max = power_iteration(&op, 150, 0)?;

    const MAX_SUB: usize = 512;
    let sub = if rows <= MAX_SUB {
        x.clone()
    } else {
        let idx: Vec<usize> = (0..MAX_SUB).map(|i| i * rows / MAX_SUB).collect();
        let mut s = Tensor::zeros(&[idx.len(), x.cols()]);
        for (r_out, &r_in) in idx.iter().enumerate() {
            let n = x.cols();
            s.data_mut()[r_out * n..(r_out + 1) * n]
                .copy_from_slice(&x.data()[r_in * n..(r_in + 1) * n]);
        }
        s
    };
    let gram = gemm_nt(&sub, &sub)?;
    let eigs = sym_eigenvalues(&gram)?;
    let lambda_min = eigs[0];
    if lambda_min <= lambda_max * 1e-15 {
        return Ok((lambda_max, 0.0, f64::INFINITY));
    }
    Ok((lambda_max, lambda_min, lambda_max / lambda_min))
}
