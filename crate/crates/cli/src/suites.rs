//! Verification suites behind the `verify` subcommand.
//!
//! Each suite runs a batch of randomized checks and reports a pass flag with
//! the measured worst case, printed as one `key=value` record per line.

use proxprop_core::linalg::smallest_eigenvalue;
use proxprop_core::network::{backprop_grad, LinearTransfer, Prepared};
use proxprop_core::proxprop::{proxprop_directions, prox_step_exact, OperatorM, ProxConfig};
use proxprop_core::rng::{self, Rng};
use proxprop_core::tensor::{gemm_nt, Tensor};
use proxprop_core::verify::{
    descent_report, equivalence_harness, finite_diff_grad, max_rel_error, random_tanh_instance,
};
use proxprop_core::Result;

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub pass: bool,
    /// `key=value` detail fields in print order.
    pub details: Vec<(String, String)>,
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "suite={}", self.name)?;
        for (k, v) in &self.details {
            write!(f, " {k}={v}")?;
        }
        write!(f, " pass={}", self.pass)
    }
}

/// Penalty-sweep vs gradient-descent equivalence over random tanh nets.
pub fn suite_equivalence(seeds: u64) -> Result<SuiteOutcome> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let rep = equivalence_harness(&seeds)?;
    Ok(SuiteOutcome {
        name: "equivalence",
        pass: rep.pass,
        details: vec![
            ("seeds".into(), seeds.len().to_string()),
            ("max_deviation".into(), format!("{:.3e}", rep.max_deviation)),
            ("threshold".into(), "1e-9".into()),
        ],
    })
}

/// Backpropagated gradients against central finite differences.
pub fn suite_gradcheck(seeds: u64, coords: usize) -> Result<SuiteOutcome> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let (net, x, labels) = random_tanh_instance(seed);
        let cache = net.forward(&x)?;
        let grads = backprop_grad(&net, &cache, &labels)?;
        let fd = finite_diff_grad(&net, &x, &labels, 1e-5, coords, seed)?;
        worst = worst.max(max_rel_error(&grads, &fd, 1e-6));
    }
    Ok(SuiteOutcome {
        name: "gradcheck",
        pass: worst <= 1e-5,
        details: vec![
            ("seeds".into(), seeds.to_string()),
            ("coords".into(), coords.to_string()),
            ("max_rel_error".into(), format!("{worst:.3e}")),
            ("threshold".into(), "1e-5".into()),
        ],
    })
}

/// Spectral cosine lower bound for exact-mode directions on a dense layer:
/// `lambda_min(M)/lambda_max(M)` from the small system matrix.
fn exact_cos_bound(prep: &Prepared, tau_theta: f64) -> Result<Option<f64>> {
    let augmented = match prep {
        Prepared::Dense { augmented } => augmented,
        _ => return Ok(None),
    };
    let mut s = gemm_nt(augmented, augmented)?;
    for i in 0..s.rows() {
        s[(i, i)] += 1.0 / tau_theta;
    }
    let eigs = proxprop_core::linalg::sym_eigenvalues(&s)?;
    Ok(Some(eigs[0] / eigs[eigs.len() - 1]))
}

/// Descent-direction cosines across truncated-CG and exact oracles; exact
/// mode must also respect its spectral lower bound.
pub fn suite_descent(nets: u64) -> Result<SuiteOutcome> {
    let mut violations = 0usize;
    let mut checked = 0usize;
    let mut min_cos = f64::INFINITY;
    let tau_theta = 1.0;
    for seed in 0..nets {
        let (net, x, labels) = random_tanh_instance(seed.wrapping_mul(37) ^ 0x5eed);
        let cache = net.forward(&x)?;
        let grads = backprop_grad(&net, &cache, &labels)?;
        for k in [1usize, 3, 5, 10] {
            let dirs =
                proxprop_directions(&net, &x, &labels, &ProxConfig::cg(k))?;
            let rep = descent_report(&dirs, &grads, None)?;
            violations += rep.violations;
            for l in rep.layers {
                if let Some(c) = l.cos_alpha {
                    min_cos = min_cos.min(c);
                    checked += 1;
                }
            }
        }
        let cfg = ProxConfig::exact().with_tau_theta(tau_theta);
        let dirs = proxprop_directions(&net, &x, &labels, &cfg)?;
        let mut bounds = Vec::with_capacity(net.blocks.len());
        for (i, bc) in cache.blocks.iter().enumerate() {
            if i + 1 == net.blocks.len() {
                bounds.push(None);
            } else {
                bounds.push(exact_cos_bound(&bc.prep, tau_theta)?);
            }
        }
        let rep = descent_report(&dirs, &grads, Some(&bounds))?;
        violations += rep.violations;
        for l in rep.layers {
            if let Some(c) = l.cos_alpha {
                min_cos = min_cos.min(c);
                checked += 1;
            }
        }
    }
    Ok(SuiteOutcome {
        name: "descent",
        pass: violations == 0,
        details: vec![
            ("nets".into(), nets.to_string()),
            ("modes".into(), "cg1,cg3,cg5,cg10,exact".into()),
            ("layers_checked".into(), checked.to_string()),
            ("min_cos".into(), format!("{min_cos:.3e}")),
            ("violations".into(), violations.to_string()),
        ],
    })
}

/// Smallest eigenvalue of the descent metric stays at or above
/// `1/tau_theta` on random activation matrices, probed matrix-free.
pub fn suite_spectral(instances: u64) -> Result<SuiteOutcome> {
    let mut worst_margin = f64::INFINITY;
    let mut failures = 0usize;
    for i in 0..instances {
        let mut r = rng::seeded(0xab5e_c7a1 ^ i);
        let din = 2 + (r.next_u64() % 5) as usize;
        let dout = 2 + (r.next_u64() % 4) as usize;
        let batch = 1 + (r.next_u64() % 6) as usize;
        let tau_theta = 10f64.powf(rng::uniform(&mut r, -2.0, 2.0));
        let transfer = LinearTransfer::dense(din, dout);
        let a = Tensor::uniform(&[din, batch], -2.0, 2.0, &mut r);
        let prep = transfer.prepare(&a)?;
        let op = OperatorM::new(&transfer, &prep, tau_theta);
        let lam_min = smallest_eigenvalue(&op, 120, i ^ 0x77)?;
        // the same bound read on the inverse metric
        let inv_top = 1.0 / lam_min;
        let margin = (lam_min - 1.0 / tau_theta) * tau_theta; // relative slack
        worst_margin = worst_margin.min(margin);
        if lam_min < 1.0 / tau_theta - 1e-8 || inv_top > tau_theta + 1e-8 {
            failures += 1;
        }
    }
    Ok(SuiteOutcome {
        name: "spectral",
        pass: failures == 0,
        details: vec![
            ("instances".into(), instances.to_string()),
            ("min_relative_margin".into(), format!("{worst_margin:.3e}")),
            ("failures".into(), failures.to_string()),
        ],
    })
}

/// The exact proximal step decreases its block objective (plus the proximal
/// quadratic) for small, unit, and huge step sizes alike.
pub fn suite_prox_stability(instances: u64) -> Result<SuiteOutcome> {
    let mut violations = 0usize;
    let mut checked = 0usize;
    for i in 0..instances {
        let mut r = rng::seeded(0x970c_c0de ^ i);
        let din = 2 + (r.next_u64() % 5) as usize;
        let dout = 2 + (r.next_u64() % 4) as usize;
        let batch = 1 + (r.next_u64() % 7) as usize;
        let transfer = LinearTransfer::dense(din, dout);
        let theta = transfer.init_theta(&mut r);
        let a = Tensor::uniform(&[din, batch], -2.0, 2.0, &mut r);
        let prep = transfer.prepare(&a)?;
        let z = Tensor::uniform(&[dout, batch], -2.0, 2.0, &mut r);
        let objective = |th: &Tensor| -> Result<f64> {
            let res = transfer.apply(th, &prep)?.sub(&z)?;
            Ok(0.5 * res.dot(&res)?)
        };
        for tau_theta in [0.01, 1.0, 100.0] {
            let next = prox_step_exact(&transfer, &theta, &prep, &z, tau_theta)?;
            let step = next.sub(&theta)?;
            let lhs = objective(&next)? + step.dot(&step)? / (2.0 * tau_theta);
            let rhs = objective(&theta)?;
            checked += 1;
            if lhs > rhs + 1e-9 * rhs.max(1.0) {
                violations += 1;
            }
        }
    }
    Ok(SuiteOutcome {
        name: "prox_stability",
        pass: violations == 0,
        details: vec![
            ("instances".into(), instances.to_string()),
            ("steps_checked".into(), checked.to_string()),
            ("tau_theta_grid".into(), "0.01,1,100".into()),
            ("violations".into(), violations.to_string()),
        ],
    })
}

/// Central differences converge at second order: halving the step divides
/// the gradient-check error by roughly four.
pub fn suite_fd_order() -> Result<SuiteOutcome> {
    let (net, x, labels) = random_tanh_instance(0x0d0e);
    let cache = net.forward(&x)?;
    let grads = backprop_grad(&net, &cache, &labels)?;
    let coarse = max_rel_error(
        &grads,
        &finite_diff_grad(&net, &x, &labels, 2e-3, 100, 1)?,
        1e-9,
    );
    let fine = max_rel_error(
        &grads,
        &finite_diff_grad(&net, &x, &labels, 1e-3, 100, 1)?,
        1e-9,
    );
    let factor = coarse / fine;
    Ok(SuiteOutcome {
        name: "fd_order",
        pass: (2.0..8.0).contains(&factor),
        details: vec![
            ("coarse_error".into(), format!("{coarse:.3e}")),
            ("fine_error".into(), format!("{fine:.3e}")),
            ("improvement_factor".into(), format!("{factor:.2}")),
        ],
    })
}

/// Runs every suite at its default size.
pub fn run_all(seeds: u64) -> Result<Vec<SuiteOutcome>> {
    Ok(vec![
        suite_equivalence(seeds)?,
        suite_gradcheck(20, 200)?,
        suite_descent(100)?,
        suite_spectral(seeds)?,
        suite_prox_stability(seeds)?,
        suite_fd_order()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_at_reduced_sizes() {
        for suite in [
            suite_equivalence(10).unwrap(),
            suite_gradcheck(5, 60).unwrap(),
            suite_descent(10).unwrap(),
            suite_spectral(10).unwrap(),
            suite_prox_stability(10).unwrap(),
            suite_fd_order().unwrap(),
        ] {
            assert!(suite.pass, "{suite}");
        }
    }

    #[test]
    fn outcomes_render_as_key_value_lines() {
        let s = suite_fd_order().unwrap();
        let line = s.to_string();
        assert!(line.starts_with("suite=fd_order "));
        assert!(line.ends_with("pass=true"));
    }
}
