//! Property tests over randomized instances.

use proptest::prelude::*;
use proxprop_core::linalg::{cg_solve, DenseOperator};
use proxprop_core::network::{backprop_grad, softmax_xent, LinearTransfer, Nonlin};
use proxprop_core::proxprop::{apply_m, proxprop_directions, ProxConfig};
use proxprop_core::rng::seeded;
use proxprop_core::tensor::{gemm_nt, Tensor};
use proxprop_core::Network;

fn spd(n: usize, seed: u64) -> Tensor {
    let mut r = seeded(seed);
    let g = Tensor::uniform(&[n, n], -1.0, 1.0, &mut r);
    let mut a = gemm_nt(&g, &g).unwrap();
    for i in 0..n {
        a[(i, i)] += 0.5;
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Truncated CG from zero keeps a positive inner product with the rhs.
    #[test]
    fn cg_truncations_stay_positively_correlated(seed in 0u64..5000, n in 2usize..9, k in 1usize..9) {
        let k = k.min(n);
        let a = spd(n, seed);
        let op = DenseOperator::new(a).unwrap();
        let mut r = seeded(seed ^ 0xffff);
        let b = Tensor::uniform(&[n], -1.0, 1.0, &mut r);
        if b.norm() > 1e-9 {
            let (x, _) = cg_solve(&op, &b, k, 0.0).unwrap();
            prop_assert!(x.dot(&b).unwrap() > 0.0);
        }
    }

    /// The parameter adjoint pairs with the forward map under the inner
    /// product, for random dense shapes.
    #[test]
    fn dense_adjoint_identity(seed in 0u64..5000, din in 1usize..7, dout in 1usize..7, batch in 1usize..6) {
        let t = LinearTransfer::dense(din, dout);
        let mut r = seeded(seed);
        let a = Tensor::uniform(&[din, batch], -1.0, 1.0, &mut r);
        let prep = t.prepare(&a).unwrap();
        let v = Tensor::uniform(&[dout, din + 1], -1.0, 1.0, &mut r);
        let res = Tensor::uniform(&[dout, batch], -1.0, 1.0, &mut r);
        let lhs = t.apply(&v, &prep).unwrap().dot(&res).unwrap();
        let rhs = v.dot(&t.param_adjoint(&res, &prep).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    /// Shifting every logit in a column leaves the loss unchanged.
    #[test]
    fn loss_shift_invariance(seed in 0u64..5000, k in 2usize..8, n in 1usize..7, shift in -25.0f64..25.0) {
        let mut r = seeded(seed);
        let logits = Tensor::uniform(&[k, n], -3.0, 3.0, &mut r);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let (base, _) = softmax_xent(&logits, &labels).unwrap();
        let shifted = logits.map(|v| v + shift);
        let (moved, _) = softmax_xent(&shifted, &labels).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12);
    }

    /// Exact-mode proximal directions solve the metric equation and stay
    /// descent directions.
    #[test]
    fn exact_directions_satisfy_metric_equation(seed in 0u64..2000) {
        let mut r = seeded(seed);
        let net = Network::mlp(&[3, 5, 2], Nonlin::Tanh, &mut r).unwrap();
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut r);
        let labels = vec![0usize, 1, 0, 1];
        let cfg = ProxConfig::exact().with_tau_theta(0.4);
        let dirs = proxprop_directions(&net, &x, &labels, &cfg).unwrap();
        let cache = net.forward(&x).unwrap();
        let grads = backprop_grad(&net, &cache, &labels).unwrap();
        let md = apply_m(&net.blocks[0].transfer, &cache.blocks[0].prep, 0.4, &dirs.layers[0].dir).unwrap();
        let rel = md.sub(&grads.layers[0].dir).unwrap().norm() / grads.layers[0].dir.norm().max(1e-300);
        prop_assert!(rel <= 1e-8);
        if grads.layers[0].dir.norm() > 1e-12 {
            prop_assert!(dirs.layers[0].dir.dot(&grads.layers[0].dir).unwrap() > 0.0);
        }
    }
}
