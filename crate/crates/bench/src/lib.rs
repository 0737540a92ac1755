//! Shared fixtures for the criterion benchmarks.

use proxprop_core::network::Nonlin;
use proxprop_core::rng::seeded;
use proxprop_core::tensor::Tensor;
use proxprop_core::Network;

/// A mid-sized relu MLP with a batch, as used across the benches.
pub fn bench_net(widths: &[usize], batch: usize, seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut rng = seeded(seed);
    let net = Network::mlp(widths, Nonlin::Relu, &mut rng).expect("valid widths");
    let x = Tensor::uniform(&[widths[0], batch], 0.0, 1.0, &mut rng);
    let classes = *widths.last().unwrap();
    let labels = (0..batch).map(|i| i % classes).collect();
    (net, x, labels)
}
