//! Fixtures shared by the benchmarks.

use supportnet::data::{synthetic_blobs, Dataset, Split};
use supportnet::{Activation, NetworkParams, SeededRng};

/// MNIST-shaped blobs: `k` classes of 784-dimensional points.
pub fn blobs(k: usize, per_class: usize, seed: u64) -> Dataset {
    synthetic_blobs(k, 784, per_class, 3.0, &mut SeededRng::new(seed), Split::Train).expect("valid blob parameters")
}

/// The 784-256-128-K network used in the experiments.
pub fn mnist_net(k: usize, seed: u64) -> NetworkParams {
    NetworkParams::init(784, &[256, 128], Activation::Relu, k, 0.01, &mut SeededRng::new(seed))
        .expect("valid widths")
}
