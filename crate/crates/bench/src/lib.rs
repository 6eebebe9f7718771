//! Shared fixtures for the criterion benchmarks.

use nacfl::congestion::BtdVector;
use nacfl::quantizer::VarianceMap;
use nacfl::roundcost::CostModel;
use nacfl::rng::substream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha;

/// Cost model at the neural workload's scale.
pub fn mlp_cost_model(m: usize) -> CostModel {
    CostModel::new(0.0, 2, VarianceMap::analytic(198_760), 198_760, m)
}

/// A reproducible stream for benchmark inputs.
pub fn bench_rng(tag: u64) -> ChaCha8Rng {
    substream(0xbe7c4, &[tag])
}

/// Log-normal-ish positive delays.
pub fn random_btd(m: usize, rng: &mut ChaCha8Rng) -> BtdVector {
    BtdVector::new(
        (0..m)
            .map(|_| f64::exp(rng.random_range(-1.5..1.5)))
            .collect(),
    )
}
