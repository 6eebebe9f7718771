//! Stochastic uniform quantizer, its exact message size, and the mapping
//! between bit-width and normalized compression variance.
//!
//! The quantizer scales a vector by its infinity norm, keeps per-coordinate
//! signs, and randomly rounds each scaled magnitude to one of `2^b - 1`
//! uniform levels so that the reconstruction is unbiased. Sizes are computed
//! analytically; levels are never serialized to an actual bitstream.

use rand::Rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{std_normal, substream, DOMAIN_CALIBRATION};

/// Largest supported per-coordinate bit-width.
pub const MAX_BITS: u8 = 32;

/// Number of quantization levels above zero for a given bit-width.
#[inline]
fn level_count(bits: u8) -> f64 {
    debug_assert!((1..=MAX_BITS).contains(&bits));
    ((1u64 << bits) - 1) as f64
}

/// A quantized vector: infinity norm, signs, and per-coordinate levels.
#[derive(Debug, Clone)]
pub struct QuantizedVector {
    pub inf_norm: f64,
    /// Signs in {-1, +1}; zero coordinates carry +1 with level 0.
    pub signs: Vec<i8>,
    /// Levels in `[0, 2^bits - 1]`.
    pub levels: Vec<u32>,
    pub bits: u8,
}

impl QuantizedVector {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Unbiased reconstruction of the original vector.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.add_scaled_into(1.0, &mut out);
        out
    }

    /// Accumulate `scale * reconstruction` into `out` without a temporary.
    pub fn add_scaled_into(&self, scale: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.len());
        if self.inf_norm == 0.0 {
            return;
        }
        let denom = level_count(self.bits);
        let factor = scale * self.inf_norm / denom;
        for ((o, &s), &l) in out.iter_mut().zip(&self.signs).zip(&self.levels) {
            *o += factor * f64::from(s) * f64::from(l);
        }
    }
}

/// Stochastically quantize `x` to `bits` bits per coordinate.
///
/// A coordinate with scaled magnitude in `[l/(2^b-1), (l+1)/(2^b-1))` is
/// rounded up with probability proportional to its offset in the cell, so
/// the expected reconstruction equals `x`.
pub fn quantize<R: Rng + ?Sized>(x: &[f64], bits: u8, rng: &mut R) -> QuantizedVector {
    assert!(
        (1..=MAX_BITS).contains(&bits),
        "bit-width {bits} outside 1..=32"
    );
    debug_assert!(x.iter().all(|v| v.is_finite()));
    let inf_norm = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut signs = vec![1i8; x.len()];
    let mut levels = vec![0u32; x.len()];
    if inf_norm > 0.0 {
        let denom = level_count(bits);
        for (i, &v) in x.iter().enumerate() {
            if v < 0.0 {
                signs[i] = -1;
            }
            let scaled = (v.abs() / inf_norm) * denom;
            let floor = scaled.floor();
            let frac = scaled - floor;
            let up = rng.random::<f64>() < frac;
            levels[i] = floor as u32 + u32::from(up);
        }
    }
    QuantizedVector {
        inf_norm,
        signs,
        levels,
        bits,
    }
}

/// Transmitted size in bits for a `d`-coordinate message at bit-width `b`:
/// one sign bit plus `b` level bits per coordinate plus a 32-bit norm.
pub fn message_size_bits(d: usize, bits: u8) -> u64 {
    assert!(d >= 1);
    assert!((1..=MAX_BITS).contains(&bits));
    d as u64 * (u64::from(bits) + 1) + 32
}

/// Mapping from bit-width to normalized compression variance `q`, the bound
/// on `E‖Q(x)-x‖² / ‖x‖²` used as the policies' decision variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum VarianceMap {
    /// Worst-case analytic bound `q(b) = d / (4 (2^b - 1)^2)`.
    AnalyticWorstCase { dim: usize },
    /// Monte Carlo table calibrated on standard Gaussian inputs.
    EmpiricalCalibrated { dim: usize, table: Vec<f64> },
}

impl VarianceMap {
    pub fn analytic(dim: usize) -> Self {
        VarianceMap::AnalyticWorstCase { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            VarianceMap::AnalyticWorstCase { dim } => *dim,
            VarianceMap::EmpiricalCalibrated { dim, .. } => *dim,
        }
    }

    /// Normalized variance for bit-width `b`.
    pub fn q(&self, bits: u8) -> f64 {
        assert!((1..=MAX_BITS).contains(&bits));
        match self {
            VarianceMap::AnalyticWorstCase { dim } => {
                let denom = level_count(bits);
                *dim as f64 / (4.0 * denom * denom)
            }
            VarianceMap::EmpiricalCalibrated { table, .. } => table[usize::from(bits) - 1],
        }
    }

    /// Largest q the compressor can produce, attained at one bit.
    pub fn q_max(&self) -> f64 {
        self.q(1)
    }
}

/// Measure the empirical normalized variance of the quantizer on standard
/// Gaussian inputs of dimension `dim`, one table entry per bit-width.
///
/// A pool-adjacent-violators pass enforces the monotone (nonincreasing in
/// `b`) shape the policies rely on; Monte Carlo jitter at high bit-widths is
/// far below any policy-relevant scale.
pub fn calibrate(dim: usize, trials: usize, seed: u64) -> VarianceMap {
    assert!(dim >= 1);
    assert!(trials >= 1_000, "calibration needs at least 1000 trials");
    // One Gaussian draw is reused across all bit-widths of a trial; this
    // correlates table columns but leaves each entry's mean unchanged.
    let sums: Vec<[f64; MAX_BITS as usize]> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = substream(seed, &[DOMAIN_CALIBRATION, trial as u64]);
            let x: Vec<f64> = (0..dim).map(|_| std_normal(&mut rng)).collect();
            let norm_sq: f64 = x.iter().map(|v| v * v).sum();
            let mut row = [0.0; MAX_BITS as usize];
            if norm_sq > 0.0 {
                for (bi, entry) in row.iter_mut().enumerate() {
                    let qv = quantize(&x, (bi + 1) as u8, &mut rng);
                    let mut err = 0.0;
                    let recon = qv.reconstruct();
                    for (r, v) in recon.iter().zip(&x) {
                        let e = r - v;
                        err += e * e;
                    }
                    *entry = err / norm_sq;
                }
            }
            row
        })
        .collect();

    let mut table = vec![0.0f64; MAX_BITS as usize];
    for row in &sums {
        for (t, v) in table.iter_mut().zip(row) {
            *t += v;
        }
    }
    for t in table.iter_mut() {
        *t /= trials as f64;
    }
    isotonic_nonincreasing(&mut table);
    VarianceMap::EmpiricalCalibrated { dim, table }
}

/// Isotonic (nonincreasing) regression by pooling adjacent violators.
pub fn isotonic_nonincreasing(values: &mut [f64]) {
    // Isotonic regression for a nonincreasing sequence: pool neighboring
    // blocks whose means are out of order.
    let n = values.len();
    let mut block_mean: Vec<f64> = values.to_vec();
    let mut block_len: Vec<usize> = vec![1; n];
    let mut k = 0usize;
    for i in 0..n {
        block_mean[k] = values[i];
        block_len[k] = 1;
        while k > 0 && block_mean[k - 1] < block_mean[k] {
            let merged = (block_mean[k - 1] * block_len[k - 1] as f64
                + block_mean[k] * block_len[k] as f64)
                / (block_len[k - 1] + block_len[k]) as f64;
            block_mean[k - 1] = merged;
            block_len[k - 1] += block_len[k];
            k -= 1;
        }
        k += 1;
    }
    let mut pos = 0usize;
    for b in 0..k {
        for _ in 0..block_len[b] {
            values[pos] = block_mean[b];
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn zero_vector_reconstructs_exactly() {
        let mut rng = substream(1, &[9]);
        let qv = quantize(&[0.0, 0.0, 0.0], 1, &mut rng);
        assert_eq!(qv.inf_norm, 0.0);
        assert_eq!(qv.reconstruct(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn boundary_magnitudes_are_exact_for_any_bits() {
        // Every |x_i| equal to the norm maps to the top level exactly.
        let mut rng = substream(2, &[9]);
        for bits in [1u8, 2, 7, 32] {
            let qv = quantize(&[3.0, -3.0], bits, &mut rng);
            assert_eq!(qv.reconstruct(), vec![3.0, -3.0]);
        }
    }

    #[test]
    fn monte_carlo_reconstruction_is_unbiased() {
        // Mean of 1e5 reconstructions of (1.0, 0.5) at one bit must be within
        // four standard errors per coordinate.
        let x = [1.0, 0.5];
        let n = 100_000usize;
        let mut rng = substream(3, &[9]);
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for _ in 0..n {
            let r = quantize(&x, 1, &mut rng).reconstruct();
            for i in 0..2 {
                sum[i] += r[i];
                sum_sq[i] += r[i] * r[i];
            }
        }
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - x[i]).abs() <= 4.0 * se.max(1e-12),
                "coordinate {i}: mean {mean} vs {expected}, se {se}",
                expected = x[i]
            );
        }
    }

    #[test]
    fn message_size_matches_formula() {
        assert_eq!(message_size_bits(3, 1), 38);
        assert_eq!(message_size_bits(199_210, 2), 597_662);
        assert_eq!(message_size_bits(1, 32), 65);
    }

    #[test]
    fn analytic_map_values() {
        let map = VarianceMap::analytic(4);
        assert_eq!(map.q(1), 1.0); // 4 / (4 * 1)
        let big = VarianceMap::analytic(198_760);
        assert!(big.q(32) < 1e-15 * 198_760.0);
    }

    #[test]
    fn analytic_map_is_strictly_decreasing() {
        let map = VarianceMap::analytic(100);
        for b in 1..MAX_BITS {
            assert!(map.q(b) > map.q(b + 1));
        }
    }

    #[test]
    fn calibration_is_below_analytic_bound_and_ordered() {
        let d = 100;
        let map = calibrate(d, 1_000, 11);
        let analytic = VarianceMap::analytic(d);
        for b in 1..=MAX_BITS {
            assert!(
                map.q(b) <= analytic.q(b) * (1.0 + 1e-9),
                "b={b}: empirical {} above analytic {}",
                map.q(b),
                analytic.q(b)
            );
        }
        assert!(map.q(1) > map.q(2));
        assert!(map.q(2) > map.q(3));
    }

    #[test]
    fn calibration_single_coordinate_is_noise_floor() {
        // d=1: the sole coordinate always sits at the norm, so the error is 0.
        let map = calibrate(1, 1_000, 12);
        for b in 1..=MAX_BITS {
            assert!(map.q(b) < 1e-12);
        }
    }

    #[test]
    fn calibration_matches_fresh_monte_carlo() {
        // Independent re-estimate at d=100, b=2 agrees within 5%.
        let d = 100;
        let map = calibrate(d, 10_000, 13);
        let mut rng = substream(99, &[7]);
        let trials = 10_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
            let norm_sq: f64 = x.iter().map(|v| v * v).sum();
            let recon = quantize(&x, 2, &mut rng).reconstruct();
            let err: f64 = recon
                .iter()
                .zip(&x)
                .map(|(r, v)| (r - v) * (r - v))
                .sum();
            acc += err / norm_sq;
        }
        let fresh = acc / trials as f64;
        let rel = (map.q(2) - fresh).abs() / fresh;
        assert!(rel < 0.05, "table {} vs fresh {fresh}", map.q(2));
    }

    #[test]
    fn pav_pools_violations() {
        let mut v = vec![5.0, 1.0, 3.0, 0.5];
        isotonic_nonincreasing(&mut v);
        assert_eq!(v, vec![5.0, 2.0, 2.0, 0.5]);
        for w in v.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    proptest! {
        #[test]
        fn reconstruction_magnitude_never_exceeds_inf_norm(
            xs in proptest::collection::vec(-1e6f64..1e6, 1..24),
            bits in 1u8..=32,
            seed in any::<u64>(),
        ) {
            let mut rng = substream(seed, &[41]);
            let qv = quantize(&xs, bits, &mut rng);
            let recon = qv.reconstruct();
            for r in recon {
                prop_assert!(r.abs() <= qv.inf_norm * (1.0 + 1e-12));
            }
        }

        #[test]
        fn empirical_error_obeys_worst_case_bound(
            xs in proptest::collection::vec(-1e3f64..1e3, 2..16),
            bits in 1u8..=8,
            seed in any::<u64>(),
        ) {
            let norm_sq: f64 = xs.iter().map(|v| v * v).sum();
            prop_assume!(norm_sq > 1e-6);
            let bound = VarianceMap::analytic(xs.len()).q(bits) * norm_sq;
            let mut rng = substream(seed, &[42]);
            let mut acc = 0.0;
            let trials = 200;
            for _ in 0..trials {
                let recon = quantize(&xs, bits, &mut rng).reconstruct();
                let err: f64 = recon.iter().zip(&xs).map(|(r, v)| (r - v) * (r - v)).sum();
                acc += err;
            }
            // Worst-case bound dominates the mean with slack for MC noise.
            prop_assert!(acc / trials as f64 <= bound * 1.25 + 1e-12);
        }
    }
}
