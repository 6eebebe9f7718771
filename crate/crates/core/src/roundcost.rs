//! Round-duration model, the rounds-cost function, and the exact per-round
//! discrete optimizers shared by all compression policies.
//!
//! A round lasts as long as its slowest client: compute time plus the
//! client's bit-transmission delay times its message size. The rounds-cost
//! of an assignment is the L2 norm of `sqrt(q_j + 1)` across clients, the
//! increasing function of compression variance that scales how many rounds
//! training needs.

use serde::{Deserialize, Serialize};

use crate::congestion::BtdVector;
use crate::quantizer::{message_size_bits, VarianceMap, MAX_BITS};

/// Static cost parameters of a deployment.
#[derive(Debug, Clone)]
pub struct CostModel {
    /// Compute seconds per local step.
    pub theta: f64,
    /// Local steps per round.
    pub tau: u32,
    /// Bit-width to normalized-variance map.
    pub vmap: VarianceMap,
    /// Model dimension entering the message size.
    pub d_model: usize,
    /// Client count.
    pub m: usize,
}

impl CostModel {
    pub fn new(theta: f64, tau: u32, vmap: VarianceMap, d_model: usize, m: usize) -> Self {
        assert!(theta >= 0.0);
        assert!(tau >= 1);
        assert!(m >= 1);
        CostModel {
            theta,
            tau,
            vmap,
            d_model,
            m,
        }
    }

    #[inline]
    fn transmit_seconds(&self, c_j: f64, bits: u8) -> f64 {
        c_j * message_size_bits(self.d_model, bits) as f64
    }
}

/// Per-client quantizer bit-widths for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitAssignment(Vec<u8>);

impl BitAssignment {
    pub fn new(bits: Vec<u8>) -> Self {
        assert!(
            bits.iter().all(|b| (1..=MAX_BITS).contains(b)),
            "bit-width outside 1..=32"
        );
        BitAssignment(bits)
    }

    pub fn uniform(m: usize, bits: u8) -> Self {
        Self::new(vec![bits; m])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn total_bits(&self) -> u32 {
        self.0.iter().map(|&b| u32::from(b)).sum()
    }
}

/// Duration of a round: `theta*tau + max_j c_j * s(b_j)` seconds.
pub fn round_duration(cm: &CostModel, bits: &BitAssignment, c: &BtdVector) -> f64 {
    assert_eq!(bits.len(), c.len());
    let max_transmit = bits
        .bits()
        .iter()
        .zip(c.as_slice())
        .map(|(&b, &cj)| cm.transmit_seconds(cj, b))
        .fold(0.0f64, f64::max);
    cm.theta * f64::from(cm.tau) + max_transmit
}

/// Scalar rounds-cost of a compression variance: `sqrt(q + 1)`.
///
/// Constant prefactors cancel in every argmin this feeds, so they are
/// dropped; see the scaling-invariance tests.
pub fn rounds_cost(q: f64) -> f64 {
    debug_assert!(q >= 0.0);
    (q + 1.0).sqrt()
}

/// L2 rounds-cost of an assignment: `sqrt(sum_j (q(b_j) + 1))`.
pub fn rounds_cost_norm(vmap: &VarianceMap, bits: &BitAssignment) -> f64 {
    bits.bits()
        .iter()
        .map(|&b| vmap.q(b) + 1.0)
        .sum::<f64>()
        .sqrt()
}

/// Average normalized variance of an assignment.
pub fn q_bar(vmap: &VarianceMap, bits: &BitAssignment) -> f64 {
    bits.bits().iter().map(|&b| vmap.q(b)).sum::<f64>() / bits.len() as f64
}

/// All candidate transmission budgets `c_j * s(b)`, ascending.
fn candidate_budgets(cm: &CostModel, c: &BtdVector) -> Vec<f64> {
    let mut budgets = Vec::with_capacity(c.len() * MAX_BITS as usize);
    for &cj in c.as_slice() {
        for b in 1..=MAX_BITS {
            budgets.push(cm.transmit_seconds(cj, b));
        }
    }
    budgets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    budgets.dedup();
    budgets
}

/// Largest bit-width whose transmission fits in `budget` seconds for a
/// client with delay `c_j`, at least one bit.
fn largest_bits_within(cm: &CostModel, c_j: f64, budget: f64) -> u8 {
    // Closed form from s(b) = d(b+1)+32, then nudge for float rounding.
    let d = cm.d_model as f64;
    let guess = if c_j <= 0.0 {
        MAX_BITS as i64
    } else {
        ((budget / c_j - 32.0) / d - 1.0).floor() as i64
    };
    let mut b = guess.clamp(1, i64::from(MAX_BITS)) as u8;
    while b < MAX_BITS && cm.transmit_seconds(c_j, b + 1) <= budget {
        b += 1;
    }
    while b > 1 && cm.transmit_seconds(c_j, b) > budget {
        b -= 1;
    }
    b
}

fn greedy_assignment(cm: &CostModel, c: &BtdVector, budget: f64) -> BitAssignment {
    BitAssignment::new(
        c.as_slice()
            .iter()
            .map(|&cj| largest_bits_within(cm, cj, budget))
            .collect(),
    )
}

/// Exact minimizer of `w_dur * duration(b, c) + w_rounds * rounds_cost_norm(b)`
/// over all assignments in `{1..32}^m`.
///
/// For any fixed transmission budget the per-client optimum is the largest
/// bit-width that fits (raising bits within budget lowers variance without
/// raising the max term), so sweeping the `32m` candidate per-client delays
/// and scoring the true objective visits a global minimizer. Ties go to the
/// assignment with more total bits (lower variance).
pub fn weighted_argmin(cm: &CostModel, c: &BtdVector, w_dur: f64, w_rounds: f64) -> BitAssignment {
    assert!(w_dur >= 0.0 && w_rounds >= 0.0);
    assert!(
        w_dur > 0.0 || w_rounds > 0.0,
        "at least one objective weight must be positive"
    );
    let mut best: Option<(f64, u32, BitAssignment)> = None;
    for budget in candidate_budgets(cm, c) {
        let bits = greedy_assignment(cm, c, budget);
        let objective =
            w_dur * round_duration(cm, &bits, c) + w_rounds * rounds_cost_norm(&cm.vmap, &bits);
        let total = bits.total_bits();
        let better = match &best {
            None => true,
            Some((obj, tot, _)) => objective < *obj || (objective == *obj && total > *tot),
        };
        if better {
            best = Some((objective, total, bits));
        }
    }
    best.expect("candidate set is nonempty").2
}

/// Result of the duration minimization under an average-variance cap.
#[derive(Debug, Clone)]
pub struct CappedAssignment {
    pub bits: BitAssignment,
    /// Set when even the all-32 assignment violates the cap.
    pub cap_infeasible: bool,
}

/// Minimize round duration subject to `mean_j q(b_j) <= q_cap`.
///
/// Candidate budgets are swept ascending; the first budget whose greedy
/// largest-fitting assignment meets the cap is exactly duration-optimal,
/// since shrinking the budget can only raise every client's variance.
pub fn min_duration_capped(cm: &CostModel, c: &BtdVector, q_cap: f64) -> CappedAssignment {
    assert!(q_cap >= 0.0);
    for budget in candidate_budgets(cm, c) {
        let bits = greedy_assignment(cm, c, budget);
        if q_bar(&cm.vmap, &bits) <= q_cap {
            return CappedAssignment {
                bits,
                cap_infeasible: false,
            };
        }
    }
    CappedAssignment {
        bits: BitAssignment::uniform(c.len(), MAX_BITS),
        cap_infeasible: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(d_model: usize, m: usize) -> CostModel {
        CostModel::new(0.0, 1, VarianceMap::analytic(d_model), d_model, m)
    }

    fn btd(values: &[f64]) -> BtdVector {
        BtdVector::new(values.to_vec())
    }

    /// Exhaustive minimizer over the full bit lattice, for m <= 2.
    fn brute_force_argmin(
        cm: &CostModel,
        c: &BtdVector,
        w_dur: f64,
        w_rounds: f64,
    ) -> (f64, BitAssignment) {
        let m = c.len();
        assert!(m <= 2);
        let mut best: Option<(f64, BitAssignment)> = None;
        let combos: Vec<Vec<u8>> = if m == 1 {
            (1..=MAX_BITS).map(|b| vec![b]).collect()
        } else {
            let mut v = Vec::new();
            for b0 in 1..=MAX_BITS {
                for b1 in 1..=MAX_BITS {
                    v.push(vec![b0, b1]);
                }
            }
            v
        };
        for bits in combos {
            let bits = BitAssignment::new(bits);
            let obj =
                w_dur * round_duration(cm, &bits, c) + w_rounds * rounds_cost_norm(&cm.vmap, &bits);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, bits));
            }
        }
        best.unwrap()
    }

    #[test]
    fn duration_direct_evaluation() {
        // theta=0, d=1: s(1) = 34 bits; max(1*34, 2*34) = 68.
        let cm = model(1, 2);
        let bits = BitAssignment::uniform(2, 1);
        assert_eq!(round_duration(&cm, &bits, &btd(&[1.0, 2.0])), 68.0);
    }

    #[test]
    fn duration_compute_only() {
        // A vanishing BTD leaves only the compute term theta * tau.
        let cm = CostModel::new(5.0, 2, VarianceMap::analytic(1), 1, 1);
        let bits = BitAssignment::uniform(1, 1);
        assert_eq!(round_duration(&cm, &bits, &btd(&[1e-300])), 10.0);
    }

    #[test]
    fn duration_at_mlp_scale() {
        let cm = model(199_210, 1);
        let bits = BitAssignment::uniform(1, 2);
        let e = std::f64::consts::E;
        let dur = round_duration(&cm, &bits, &btd(&[e]));
        assert_eq!(dur, e * 597_662.0);
        assert!((dur - 1.6246e6).abs() / 1.6246e6 < 1e-3);
    }

    #[test]
    fn rounds_cost_values() {
        assert_eq!(rounds_cost(0.0), 1.0);
        assert_eq!(rounds_cost(3.0), 2.0);
        assert_eq!(rounds_cost(5.25), 2.5);
    }

    #[test]
    fn rounds_cost_norm_values() {
        // q(32) is ~1e-17 at d=1, effectively zero.
        let vmap = VarianceMap::analytic(1);
        let m4 = BitAssignment::uniform(4, 32);
        assert!((rounds_cost_norm(&vmap, &m4) - 2.0).abs() < 1e-12);
        let vmap3 = VarianceMap::EmpiricalCalibrated {
            dim: 1,
            table: vec![3.0; 32],
        };
        assert_eq!(
            rounds_cost_norm(&vmap3, &BitAssignment::uniform(1, 1)),
            2.0
        );
        let mixed = VarianceMap::EmpiricalCalibrated {
            dim: 1,
            table: vec![1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        // Deliberately non-monotone table, only used to pin the formula.
        let bits = BitAssignment::new(vec![1, 2]);
        assert!((rounds_cost_norm(&mixed, &bits) - 6.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pure_variance_minimization_takes_max_bits() {
        let cm = model(100, 3);
        let bits = weighted_argmin(&cm, &btd(&[1.0, 2.0, 0.5]), 0.0, 1.0);
        assert_eq!(bits.bits(), &[32, 32, 32]);
    }

    #[test]
    fn pure_duration_minimization_takes_one_bit() {
        let cm = model(100, 1);
        let bits = weighted_argmin(&cm, &btd(&[3.0]), 1.0, 0.0);
        assert_eq!(bits.bits(), &[1]);
        // Uniform delays: every client is pinned at one bit.
        let cm3 = model(100, 3);
        let bits = weighted_argmin(&cm3, &btd(&[2.0, 2.0, 2.0]), 1.0, 0.0);
        assert_eq!(bits.bits(), &[1, 1, 1]);
    }

    #[test]
    fn single_client_matches_brute_force() {
        let cm = model(100, 1);
        let c = btd(&[1e-3]);
        let chosen = weighted_argmin(&cm, &c, 1.0, 1e4);
        let (best_obj, best_bits) = brute_force_argmin(&cm, &c, 1.0, 1e4);
        assert_eq!(chosen, best_bits);
        let obj = round_duration(&cm, &chosen, &c) + 1e4 * rounds_cost_norm(&cm.vmap, &chosen);
        assert!((obj - best_obj).abs() <= 1e-9 * best_obj);
    }

    #[test]
    fn capped_lets_slack_cap_take_one_bit() {
        let cm = model(50, 3);
        let cap = cm.vmap.q(1) * 2.0;
        let res = min_duration_capped(&cm, &btd(&[1.0, 1.0, 1.0]), cap);
        assert!(!res.cap_infeasible);
        assert_eq!(res.bits.bits(), &[1, 1, 1]);
    }

    #[test]
    fn capped_just_below_one_bit_pushes_to_two() {
        let cm = model(50, 1);
        let cap = cm.vmap.q(1) * 0.999;
        let res = min_duration_capped(&cm, &btd(&[2.0]), cap);
        assert!(!res.cap_infeasible);
        assert_eq!(res.bits.bits(), &[2]);
    }

    #[test]
    fn capped_matches_brute_force_two_clients() {
        let cm = model(10, 2);
        let c = btd(&[1.0, 100.0]);
        let cap = (cm.vmap.q(2) + cm.vmap.q(4)) / 2.0; // mid-range
        let res = min_duration_capped(&cm, &c, cap);
        assert!(!res.cap_infeasible);
        // Brute force: minimal duration among all feasible assignments.
        let mut best: Option<f64> = None;
        for b0 in 1..=MAX_BITS {
            for b1 in 1..=MAX_BITS {
                let bits = BitAssignment::new(vec![b0, b1]);
                if q_bar(&cm.vmap, &bits) <= cap {
                    let d = round_duration(&cm, &bits, &c);
                    if best.is_none_or(|o| d < o) {
                        best = Some(d);
                    }
                }
            }
        }
        let got = round_duration(&cm, &res.bits, &c);
        assert!((got - best.unwrap()).abs() <= 1e-9 * best.unwrap());
    }

    #[test]
    fn capped_flags_unreachable_cap() {
        let cm = model(50, 2);
        let res = min_duration_capped(&cm, &btd(&[1.0, 2.0]), cm.vmap.q(32) / 2.0);
        assert!(res.cap_infeasible);
        assert_eq!(res.bits.bits(), &[32, 32]);
    }

    proptest! {
        // Exactness against exhaustive enumeration on random instances.
        #[test]
        fn argmin_matches_enumeration(
            c0 in 1e-4f64..1e2,
            c1 in 1e-4f64..1e2,
            w_dur in 1e-3f64..1e3,
            w_rounds in 1e-3f64..1e3,
        ) {
            let cm = model(64, 2);
            let c = btd(&[c0, c1]);
            let chosen = weighted_argmin(&cm, &c, w_dur, w_rounds);
            let obj = w_dur * round_duration(&cm, &chosen, &c)
                + w_rounds * rounds_cost_norm(&cm.vmap, &chosen);
            let (best_obj, _) = brute_force_argmin(&cm, &c, w_dur, w_rounds);
            prop_assert!((obj - best_obj).abs() <= 1e-9 * best_obj.abs());
        }

        // Rescaling both weights cannot change the argmin.
        #[test]
        fn argmin_is_scale_invariant(
            c0 in 1e-4f64..1e2,
            w_dur in 1e-3f64..1e3,
            w_rounds in 1e-3f64..1e3,
            kappa in 1e-3f64..1e3,
        ) {
            let cm = model(64, 1);
            let c = btd(&[c0]);
            let a = weighted_argmin(&cm, &c, w_dur, w_rounds);
            let b = weighted_argmin(&cm, &c, kappa * w_dur, kappa * w_rounds);
            prop_assert_eq!(a, b);
        }

        // Higher congestion never leads to finer quantization.
        #[test]
        fn congestion_response_is_monotone(
            c0 in 1e-4f64..1e2,
            scale in 1f64..1e3,
            w_dur in 1e-2f64..1e2,
            w_rounds in 1e-2f64..1e2,
        ) {
            let cm = model(64, 1);
            let low = weighted_argmin(&cm, &btd(&[c0]), w_dur, w_rounds);
            let high = weighted_argmin(&cm, &btd(&[c0 * scale]), w_dur, w_rounds);
            prop_assert!(high.bits()[0] <= low.bits()[0]);
        }

        // Duration is nondecreasing in every bit-width and delay.
        #[test]
        fn duration_monotone_in_bits_and_delay(
            c0 in 1e-4f64..1e2,
            c1 in 1e-4f64..1e2,
            b0 in 1u8..32,
            b1 in 1u8..=32,
            bump in 0.0f64..10.0,
        ) {
            let cm = model(64, 2);
            let c = btd(&[c0, c1]);
            let base = round_duration(&cm, &BitAssignment::new(vec![b0, b1]), &c);
            let more_bits = round_duration(&cm, &BitAssignment::new(vec![b0 + 1, b1]), &c);
            prop_assert!(more_bits >= base);
            let more_delay = round_duration(
                &cm,
                &BitAssignment::new(vec![b0, b1]),
                &btd(&[c0 + bump, c1]),
            );
            prop_assert!(more_delay >= base);
        }

        // Replacing the rounds-cost by kappa*h while scaling w_dur by kappa
        // leaves the argmin unchanged (the h-constant ambiguity).
        #[test]
        fn h_constant_is_immaterial(
            c0 in 1e-4f64..1e2,
            w_dur in 1e-2f64..1e2,
            w_rounds in 1e-2f64..1e2,
            kappa in 1e-2f64..1e2,
        ) {
            let cm = model(64, 1);
            let c = btd(&[c0]);
            // argmin of w_dur*dur + w_rounds*(kappa*h) == argmin of
            // (w_dur/kappa)*dur + w_rounds*h.
            let a = weighted_argmin(&cm, &c, w_dur / kappa, w_rounds);
            let b = weighted_argmin(&cm, &c, w_dur, w_rounds * kappa);
            prop_assert_eq!(a, b);
        }
    }
}
