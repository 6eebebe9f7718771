//! The three compression-selection policies behind one interface: the
//! network-adaptive policy driven by running estimates of expected
//! rounds-cost and round duration, plus the fixed-bit and fixed-error
//! baselines.

use serde::{Deserialize, Serialize};

use crate::congestion::BtdVector;
use crate::error::{Error, Result};
use crate::roundcost::{
    min_duration_capped, q_bar, round_duration, rounds_cost_norm, weighted_argmin, BitAssignment,
    CostModel,
};

/// Step-size schedule for the running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaMode {
    /// `beta_n = 1/n`, indexed so the first update uses beta = 1 and
    /// overwrites the initialization.
    Harmonic,
    /// Fixed step size, the regime of the asymptotic optimality result.
    Constant(f64),
}

/// Running estimates of expected rounds-cost and expected round duration.
#[derive(Debug, Clone, PartialEq)]
pub struct NacflEstimates {
    r_hat: f64,
    d_hat: f64,
    rounds: u64,
    alpha: f64,
    beta_mode: BetaMode,
}

impl NacflEstimates {
    pub fn new(r0: f64, d0: f64, alpha: f64, beta_mode: BetaMode) -> Result<Self> {
        if r0 <= 0.0 || d0 <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "estimates must start positive, got r0={r0}, d0={d0}"
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if let BetaMode::Constant(beta) = beta_mode {
            if !(0.0 < beta && beta <= 1.0) {
                return Err(Error::InvalidParam(format!(
                    "constant beta must lie in (0, 1], got {beta}"
                )));
            }
        }
        Ok(NacflEstimates {
            r_hat: r0,
            d_hat: d0,
            rounds: 0,
            alpha,
            beta_mode,
        })
    }

    /// Initialization from an all-3-bit probe: with the harmonic schedule the
    /// first update overwrites these anyway.
    pub fn default_init(
        cm: &CostModel,
        probe_mean_c: &BtdVector,
        alpha: f64,
        beta_mode: BetaMode,
    ) -> Result<Self> {
        let probe_bits = BitAssignment::uniform(cm.m, 3);
        let r0 = rounds_cost_norm(&cm.vmap, &probe_bits);
        let d0 = round_duration(cm, &probe_bits, probe_mean_c);
        NacflEstimates::new(r0, d0, alpha, beta_mode)
    }

    pub fn r_hat(&self) -> f64 {
        self.r_hat
    }

    pub fn d_hat(&self) -> f64 {
        self.d_hat
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    fn next_beta(&self) -> f64 {
        match self.beta_mode {
            BetaMode::Harmonic => 1.0 / (self.rounds + 1) as f64,
            BetaMode::Constant(beta) => beta,
        }
    }

    /// Choose this round's assignment by the weighted argmin (duration
    /// weighted by `alpha * r_hat`, rounds-cost by `d_hat`), then fold the
    /// realized pair into the running averages.
    pub fn decide(&mut self, cm: &CostModel, c: &BtdVector) -> PolicyDecision {
        let bits = weighted_argmin(cm, c, self.alpha * self.r_hat, self.d_hat);
        let duration = round_duration(cm, &bits, c);
        let cost = rounds_cost_norm(&cm.vmap, &bits);
        let beta = self.next_beta();
        self.r_hat = (1.0 - beta) * self.r_hat + beta * cost;
        self.d_hat = (1.0 - beta) * self.d_hat + beta * duration;
        self.rounds += 1;
        PolicyDecision {
            q_bar: q_bar(&cm.vmap, &bits),
            predicted_duration: duration,
            cap_infeasible: false,
            bits,
        }
    }
}

/// One round's compression choice.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub bits: BitAssignment,
    /// Average normalized variance of the assignment.
    pub q_bar: f64,
    /// Round duration implied by the observed network state.
    pub predicted_duration: f64,
    /// Set by the fixed-error policy when its cap is unreachable.
    pub cap_infeasible: bool,
}

/// Every client quantizes at the same constant bit-width.
pub fn fixed_bit_decide(bits: u8, cm: &CostModel, c: &BtdVector) -> PolicyDecision {
    let assignment = BitAssignment::uniform(cm.m, bits);
    PolicyDecision {
        q_bar: q_bar(&cm.vmap, &assignment),
        predicted_duration: round_duration(cm, &assignment, c),
        cap_infeasible: false,
        bits: assignment,
    }
}

/// Minimize the round duration subject to an average-variance cap.
pub fn fixed_error_decide(q_cap: f64, cm: &CostModel, c: &BtdVector) -> PolicyDecision {
    assert!(q_cap > 0.0);
    let capped = min_duration_capped(cm, c, q_cap);
    PolicyDecision {
        q_bar: q_bar(&cm.vmap, &capped.bits),
        predicted_duration: round_duration(cm, &capped.bits, c),
        cap_infeasible: capped.cap_infeasible,
        bits: capped.bits,
    }
}

/// A compression policy with whatever per-run state it carries.
#[derive(Debug, Clone)]
pub enum Policy {
    Nacfl(NacflEstimates),
    FixedBit(u8),
    FixedError(f64),
}

impl Policy {
    pub fn decide(&mut self, cm: &CostModel, c: &BtdVector) -> PolicyDecision {
        match self {
            Policy::Nacfl(est) => est.decide(cm, c),
            Policy::FixedBit(b) => fixed_bit_decide(*b, cm, c),
            Policy::FixedError(cap) => fixed_error_decide(*cap, cm, c),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Policy::Nacfl(_) => "nacfl".into(),
            Policy::FixedBit(b) => format!("fixed_bit_{b}"),
            Policy::FixedError(_) => "fixed_error".into(),
        }
    }
}
