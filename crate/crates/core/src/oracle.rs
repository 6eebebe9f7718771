//! Desk-scale validation of the optimality theory on finite chains: the
//! best state-dependent stationary policy for the proxy wall-clock
//! objective, the fluid limit of the adaptive policy's running-estimate
//! updates, and a Monte Carlo check that those estimates converge to the
//! fluid fixed point.

use rayon::prelude::*;

use crate::congestion::FiniteChain;
use crate::policy::{BetaMode, NacflEstimates};
use crate::rng::{substream, DOMAIN_ORACLE};
use crate::roundcost::{
    round_duration, rounds_cost_norm, weighted_argmin, BitAssignment, CostModel,
};

/// A pair of expectations under a stationary policy: expected rounds-cost
/// and expected round duration. Their product is the proxy wall clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyPoint {
    pub rounds_cost: f64,
    pub duration: f64,
}

impl ProxyPoint {
    pub fn proxy_time(&self) -> f64 {
        self.rounds_cost * self.duration
    }

    /// Componentwise relative distance to another point.
    pub fn max_rel_distance(&self, other: &ProxyPoint) -> f64 {
        let dr = (self.rounds_cost - other.rounds_cost).abs() / other.rounds_cost.abs();
        let dd = (self.duration - other.duration).abs() / other.duration.abs();
        dr.max(dd)
    }
}

/// A fixed map from chain state to bit assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy(pub Vec<BitAssignment>);

impl StationaryPolicy {
    pub fn assignment(&self, state: usize) -> &BitAssignment {
        &self.0[state]
    }
}

/// Expected rounds-cost and duration of a policy under the chain's
/// stationary distribution, plus the proxy wall clock.
pub fn proxy_time(
    chain: &FiniteChain,
    policy: &StationaryPolicy,
    cm: &CostModel,
) -> (ProxyPoint, f64) {
    assert_eq!(policy.0.len(), chain.len());
    let mut rounds_cost = 0.0;
    let mut duration = 0.0;
    for (idx, weight) in chain.stationary().iter().enumerate() {
        let bits = policy.assignment(idx);
        rounds_cost += weight * rounds_cost_norm(&cm.vmap, bits);
        duration += weight * round_duration(cm, bits, chain.state(idx));
    }
    let point = ProxyPoint {
        rounds_cost,
        duration,
    };
    let t_hat = point.proxy_time();
    (point, t_hat)
}

/// The per-state scalarized policy for weight `omega` on duration.
fn scalarized_policy(chain: &FiniteChain, cm: &CostModel, omega: f64) -> StationaryPolicy {
    StationaryPolicy(
        (0..chain.len())
            .map(|idx| weighted_argmin(cm, chain.state(idx), omega, 1.0 - omega))
            .collect(),
    )
}

/// Minimize the proxy wall clock over state-dependent stationary policies
/// by sweeping a scalarization-weight grid: the optimum is an extreme point
/// of the achievable (rounds-cost, duration) set, so it is traced by some
/// weight ray, and on the discrete bit lattice only finitely many policies
/// occur along the ray.
pub fn optimal_stationary_policy(
    chain: &FiniteChain,
    cm: &CostModel,
    grid: usize,
) -> (StationaryPolicy, ProxyPoint) {
    assert!(grid >= 2);
    let mut best: Option<(f64, StationaryPolicy, ProxyPoint)> = None;
    for k in 0..grid {
        let omega = (k as f64 + 0.5) / grid as f64;
        let policy = scalarized_policy(chain, cm, omega);
        let (point, t_hat) = proxy_time(chain, &policy, cm);
        if best.as_ref().is_none_or(|(t, _, _)| t_hat < *t) {
            best = Some((t_hat, policy, point));
        }
    }
    let (_, policy, point) = best.unwrap();
    (policy, point)
}

/// The achievable frontier traced by the scalarization grid, as
/// `(omega, rounds_cost, duration, proxy_time)` rows.
pub fn frontier(chain: &FiniteChain, cm: &CostModel, grid: usize) -> Vec<(f64, f64, f64, f64)> {
    assert!(grid >= 2);
    (0..grid)
        .map(|k| {
            let omega = (k as f64 + 0.5) / grid as f64;
            let policy = scalarized_policy(chain, cm, omega);
            let (point, t_hat) = proxy_time(chain, &policy, cm);
            (omega, point.rounds_cost, point.duration, t_hat)
        })
        .collect()
}

/// The fluid field's drive: expectations of the per-state argmin with the
/// frank-wolfe weights read off the current point (`w_dur = x_r`,
/// `w_rounds = x_d`).
fn fluid_drive(chain: &FiniteChain, cm: &CostModel, x: &ProxyPoint) -> ProxyPoint {
    let policy = StationaryPolicy(
        (0..chain.len())
            .map(|idx| weighted_argmin(cm, chain.state(idx), x.rounds_cost, x.duration))
            .collect(),
    );
    proxy_time(chain, &policy, cm).0
}

/// Explicit-Euler integration of the fluid process `dx/ds = v(x) - x`,
/// recording the state after every step (the first element is `x0`).
pub fn ffw_trajectory(
    chain: &FiniteChain,
    cm: &CostModel,
    x0: ProxyPoint,
    step: f64,
    horizon: f64,
) -> Vec<ProxyPoint> {
    assert!(step > 0.0);
    assert!(x0.rounds_cost > 0.0 && x0.duration > 0.0);
    let steps = (horizon / step).floor() as usize;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(x0);
    let mut x = x0;
    for _ in 0..steps {
        let v = fluid_drive(chain, cm, &x);
        x = ProxyPoint {
            rounds_cost: x.rounds_cost + step * (v.rounds_cost - x.rounds_cost),
            duration: x.duration + step * (v.duration - x.duration),
        };
        trajectory.push(x);
    }
    trajectory
}

/// Outcome of the constant-step convergence check.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceStats {
    /// Fraction of trials whose estimates land within `rho` (relative, per
    /// coordinate) of the oracle point.
    pub fraction_within: f64,
    /// Largest relative deviation over all trials.
    pub max_rel_deviation: f64,
    pub oracle: ProxyPoint,
}

/// Run the adaptive policy with constant step size `beta` on sampled chain
/// paths and measure how often its running estimates land within `rho` of
/// the oracle proxy point after `rounds` rounds.
#[allow(clippy::too_many_arguments)]
pub fn nacfl_convergence_check(
    chain: &FiniteChain,
    cm: &CostModel,
    beta: f64,
    rounds: usize,
    trials: usize,
    rho: f64,
    grid: usize,
    seed: u64,
) -> ConvergenceStats {
    let (_, oracle) = optimal_stationary_policy(chain, cm, grid);
    let deviations: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = substream(seed, &[DOMAIN_ORACLE, trial as u64]);
            // Any positive initialization works; start from the all-3-bit
            // stationary pair so scales are sane.
            let probe = StationaryPolicy(vec![BitAssignment::uniform(cm.m, 3); chain.len()]);
            let (init, _) = proxy_time(chain, &probe, cm);
            let mut est = NacflEstimates::new(
                init.rounds_cost,
                init.duration,
                1.0,
                BetaMode::Constant(beta),
            )
            .expect("positive initialization");
            let mut state = chain.sample_stationary(&mut rng);
            for _ in 0..rounds {
                est.decide(cm, chain.state(state));
                state = chain.sample_next(state, &mut rng);
            }
            let point = ProxyPoint {
                rounds_cost: est.r_hat(),
                duration: est.d_hat(),
            };
            point.max_rel_distance(&oracle)
        })
        .collect();
    let within = deviations.iter().filter(|&&d| d <= rho).count();
    ConvergenceStats {
        fraction_within: within as f64 / trials as f64,
        max_rel_deviation: deviations.iter().copied().fold(0.0, f64::max),
        oracle,
    }
}
