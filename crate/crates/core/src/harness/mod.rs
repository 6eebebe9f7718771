//! The experiment driver: wires congestion, policies, the training loop,
//! and the workloads together; runs multi-seed paired comparisons; computes
//! the summary statistics; and emits CSV outputs.
//!
//! Pairing design: the congestion stream is keyed by seed only, so every
//! policy compared under one seed consumes the identical network sample
//! path, while minibatch and quantizer noise are keyed by (seed, policy).

pub mod config;
pub mod output;

use std::env;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::congestion::{ArProcess, BtdVector, FiniteChain};
use crate::error::{Error, Result};
use crate::fedcomv::{
    local_phase, FlatModel, MnistFederation, RoundLog, Schedule, StopReason, StopRule, Trainer,
    TrainingTask,
};
use crate::oracle::{
    ffw_trajectory, frontier, nacfl_convergence_check, optimal_stationary_policy, proxy_time,
    ConvergenceStats, ProxyPoint, StationaryPolicy,
};
use crate::policy::{BetaMode, NacflEstimates, Policy};
use crate::quantizer::{calibrate, VarianceMap};
use crate::rng::{substream, DOMAIN_CONGESTION, DOMAIN_DATA, DOMAIN_INIT, DOMAIN_PROBE};
use crate::roundcost::{BitAssignment, CostModel};
use crate::workload::{
    load_mnist, partition_heterogeneous, partition_homogeneous, subsample_stratified, MlpArch,
    QuadraticWorkload,
};

pub use config::{
    ChainConfig, CheckConfig, ExperimentConfig, FfwConfig, OracleConfig, PolicyConfig,
    VarianceMapConfig, WorkloadConfig,
};

/// One (policy, seed) run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub policy: String,
    pub policy_idx: usize,
    pub seed: u64,
    pub logs: Vec<RoundLog>,
    pub stop: StopReason,
    /// Simulated seconds to the stopping criterion; `None` when the round
    /// cap was exhausted first.
    pub time_to_target: Option<f64>,
}

/// Per-policy summary over converged seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub mean_s: f64,
    pub p90_s: f64,
    pub p10_s: f64,
    /// Mean over paired seeds of (this policy's time / reference time) - 1,
    /// in percent; `None` for the reference policy itself.
    pub gain_vs_reference_pct: Option<f64>,
    pub n_converged: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub runs: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
    /// Name of the gain reference policy.
    pub reference: String,
}

/// Average sample-path gain of `other` over `reference`, in percent:
/// `100 * (mean_i(other_i / reference_i) - 1)`, paired by seed.
pub fn gain(reference: &[f64], other: &[f64]) -> Result<f64> {
    if reference.len() != other.len() {
        return Err(Error::InvalidParam(format!(
            "gain needs paired samples: {} vs {}",
            reference.len(),
            other.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::InvalidParam("gain needs at least one pair".into()));
    }
    if reference.iter().chain(other).any(|&t| t <= 0.0) {
        return Err(Error::InvalidParam(
            "gain needs strictly positive times".into(),
        ));
    }
    let mean_ratio: f64 = reference
        .iter()
        .zip(other)
        .map(|(x, y)| y / x)
        .sum::<f64>()
        / reference.len() as f64;
    Ok(100.0 * (mean_ratio - 1.0))
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th order statistic.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=100.0).contains(&percentile));
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

enum Task {
    Mnist(MnistFederation),
    Quadratic(QuadraticWorkload),
}

impl Task {
    fn as_dyn(&self) -> &dyn TrainingTask {
        match self {
            Task::Mnist(t) => t,
            Task::Quadratic(t) => t,
        }
    }

    fn dim(&self) -> usize {
        self.as_dyn().dim()
    }
}

/// Resolve the MNIST directory: explicit config first, then the MNIST_DIR
/// environment variable.
fn resolve_mnist_dir(configured: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = configured {
        return Ok(dir.clone());
    }
    if let Ok(dir) = env::var("MNIST_DIR") {
        return Ok(PathBuf::from(dir));
    }
    Err(Error::Config(
        "no MNIST directory: set workload.mnist_dir or the MNIST_DIR environment variable".into(),
    ))
}

fn build_task(cfg: &ExperimentConfig) -> Result<Task> {
    match &cfg.workload {
        WorkloadConfig::Mnist {
            mnist_dir,
            subsample,
            heterogeneous,
        } => {
            let dir = resolve_mnist_dir(mnist_dir)?;
            let (train, test) = load_mnist(&dir)?;
            let mut data_rng = substream(cfg.data_seed, &[DOMAIN_DATA]);
            let train = if *subsample < 1.0 {
                subsample_stratified(&train, *subsample, &mut data_rng)
            } else {
                train
            };
            let shards = if *heterogeneous {
                partition_heterogeneous(&train, cfg.m)?
            } else {
                partition_homogeneous(&train, cfg.m, &mut data_rng)
            };
            Ok(Task::Mnist(MnistFederation {
                arch: MlpArch::mnist(),
                shards,
                train,
                test,
            }))
        }
        WorkloadConfig::Quadratic {
            dim,
            noise_std,
            spread,
        } => {
            let mut data_rng = substream(cfg.data_seed, &[DOMAIN_DATA]);
            Ok(Task::Quadratic(QuadraticWorkload::random(
                cfg.m,
                *dim,
                *spread,
                *noise_std,
                &mut data_rng,
            )))
        }
    }
}

fn build_vmap(cfg: &VarianceMapConfig, dim: usize, data_seed: u64) -> VarianceMap {
    match cfg {
        VarianceMapConfig::Analytic => VarianceMap::analytic(dim),
        VarianceMapConfig::Empirical { trials } => calibrate(dim, *trials, data_seed),
        VarianceMapConfig::WorkloadCalibrated { .. } => {
            unreachable!("workload calibration is routed through calibrate_on_task")
        }
    }
}

/// Measure the realized normalized variance of the quantizer on client
/// update vectors produced by a short uncompressed run of the task at the
/// configured schedule, averaged over rounds and clients, made monotone.
fn calibrate_on_task(
    cfg: &ExperimentConfig,
    task: &Task,
    probe_rounds: u64,
) -> VarianceMap {
    use crate::quantizer::{isotonic_nonincreasing, quantize, MAX_BITS};
    let dyn_task = task.as_dyn();
    let dim = dyn_task.dim();
    let m = dyn_task.clients();
    let mut rng = substream(cfg.data_seed, &[crate::rng::DOMAIN_CALIBRATION]);
    let mut w = initial_model(cfg, task, cfg.data_seed).w;
    let mut sums = vec![0.0f64; MAX_BITS as usize];
    let mut count = 0usize;
    for round in 1..=probe_rounds {
        let (eta, gamma, tau) = cfg.schedule.at(round, 0.0);
        let mut agg = vec![0.0; dim];
        for client in 0..m {
            let g = local_phase(dyn_task, client, &w, eta, tau, cfg.batch, &mut rng);
            let norm_sq: f64 = g.iter().map(|v| v * v).sum();
            if norm_sq > 0.0 {
                for (bi, entry) in sums.iter_mut().enumerate() {
                    let recon = quantize(&g, (bi + 1) as u8, &mut rng).reconstruct();
                    let err: f64 = recon
                        .iter()
                        .zip(&g)
                        .map(|(r, v)| (r - v) * (r - v))
                        .sum();
                    *entry += err / norm_sq;
                }
                count += 1;
            }
            for (a, v) in agg.iter_mut().zip(&g) {
                *a += v / m as f64;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&agg) {
            *wi -= eta * gamma * gi;
        }
    }
    assert!(count > 0, "calibration probe produced no nonzero updates");
    let mut table: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    isotonic_nonincreasing(&mut table);
    VarianceMap::EmpiricalCalibrated { dim, table }
}

fn schedule_tau(schedule: &Schedule) -> u32 {
    match schedule {
        Schedule::Practical { tau, .. } => *tau,
        Schedule::Theoretical { .. } => 1,
    }
}

/// Mean network state over a short probe path, for scale-aware policy
/// initialization (inert under the harmonic schedule).
fn probe_mean_c(cfg: &ExperimentConfig) -> Result<BtdVector> {
    let mut rng = substream(cfg.data_seed, &[DOMAIN_PROBE]);
    let mut process = ArProcess::from_scenario(cfg.scenario, cfg.m, cfg.burn_in, &mut rng)?;
    let rounds = 100;
    let mut mean = vec![0.0; cfg.m];
    for _ in 0..rounds {
        let c = process.step(&mut rng);
        for (acc, v) in mean.iter_mut().zip(c.as_slice()) {
            *acc += v / rounds as f64;
        }
    }
    Ok(BtdVector::new(mean))
}

fn build_policy(
    spec: &PolicyConfig,
    cm: &CostModel,
    probe: &BtdVector,
) -> Result<Policy> {
    Ok(match spec {
        PolicyConfig::Nacfl { alpha, beta } => {
            let mode = match beta {
                Some(b) => BetaMode::Constant(*b),
                None => BetaMode::Harmonic,
            };
            Policy::Nacfl(NacflEstimates::default_init(cm, probe, *alpha, mode)?)
        }
        PolicyConfig::FixedBit { b } => Policy::FixedBit(*b),
        PolicyConfig::FixedError { q_cap } => Policy::FixedError(*q_cap),
    })
}

fn initial_model(cfg: &ExperimentConfig, task: &Task, seed: u64) -> FlatModel {
    let mut rng = substream(seed, &[DOMAIN_INIT]);
    match task {
        Task::Mnist(t) => FlatModel::new(t.arch.init_weights(&mut rng)),
        Task::Quadratic(t) => {
            let spread = match &cfg.workload {
                WorkloadConfig::Quadratic { spread, .. } => *spread,
                _ => 1.0,
            };
            FlatModel::new(
                (0..t.dim())
                    .map(|_| 2.0 * spread * crate::rng::std_normal(&mut rng))
                    .collect(),
            )
        }
    }
}

/// Run the full comparison: every configured policy on every seed, with the
/// congestion path paired per seed, then summarize.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let task = build_task(cfg)?;
    let vmap = match cfg.variance_map {
        VarianceMapConfig::WorkloadCalibrated { probe_rounds } => {
            calibrate_on_task(cfg, &task, probe_rounds)
        }
        other => build_vmap(&other, task.dim(), cfg.data_seed),
    };
    let cm = CostModel::new(
        cfg.theta,
        schedule_tau(&cfg.schedule),
        vmap,
        task.dim(),
        cfg.m,
    );
    let probe = probe_mean_c(cfg)?;
    let rule = StopRule {
        accuracy_target: cfg.accuracy_target,
        grad_tol: cfg.grad_tol,
        round_cap: cfg.round_cap,
    };

    let jobs: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let mut runs = jobs
        .into_par_iter()
        .map(|(policy_idx, seed)| -> Result<SeedRun> {
            let spec = &cfg.policies[policy_idx];
            let policy = build_policy(spec, &cm, &probe)?;
            let mut congestion_rng = substream(seed, &[DOMAIN_CONGESTION]);
            let congestion =
                ArProcess::from_scenario(cfg.scenario, cfg.m, cfg.burn_in, &mut congestion_rng)?;
            let model = initial_model(cfg, &task, seed);
            let mut trainer = Trainer::new(
                task.as_dyn(),
                &cm,
                cfg.schedule,
                policy,
                congestion,
                congestion_rng,
                model,
                seed,
                policy_idx as u64,
                cfg.batch,
                cfg.eval_every,
            );
            let (logs, stop) = trainer.run_to_target(&rule);
            let time_to_target = (stop != StopReason::RoundCap)
                .then(|| logs.last().map(|l| l.cum_time_s).unwrap_or(0.0));
            Ok(SeedRun {
                policy: spec.name(),
                policy_idx,
                seed,
                logs,
                stop,
                time_to_target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.policy_idx, r.seed));

    let reference_idx = cfg
        .policies
        .iter()
        .position(|p| matches!(p, PolicyConfig::Nacfl { .. }))
        .unwrap_or(0);
    let summary = summarize(cfg, &runs, reference_idx);
    Ok(ExperimentResults {
        runs,
        summary,
        reference: cfg.policies[reference_idx].name(),
    })
}

fn summarize(cfg: &ExperimentConfig, runs: &[SeedRun], reference_idx: usize) -> Vec<SummaryRow> {
    let times_of = |policy_idx: usize, seed: u64| -> Option<f64> {
        runs.iter()
            .find(|r| r.policy_idx == policy_idx && r.seed == seed)
            .and_then(|r| r.time_to_target)
    };
    (0..cfg.policies.len())
        .map(|policy_idx| {
            let mut converged: Vec<f64> = cfg
                .seeds
                .iter()
                .filter_map(|&s| times_of(policy_idx, s))
                .collect();
            converged.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n_converged = converged.len();
            let (mean_s, p90_s, p10_s) = if converged.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    converged.iter().sum::<f64>() / n_converged as f64,
                    nearest_rank(&converged, 90.0),
                    nearest_rank(&converged, 10.0),
                )
            };
            // Gain over seeds where both this policy and the reference
            // converged, paired by seed.
            let gain_vs_reference_pct = if policy_idx == reference_idx {
                None
            } else {
                let pairs: Vec<(f64, f64)> = cfg
                    .seeds
                    .iter()
                    .filter_map(|&s| {
                        Some((times_of(reference_idx, s)?, times_of(policy_idx, s)?))
                    })
                    .collect();
                if pairs.is_empty() {
                    None
                } else {
                    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                    gain(&x, &y).ok()
                }
            };
            SummaryRow {
                policy: cfg.policies[policy_idx].name(),
                mean_s,
                p90_s,
                p10_s,
                gain_vs_reference_pct,
                n_converged,
            }
        })
        .collect()
}

/// Everything the oracle runner produces.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub chain_states: usize,
    pub optimal_policy: StationaryPolicy,
    pub optimal_point: ProxyPoint,
    pub optimal_proxy_time: f64,
    pub frontier: Vec<(f64, f64, f64, f64)>,
    /// Final fluid-trajectory point and its relative distance to the
    /// optimum, when integration was requested.
    pub ffw_end: Option<(ProxyPoint, f64)>,
    pub check: Option<ConvergenceStats>,
}

fn build_chain(cfg: &OracleConfig) -> Result<FiniteChain> {
    match &cfg.chain {
        ChainConfig::Explicit { states, transition } => {
            let states: Vec<BtdVector> = states
                .iter()
                .map(|raw| {
                    if raw.len() != cfg.m {
                        return Err(Error::Config(format!(
                            "chain state has {} coordinates, expected m = {}",
                            raw.len(),
                            cfg.m
                        )));
                    }
                    Ok(BtdVector::new(raw.clone()))
                })
                .collect::<Result<_>>()?;
            let n = states.len();
            let mut matrix = nalgebra::DMatrix::zeros(n, n);
            if transition.len() != n {
                return Err(Error::Config("transition row count != state count".into()));
            }
            for (i, row) in transition.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::Config(format!("transition row {i} has bad length")));
                }
                for (j, &p) in row.iter().enumerate() {
                    matrix[(i, j)] = p;
                }
            }
            FiniteChain::new(states, matrix)
        }
        ChainConfig::Discretized {
            scenario,
            n_states,
            horizon,
            seed,
        } => {
            let params = scenario.params(cfg.m)?;
            let mut rng = substream(*seed, &[DOMAIN_DATA]);
            crate::congestion::discretize(&params, *n_states, *horizon, &mut rng)
        }
    }
}

/// Run the stationary-policy oracle: grid optimum, frontier, optional fluid
/// integration and constant-step convergence check.
pub fn run_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    let chain = build_chain(cfg)?;
    let vmap = build_vmap(&cfg.variance_map, cfg.d_model, 0);
    let cm = CostModel::new(cfg.theta, cfg.tau, vmap, cfg.d_model, cfg.m);
    let (optimal_policy, optimal_point) = optimal_stationary_policy(&chain, &cm, cfg.grid);
    let frontier_rows = frontier(&chain, &cm, cfg.grid.min(2_000));
    let ffw_end = cfg.ffw.map(|ffw| {
        let x0 = match ffw.x0 {
            Some((rounds_cost, duration)) => ProxyPoint {
                rounds_cost,
                duration,
            },
            None => {
                let probe =
                    StationaryPolicy(vec![BitAssignment::uniform(cfg.m, 3); chain.len()]);
                proxy_time(&chain, &probe, &cm).0
            }
        };
        let trajectory = ffw_trajectory(&chain, &cm, x0, ffw.step, ffw.horizon);
        let last = *trajectory.last().unwrap();
        (last, last.max_rel_distance(&optimal_point))
    });
    let check = cfg.check.map(|check| {
        nacfl_convergence_check(
            &chain,
            &cm,
            check.beta,
            check.rounds,
            check.trials,
            check.rho,
            cfg.grid,
            check.seed,
        )
    });
    Ok(OracleReport {
        chain_states: chain.len(),
        optimal_policy,
        optimal_point,
        optimal_proxy_time: optimal_point.proxy_time(),
        frontier: frontier_rows,
        ffw_end,
        check,
    })
}
