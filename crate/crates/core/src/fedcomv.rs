//! The federated training loop: per-round local SGD at each client,
//! stochastic compression of the accumulated local update, server-side
//! aggregation and global step, with per-round wall-clock accounting.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::congestion::ArProcess;
use crate::policy::Policy;
use crate::quantizer::{quantize, QuantizedVector};
use crate::rng::{substream, DOMAIN_TRAINING};
use crate::roundcost::{BitAssignment, CostModel};
use crate::workload::{DataShard, Dataset, MlpArch, QuadraticWorkload};

/// A flat model weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel {
    pub w: Vec<f64>,
}

impl FlatModel {
    pub fn new(w: Vec<f64>) -> Self {
        debug_assert!(w.iter().all(|v| v.is_finite()));
        FlatModel { w }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// Stopping-rule metric reported by a task after each round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    TestAccuracy(f64),
    GradNormSq(f64),
}

/// A learning problem the federation trains on.
pub trait TrainingTask: Sync {
    fn dim(&self) -> usize;
    fn clients(&self) -> usize;
    /// One unbiased stochastic gradient for `client` at `w`.
    fn client_gradient(
        &self,
        client: usize,
        w: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64>;
    fn train_loss(&self, w: &[f64]) -> f64;
    fn progress(&self, w: &[f64]) -> Progress;
}

/// MNIST split across clients with a test set for the stopping rule.
pub struct MnistFederation {
    pub arch: MlpArch,
    pub shards: Vec<DataShard>,
    pub train: Dataset,
    pub test: Dataset,
}

impl TrainingTask for MnistFederation {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn clients(&self) -> usize {
        self.shards.len()
    }

    fn client_gradient(
        &self,
        client: usize,
        w: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let shard = &self.shards[client];
        let n = shard.len();
        let (x, labels): (DMatrix<f64>, Vec<u8>) = if batch >= n {
            (shard.inputs.clone(), shard.labels.clone())
        } else {
            let picks = sample(rng, n, batch);
            let x = DMatrix::from_fn(shard.inputs.nrows(), batch, |r, c| {
                shard.inputs[(r, picks.index(c))]
            });
            let labels = picks.iter().map(|i| shard.labels[i]).collect();
            (x, labels)
        };
        self.arch.loss_and_gradient(w, &x, &labels).1
    }

    fn train_loss(&self, w: &[f64]) -> f64 {
        self.arch.loss(w, &self.train)
    }

    fn progress(&self, w: &[f64]) -> Progress {
        Progress::TestAccuracy(self.arch.accuracy(w, &self.test))
    }
}

impl TrainingTask for QuadraticWorkload {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn clients(&self) -> usize {
        self.clients()
    }

    fn client_gradient(
        &self,
        client: usize,
        w: &[f64],
        _batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        self.stochastic_gradient(client, w, rng)
    }

    fn train_loss(&self, w: &[f64]) -> f64 {
        self.loss(w)
    }

    fn progress(&self, w: &[f64]) -> Progress {
        Progress::GradNormSq(self.grad_norm_sq(w))
    }
}

/// Learning-rate and local-step schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Schedule {
    /// Step decay: `eta = eta0 * decay^floor((n-1)/decay_every)` with fixed
    /// aggregation rate and local steps.
    Practical {
        eta0: f64,
        decay: f64,
        decay_every: u64,
        gamma: f64,
        tau: u32,
    },
    /// The `eta ~ 1/n`, `gamma ~ 1/sqrt(q+1)`, `tau ~ n` schedule from the
    /// convergence analysis.
    Theoretical { c_eta: f64, c_gamma: f64, l_est: f64 },
}

impl Schedule {
    /// Rates for 1-based round `n`; `q_bar` is this round's average
    /// normalized variance.
    pub fn at(&self, n: u64, q_bar: f64) -> (f64, f64, u32) {
        assert!(n >= 1);
        match *self {
            Schedule::Practical {
                eta0,
                decay,
                decay_every,
                gamma,
                tau,
            } => (eta0 * decay.powi(((n - 1) / decay_every) as i32), gamma, tau),
            Schedule::Theoretical {
                c_eta,
                c_gamma,
                l_est,
            } => theoretical_schedule(n, c_eta, c_gamma, l_est, q_bar),
        }
    }
}

/// The analysis-driven schedule: `eta_n = c_eta/(L n)`,
/// `gamma_n = c_gamma/sqrt(q_bar+1)`, `tau_n = max(1, round(n/(2 c_eta)))`.
pub fn theoretical_schedule(
    n: u64,
    c_eta: f64,
    c_gamma: f64,
    l_est: f64,
    q_bar: f64,
) -> (f64, f64, u32) {
    assert!(n >= 1);
    assert!(c_eta > 0.0 && c_gamma > 0.0 && l_est > 0.0);
    let eta = c_eta / (l_est * n as f64);
    let gamma = c_gamma / (q_bar + 1.0).sqrt();
    let tau = (n as f64 / (2.0 * c_eta)).round().max(1.0) as u32;
    (eta, gamma, tau)
}

/// The constants the convergence analysis pairs with the schedule.
pub fn theoretical_constants(
    l: f64,
    delta_f: f64,
    m: usize,
    sigma: f64,
    q_max: f64,
) -> (f64, f64) {
    let ratio = q_max / m as f64 + 1.0;
    let c_eta = 2.0 * (l * delta_f * (m as f64).sqrt() * ratio / sigma).powi(2);
    let c_gamma = 1.0 / (2.0 * ratio);
    (c_eta, c_gamma)
}

/// One round's record.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: u64,
    pub duration_s: f64,
    pub cum_time_s: f64,
    pub bits: BitAssignment,
    pub q_bar: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

impl PartialEq for RoundLog {
    // Bitwise float identity so NaN metric slots compare equal; this is the
    // determinism contract for logs.
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.duration_s.to_bits() == other.duration_s.to_bits()
            && self.cum_time_s.to_bits() == other.cum_time_s.to_bits()
            && self.bits == other.bits
            && self.q_bar.to_bits() == other.q_bar.to_bits()
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AccuracyTarget,
    GradientTolerance,
    RoundCap,
}

/// When to stop a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub accuracy_target: Option<f64>,
    pub grad_tol: Option<f64>,
    pub round_cap: u64,
}

/// Run the local phase for one client: `tau` SGD steps from the global
/// model, returning the sum of the stochastic gradients, which equals
/// `(w - w_local_end) / eta`.
pub fn local_phase<T: TrainingTask + ?Sized>(
    task: &T,
    client: usize,
    w0: &[f64],
    eta: f64,
    tau: u32,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert!(tau >= 1);
    assert!(eta > 0.0);
    let mut w = w0.to_vec();
    let mut total = vec![0.0; w0.len()];
    for _ in 0..tau {
        let g = task.client_gradient(client, &w, batch, rng);
        for ((acc, wi), gi) in total.iter_mut().zip(&mut w).zip(&g) {
            *acc += gi;
            *wi -= eta * gi;
        }
    }
    total
}

/// Average the reconstructed client messages.
pub fn aggregate_compressed(messages: &[QuantizedVector], dim: usize) -> Vec<f64> {
    let mut agg = vec![0.0; dim];
    let scale = 1.0 / messages.len() as f64;
    for qv in messages {
        qv.add_scaled_into(scale, &mut agg);
    }
    agg
}

/// One federated run: model, policy, congestion, schedule, and clock.
pub struct Trainer<'a, T: TrainingTask + ?Sized> {
    pub task: &'a T,
    pub cm: &'a CostModel,
    pub schedule: Schedule,
    pub policy: Policy,
    pub congestion: ArProcess,
    pub congestion_rng: ChaCha8Rng,
    pub model: FlatModel,
    pub seed: u64,
    pub policy_tag: u64,
    pub batch: usize,
    /// Evaluate the train loss every this many rounds (the stopping metric
    /// is evaluated every round regardless).
    pub eval_every: u64,
    /// Skip the quantizer and aggregate raw updates; for linearity checks.
    pub bypass_compression: bool,
    round: u64,
    cum_time: f64,
    last_train_loss: f64,
}

impl<'a, T: TrainingTask + ?Sized> Trainer<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: &'a T,
        cm: &'a CostModel,
        schedule: Schedule,
        policy: Policy,
        congestion: ArProcess,
        congestion_rng: ChaCha8Rng,
        model: FlatModel,
        seed: u64,
        policy_tag: u64,
        batch: usize,
        eval_every: u64,
    ) -> Self {
        assert_eq!(task.clients(), cm.m);
        assert_eq!(task.dim(), model.dim());
        Trainer {
            task,
            cm,
            schedule,
            policy,
            congestion,
            congestion_rng,
            model,
            seed,
            policy_tag,
            batch,
            eval_every: eval_every.max(1),
            bypass_compression: false,
            round: 0,
            cum_time: 0.0,
            last_train_loss: f64::NAN,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn cum_time(&self) -> f64 {
        self.cum_time
    }

    /// Execute one round: observe the network, pick compression, run the
    /// clients, aggregate, step the global model, and account the clock.
    pub fn run_round(&mut self) -> RoundLog {
        let n = self.round + 1;
        let c = self.congestion.step(&mut self.congestion_rng);
        let decision = self.policy.decide(self.cm, &c);
        let (eta, gamma, tau) = self.schedule.at(n, decision.q_bar);

        let m = self.task.clients();
        let dim = self.task.dim();
        let w = &self.model.w;
        let agg: Vec<f64> = if self.bypass_compression {
            let updates: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut rng = client_stream(self.seed, self.policy_tag, n, j);
                    local_phase(self.task, j, w, eta, tau, self.batch, &mut rng)
                })
                .collect();
            let mut agg = vec![0.0; dim];
            for update in &updates {
                for (a, u) in agg.iter_mut().zip(update) {
                    *a += u / m as f64;
                }
            }
            agg
        } else {
            let messages: Vec<QuantizedVector> = (0..m)
                .into_par_iter()
                .map(|j| {
                    let mut rng = client_stream(self.seed, self.policy_tag, n, j);
                    let update = local_phase(self.task, j, w, eta, tau, self.batch, &mut rng);
                    quantize(&update, decision.bits.bits()[j], &mut rng)
                })
                .collect();
            aggregate_compressed(&messages, dim)
        };

        for (wi, gi) in self.model.w.iter_mut().zip(&agg) {
            *wi -= eta * gamma * gi;
        }

        self.round = n;
        self.cum_time += decision.predicted_duration;
        if (n - 1) % self.eval_every == 0 {
            self.last_train_loss = self.task.train_loss(&self.model.w);
        }
        let test_acc = match self.task.progress(&self.model.w) {
            Progress::TestAccuracy(acc) => acc,
            Progress::GradNormSq(_) => f64::NAN,
        };
        RoundLog {
            round: n,
            duration_s: decision.predicted_duration,
            cum_time_s: self.cum_time,
            bits: decision.bits,
            q_bar: decision.q_bar,
            train_loss: self.last_train_loss,
            test_acc,
        }
    }

    /// Iterate rounds until the stopping rule fires.
    pub fn run_to_target(&mut self, rule: &StopRule) -> (Vec<RoundLog>, StopReason) {
        assert!(rule.round_cap >= 1);
        let mut logs = Vec::new();
        loop {
            let log = self.run_round();
            let progress = self.task.progress(&self.model.w);
            logs.push(log);
            match progress {
                Progress::TestAccuracy(acc) => {
                    if let Some(target) = rule.accuracy_target {
                        if acc >= target {
                            return (logs, StopReason::AccuracyTarget);
                        }
                    }
                }
                Progress::GradNormSq(g) => {
                    if let Some(tol) = rule.grad_tol {
                        if g <= tol {
                            return (logs, StopReason::GradientTolerance);
                        }
                    }
                }
            }
            if self.round >= rule.round_cap {
                return (logs, StopReason::RoundCap);
            }
        }
    }
}

/// The per-client stream for round `n`; parallel and serial client
/// execution consume identical randomness.
fn client_stream(seed: u64, policy_tag: u64, round: u64, client: usize) -> ChaCha8Rng {
    substream(seed, &[DOMAIN_TRAINING, policy_tag, round, client as u64])
}
