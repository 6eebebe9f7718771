//! Per-round network state generation: the vector of per-client bit
//! transmission delays, modeled as the coordinate-wise exponential of a
//! first-order vector autoregressive Gaussian process, plus a finite-state
//! discretization used by the stationary-policy oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::std_normal;

/// Per-client bit transmission delay in seconds per bit, strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtdVector(Vec<f64>);

impl BtdVector {
    pub fn new(c: Vec<f64>) -> Self {
        assert!(
            c.iter().all(|v| *v > 0.0),
            "BTD entries must be strictly positive"
        );
        BtdVector(c)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parameters of the log-BTD autoregression `Z_n = A Z_{n-1} + E_n` with
/// `E_n ~ N(mu, sigma)`.
#[derive(Debug, Clone)]
pub struct ArParams {
    a_matrix: DMatrix<f64>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    /// Factor S with S Sᵀ = sigma, used for noise draws.
    noise_factor: DMatrix<f64>,
    m: usize,
}

impl ArParams {
    /// Validates symmetry and positive semidefiniteness of `sigma` and the
    /// stationarity condition (spectral radius of `a_matrix` below one).
    pub fn new(a_matrix: DMatrix<f64>, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let m = mu.len();
        if m == 0 {
            return Err(Error::InvalidParam("client count must be >= 1".into()));
        }
        if a_matrix.nrows() != m || a_matrix.ncols() != m || sigma.nrows() != m || sigma.ncols() != m
        {
            return Err(Error::InvalidParam(format!(
                "dimension mismatch: mu has {m} entries, A is {}x{}, sigma is {}x{}",
                a_matrix.nrows(),
                a_matrix.ncols(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let scale = sigma.amax().max(1.0);
        for i in 0..m {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParam("sigma must be symmetric".into()));
                }
            }
        }
        let radius = a_matrix
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0f64, f64::max);
        if radius >= 1.0 {
            return Err(Error::InvalidParam(format!(
                "spectral radius of A is {radius:.6}, must be < 1 for stationarity"
            )));
        }
        let noise_factor = psd_factor(&sigma)?;
        Ok(ArParams {
            a_matrix,
            mu,
            sigma,
            noise_factor,
            m,
        })
    }

    pub fn client_count(&self) -> usize {
        self.m
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Stationary mean of the log-BTD process, `(I - A)^{-1} mu`.
    pub fn stationary_mean(&self) -> DVector<f64> {
        let identity = DMatrix::identity(self.m, self.m);
        (identity - &self.a_matrix)
            .lu()
            .solve(&self.mu)
            .expect("I - A is invertible when the spectral radius is below one")
    }

    /// Stationary covariance `V` solving the discrete Lyapunov equation
    /// `V = A V Aᵀ + sigma`, via the Kronecker-vectorized linear system.
    pub fn stationary_covariance(&self) -> DMatrix<f64> {
        let m = self.m;
        let kron = self.a_matrix.kronecker(&self.a_matrix);
        let system = DMatrix::identity(m * m, m * m) - kron;
        let rhs = DVector::from_column_slice(self.sigma.as_slice());
        let solution = system
            .lu()
            .solve(&rhs)
            .expect("I - A (x) A is invertible when the spectral radius is below one");
        DMatrix::from_column_slice(m, m, solution.as_slice())
    }
}

/// Factor a PSD matrix as S Sᵀ: Cholesky when positive definite, otherwise a
/// symmetric eigendecomposition with negative eigenvalues clamped at zero
/// (the all-ones covariance of the perfectly correlated preset is rank one).
fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.amax() == 0.0 {
        return Ok(DMatrix::zeros(sigma.nrows(), sigma.ncols()));
    }
    if let Some(chol) = nalgebra::Cholesky::new(sigma.clone()) {
        return Ok(chol.l());
    }
    let eig = nalgebra::SymmetricEigen::new(sigma.clone());
    let max_ev = eig.eigenvalues.amax();
    let mut factor = eig.eigenvectors;
    for (col, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < -1e-9 * max_ev {
            return Err(Error::InvalidParam(format!(
                "sigma is not positive semidefinite (eigenvalue {ev:.3e})"
            )));
        }
        let root = ev.max(0.0).sqrt();
        factor.column_mut(col).scale_mut(root);
    }
    Ok(factor)
}

/// The four network-congestion presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// `A = 0`, `mu = 1`, `sigma = sigma2 * I`: i.i.d. across clients and time.
    HomogeneousIid { sigma2: f64 },
    /// `A = 0`, low drift for the first half of clients, high for the rest.
    HeterogeneousIid,
    /// `A = (a/m) * ones`, all-ones covariance: every client sees the same
    /// positively time-correlated delay.
    PerfectlyCorrelated { a: f64 },
    /// `A = (a/m) * ones`, unit variances with 1/2 cross-covariances.
    PartiallyCorrelated { a: f64 },
}

impl Scenario {
    /// Build the AR parameters for `m` clients.
    pub fn params(&self, m: usize) -> Result<ArParams> {
        if m == 0 {
            return Err(Error::InvalidParam("client count must be >= 1".into()));
        }
        let zeros = DMatrix::zeros(m, m);
        match *self {
            Scenario::HomogeneousIid { sigma2 } => {
                if sigma2 <= 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "sigma2 must be positive, got {sigma2}"
                    )));
                }
                ArParams::new(
                    zeros,
                    DVector::from_element(m, 1.0),
                    DMatrix::identity(m, m) * sigma2,
                )
            }
            Scenario::HeterogeneousIid => {
                // First ceil(m/2) clients get drift 0 (low delay), the rest 2.
                let low = m.div_ceil(2);
                let mu = DVector::from_fn(m, |i, _| if i < low { 0.0 } else { 2.0 });
                ArParams::new(zeros, mu, DMatrix::identity(m, m))
            }
            Scenario::PerfectlyCorrelated { a } => {
                check_coupling(a)?;
                ArParams::new(
                    DMatrix::from_element(m, m, a / m as f64),
                    DVector::zeros(m),
                    DMatrix::from_element(m, m, 1.0),
                )
            }
            Scenario::PartiallyCorrelated { a } => {
                check_coupling(a)?;
                let sigma = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.5 });
                ArParams::new(
                    DMatrix::from_element(m, m, a / m as f64),
                    DVector::zeros(m),
                    sigma,
                )
            }
        }
    }
}

fn check_coupling(a: f64) -> Result<()> {
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::InvalidParam(format!(
            "coupling a must lie in (0, 1), got {a}"
        )));
    }
    Ok(())
}

/// The evolving log-BTD state; `Z_0 = 0`.
#[derive(Debug, Clone)]
pub struct ArProcess {
    params: ArParams,
    z: DVector<f64>,
    round: u64,
}

impl ArProcess {
    pub fn new(params: ArParams) -> Self {
        let z = DVector::zeros(params.m);
        ArProcess {
            params,
            z,
            round: 0,
        }
    }

    /// Build from a scenario preset, discarding `burn_in` initial rounds.
    pub fn from_scenario<R: Rng + ?Sized>(
        scenario: Scenario,
        m: usize,
        burn_in: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut process = ArProcess::new(scenario.params(m)?);
        for _ in 0..burn_in {
            process.step(rng);
        }
        Ok(process)
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn log_state(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn params(&self) -> &ArParams {
        &self.params
    }

    /// Advance one round and return the BTD vector `exp(Z)`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> BtdVector {
        let m = self.params.m;
        let xi = DVector::from_fn(m, |_, _| std_normal(rng));
        let noise = &self.params.mu + &self.params.noise_factor * xi;
        self.z = &self.params.a_matrix * &self.z + noise;
        self.round += 1;
        BtdVector::new(self.z.iter().map(|&v| v.exp()).collect())
    }
}

/// Asymptotic variance of a scalar unit-noise AR(1) with coefficient `a`:
/// `lim E[(Z_1 + ... + Z_n)^2] / n = 1 / (1 - a)^2`.
pub fn asymptotic_variance(a: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidParam(format!(
            "AR coefficient must lie in [0, 1), got {a}"
        )));
    }
    Ok(1.0 / ((1.0 - a) * (1.0 - a)))
}

/// Batch-means estimate of the asymptotic variance of the first log-BTD
/// coordinate, centered at the empirical mean.
pub fn estimate_asymptotic_variance<R: Rng + ?Sized>(
    params: &ArParams,
    rounds: usize,
    rng: &mut R,
) -> f64 {
    assert!(rounds >= 10_000, "estimator needs at least 1e4 rounds");
    let mut process = ArProcess::new(params.clone());
    let mut z0 = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        process.step(rng);
        z0.push(process.z[0]);
    }
    let mean = z0.iter().sum::<f64>() / rounds as f64;
    let batch = (rounds as f64).sqrt() as usize;
    let batches = rounds / batch;
    let mut acc = 0.0;
    for k in 0..batches {
        let sum: f64 = z0[k * batch..(k + 1) * batch]
            .iter()
            .map(|z| z - mean)
            .sum();
        acc += sum * sum;
    }
    acc / (batches as f64 * batch as f64)
}

/// A finite-state Markov model of the BTD process: representative states,
/// row-stochastic transition matrix, and its stationary distribution.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    states: Vec<BtdVector>,
    transition: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl FiniteChain {
    /// Validates row-stochasticity and irreducibility/aperiodicity (some
    /// power of the transition matrix is strictly positive) and computes the
    /// stationary vector by power iteration.
    pub fn new(states: Vec<BtdVector>, transition: DMatrix<f64>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::InvalidParam("chain needs at least one state".into()));
        }
        if transition.nrows() != n || transition.ncols() != n {
            return Err(Error::InvalidParam(format!(
                "transition matrix is {}x{}, expected {n}x{n}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        for i in 0..n {
            let row_sum: f64 = transition.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParam(format!(
                    "transition row {i} sums to {row_sum}, expected 1"
                )));
            }
            if transition.row(i).iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidParam(format!(
                    "transition row {i} has a negative entry"
                )));
            }
        }
        if !some_power_is_positive(&transition) {
            return Err(Error::InvalidParam(
                "transition matrix is not irreducible and aperiodic".into(),
            ));
        }
        let stationary = stationary_distribution(&transition);
        Ok(FiniteChain {
            states,
            transition,
            stationary,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[BtdVector] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &BtdVector {
        &self.states[idx]
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Draw a state index from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.stationary, rng)
    }

    /// Draw the next state index given the current one.
    pub fn sample_next<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let row: Vec<f64> = self.transition.row(from).iter().copied().collect();
        sample_index(&row, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn some_power_is_positive(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let mut power = p.clone();
    // A primitive n-state matrix has a strictly positive power by exponent
    // n^2 - 2n + 2; doubling reaches it quickly.
    for _ in 0..(2 * n.max(2)) {
        if power.iter().all(|&v| v > 0.0) {
            return true;
        }
        power = &power * &power;
    }
    false
}

fn stationary_distribution(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let next = p.transpose() * &pi;
        let diff = (&next - &pi).abs().max();
        pi = next;
        let total: f64 = pi.iter().sum();
        pi /= total;
        if diff < 1e-14 {
            break;
        }
    }
    pi.iter().copied().collect()
}

/// Simulate the AR process and cluster the samples into a finite chain via
/// per-coordinate quantile bins on log-BTD, using the joint bin index as the
/// state. Empty joint bins are dropped. The first tenth of the horizon is
/// discarded as warmup so bin edges reflect the stationary law.
pub fn discretize<R: Rng + ?Sized>(
    params: &ArParams,
    n_states: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<FiniteChain> {
    if n_states < 1 {
        return Err(Error::InvalidParam("n_states must be >= 1".into()));
    }
    let m = params.m;
    let bins_per_coord = (n_states as f64).powf(1.0 / m as f64).round() as usize;
    if bins_per_coord.pow(m as u32) != n_states {
        return Err(Error::InvalidParam(format!(
            "n_states = {n_states} is not a perfect {m}-th power"
        )));
    }
    let warmup = horizon / 10;
    let mut process = ArProcess::new(params.clone());
    for _ in 0..warmup {
        process.step(rng);
    }
    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        process.step(rng);
        samples.push(process.z.clone());
    }

    // Quantile edges per coordinate.
    let mut edges: Vec<Vec<f64>> = Vec::with_capacity(m);
    for coord in 0..m {
        let mut values: Vec<f64> = samples.iter().map(|z| z[coord]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let coord_edges: Vec<f64> = (1..bins_per_coord)
            .map(|j| values[j * values.len() / bins_per_coord])
            .collect();
        edges.push(coord_edges);
    }
    let joint_bin = |z: &DVector<f64>| -> usize {
        let mut idx = 0usize;
        for coord in 0..m {
            let bin = edges[coord].partition_point(|&e| e <= z[coord]);
            idx = idx * bins_per_coord + bin;
        }
        idx
    };

    let raw_indices: Vec<usize> = samples.iter().map(joint_bin).collect();
    // Keep only occupied bins, preserving bin order.
    let mut occupied: Vec<usize> = raw_indices.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let remap: std::collections::HashMap<usize, usize> = occupied
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    let indices: Vec<usize> = raw_indices.iter().map(|i| remap[i]).collect();
    let n = occupied.len();

    // Representative state: exp of the mean log-BTD within each bin.
    let mut mean_log = vec![DVector::zeros(m); n];
    let mut counts = vec![0usize; n];
    for (z, &idx) in samples.iter().zip(&indices) {
        mean_log[idx] += z;
        counts[idx] += 1;
    }
    let states: Vec<BtdVector> = mean_log
        .into_iter()
        .zip(&counts)
        .map(|(sum, &cnt)| BtdVector::new(sum.iter().map(|v| (v / cnt as f64).exp()).collect()))
        .collect();

    // Empirical transition matrix.
    let mut transition = DMatrix::zeros(n, n);
    for pair in indices.windows(2) {
        transition[(pair[0], pair[1])] += 1.0;
    }
    for i in 0..n {
        let row_sum: f64 = transition.row(i).iter().sum();
        if row_sum == 0.0 {
            return Err(Error::ReducibleChain { state: i });
        }
        for j in 0..n {
            transition[(i, j)] /= row_sum;
        }
    }
    FiniteChain::new(states, transition).map_err(|e| match e {
        Error::InvalidParam(msg) if msg.contains("irreducible") => Error::ReducibleChain {
            state: usize::MAX,
        },
        other => other,
    })
}
