//! EM inference of membership and block tensors under the temporal prior.
//!
//! One iteration:
//!
//! 1. neighbour averages `<theta>`, `<p>` from the current parameters,
//! 2. E-step: responsibilities accumulated into per-cell sums in one pass over the data,
//!    which also yields the log-likelihood of the current parameters,
//! 3. objective = log-likelihood + log-prior, appended to the trace,
//! 4. M-step: `(sum omega + beta <x>) / (N + beta)` for every row.
//!
//! Rows of epochs with no weighted neighbour are updated with `beta = 0`.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::model::{
    check_compatible, floor_and_normalize, BlockTensor, Dataset, MembershipTensor,
};
use crate::prior::{log_prior_term, NeighbourAverage, NeighbourWeights, PriorConfig};

/// How the block-interaction tensor is treated during a fit.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockMode {
    /// One slice per epoch, coupled through `beta_p`.
    Dynamic,
    /// A single slice shared by every epoch.
    Static,
    /// Given and never updated.
    Fixed(BlockTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub clusters: usize,
    pub max_iterations: usize,
    /// Stop when `|L_n - L_{n-1}| / |L_{n-1}|` drops below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub block_mode: BlockMode,
    pub prior: PriorConfig,
}

impl FitConfig {
    pub fn new(clusters: usize) -> Self {
        FitConfig {
            clusters,
            max_iterations: 1000,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
            block_mode: BlockMode::Dynamic,
            prior: PriorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::InvalidConfig("K must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if let BlockMode::Fixed(p) = &self.block_mode {
            if p.clusters() != self.clusters {
                return Err(Error::InvalidConfig(format!(
                    "fixed block tensor has {} clusters, config asks for {}",
                    p.clusters(),
                    self.clusters
                )));
            }
        }
        self.prior.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub theta: MembershipTensor,
    pub p: BlockTensor,
    /// Objective of the initial parameters followed by one entry per M-step.
    pub trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub best_restart_index: usize,
    pub seed: u64,
    /// Chains aborted on degenerate parameters.
    pub failed_restarts: usize,
    /// Block rows reset to uniform because no responsibility reached them.
    pub dead_cluster_resets: usize,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }
}

/// Posterior over clusters for one observation.
pub fn responsibilities(
    theta: &MembershipTensor,
    p: &BlockTensor,
    node: usize,
    label: usize,
    epoch: usize,
) -> Result<Vec<f64>> {
    let denom = crate::model::edge_probability(theta, p, node, label, epoch)?;
    if denom <= 0.0 {
        return Err(Error::DegenerateParameters {
            node,
            label,
            epoch,
        });
    }
    let slice = p.slice_for(epoch);
    Ok(theta
        .row(epoch, node)
        .iter()
        .enumerate()
        .map(|(k, th)| th * p.row(slice, k)[label] / denom)
        .collect())
}

/// Responsibility sums gathered by one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub log_likelihood: f64,
    /// `sum_{o in d(i,t)} omega(k)`, shaped like theta.
    pub theta_sums: Array3<f64>,
    /// `sum omega(k)` per block entry, shaped like p.
    pub block_sums: Array3<f64>,
}

pub fn e_step(theta: &MembershipTensor, p: &BlockTensor, data: &Dataset) -> Result<SufficientStats> {
    check_compatible(theta, p)?;
    let nodes = data.nodes();
    let clusters = theta.clusters();
    let labels = p.labels();
    let mut theta_sums = Array3::<f64>::zeros(theta.values().dim());
    let mut block_sums = Array3::<f64>::zeros(p.values().dim());
    let th = theta.values().as_slice().expect("standard layout");
    let pv = p.values().as_slice().expect("standard layout");
    let ts = theta_sums.as_slice_mut().expect("fresh array");
    let bs = block_sums.as_slice_mut().expect("fresh array");
    let (offsets, cell_labels, cell_weights) = data.cell_index();
    let mut joint = vec![0.0; clusters];
    let mut log_likelihood = 0.0;

    for t in 0..data.epochs() {
        let block_base = p.slice_for(t) * clusters * labels;
        for i in 0..nodes {
            let cell = t * nodes + i;
            let (start, end) = (offsets[cell], offsets[cell + 1]);
            if start == end {
                continue;
            }
            let row = cell * clusters;
            for c in start..end {
                let o = cell_labels[c];
                let weight = cell_weights[c];
                let mut denom = 0.0;
                for k in 0..clusters {
                    let v = th[row + k] * pv[block_base + k * labels + o];
                    joint[k] = v;
                    denom += v;
                }
                if !(denom > 0.0) {
                    return Err(Error::DegenerateParameters {
                        node: i,
                        label: o,
                        epoch: t,
                    });
                }
                log_likelihood += weight * denom.ln();
                let scale = weight / denom;
                for k in 0..clusters {
                    let w = joint[k] * scale;
                    ts[row + k] += w;
                    bs[block_base + k * labels + o] += w;
                }
            }
        }
    }

    Ok(SufficientStats {
        log_likelihood,
        theta_sums,
        block_sums,
    })
}

/// Membership update `(sum omega + beta <theta>) / (N_{i,t} + beta)`.
///
/// Rows with neither observations nor an active prior become uniform.
pub fn m_step_theta(
    data: &Dataset,
    stats: &SufficientStats,
    averages: &NeighbourAverage,
    beta: f64,
) -> MembershipTensor {
    let (epochs, nodes, clusters) = stats.theta_sums.dim();
    let mut values = Array3::<f64>::zeros((epochs, nodes, clusters));
    let out = values.as_slice_mut().expect("fresh array");
    let sums = stats.theta_sums.as_slice().expect("standard layout");
    for t in 0..epochs {
        let beta_eff = if averages.is_fallback(t) { 0.0 } else { beta };
        for i in 0..nodes {
            let start = (t * nodes + i) * clusters;
            let row = &mut out[start..start + clusters];
            let n = data.node_epoch_count(i, t) as f64;
            let denom = n + beta_eff;
            if denom == 0.0 {
                row.fill(1.0 / clusters as f64);
                continue;
            }
            let mode = averages.row(t, i);
            for k in 0..clusters {
                let prior = if beta_eff > 0.0 { beta_eff * mode[k] } else { 0.0 };
                row[k] = (sums[start + k] + prior) / denom;
            }
        }
    }
    floor_and_normalize(&mut values);
    MembershipTensor::from_normalized(values)
}

/// Block update `(sum omega + beta <p>) / (sum_o sum omega + beta)`.
///
/// Works on whatever slicing `stats.block_sums` carries: per epoch for a
/// dynamic tensor, one pooled slice for a static one. Returns the tensor and
/// the number of rows reset to uniform because they received no mass.
pub fn m_step_p(
    stats: &SufficientStats,
    averages: &NeighbourAverage,
    beta: f64,
) -> (BlockTensor, usize) {
    let (slices, clusters, labels) = stats.block_sums.dim();
    let mut values = Array3::<f64>::zeros((slices, clusters, labels));
    let out = values.as_slice_mut().expect("fresh array");
    let sums = stats.block_sums.as_slice().expect("standard layout");
    let mut dead = 0;
    for s in 0..slices {
        let beta_eff = if averages.is_fallback(s) { 0.0 } else { beta };
        for k in 0..clusters {
            let start = (s * clusters + k) * labels;
            let mass: f64 = sums[start..start + labels].iter().sum();
            let denom = mass + beta_eff;
            let row = &mut out[start..start + labels];
            if !(denom > 0.0) {
                row.fill(1.0 / labels as f64);
                dead += 1;
                continue;
            }
            let mode = averages.row(s, k);
            for o in 0..labels {
                let prior = if beta_eff > 0.0 { beta_eff * mode[o] } else { 0.0 };
                row[o] = (sums[start + o] + prior) / denom;
            }
        }
    }
    floor_and_normalize(&mut values);
    (BlockTensor::from_normalized(values), dead)
}

/// Prior machinery shared by every iteration of a chain.
struct PriorState {
    theta_weights: Option<NeighbourWeights>,
    block_weights: Option<NeighbourWeights>,
    prior: PriorConfig,
}

impl PriorState {
    fn new(data: &Dataset, config: &FitConfig) -> Self {
        let prior = config.prior;
        let theta_weights =
            (prior.beta_theta > 0.0).then(|| NeighbourWeights::new(data.epoch_counts(), &prior));
        let block_weights = (prior.beta_p > 0.0 && config.block_mode == BlockMode::Dynamic)
            .then(|| NeighbourWeights::new(data.epoch_counts(), &prior));
        PriorState {
            theta_weights,
            block_weights,
            prior,
        }
    }

    fn theta_average(&self, theta: &MembershipTensor) -> NeighbourAverage {
        match &self.theta_weights {
            Some(w) => w.average(theta.view()),
            None => NeighbourAverage::inactive(theta.epochs(), theta.nodes(), theta.clusters()),
        }
    }

    fn block_average(&self, p: &BlockTensor) -> NeighbourAverage {
        match &self.block_weights {
            Some(w) => w.average(p.view()),
            None => NeighbourAverage::inactive(p.slices(), p.clusters(), p.labels()),
        }
    }
}

/// Objective of given parameters with the neighbour averages held fixed.
pub fn objective_with_averages(
    theta: &MembershipTensor,
    p: &BlockTensor,
    log_likelihood: f64,
    theta_avg: &NeighbourAverage,
    block_avg: &NeighbourAverage,
    prior: &PriorConfig,
) -> f64 {
    log_likelihood
        + log_prior_term(theta.view(), theta_avg, prior.beta_theta)
        + log_prior_term(p.view(), block_avg, prior.beta_p)
}

/// Dirichlet(1) draws for every membership row, and for every block row unless fixed.
///
/// One row is drawn per node (and per cluster) and repeated over epochs, so
/// all epochs start from the same cluster labeling.
pub fn random_init(
    data: &Dataset,
    config: &FitConfig,
    rng: &mut impl Rng,
) -> (MembershipTensor, BlockTensor) {
    let k = config.clusters;
    let mut base = Array2::<f64>::zeros((data.nodes(), k));
    base.iter_mut().for_each(|v| *v = rng.sample(Exp1));
    let theta = dirichlet_rows(base, data.epochs());
    let p = match &config.block_mode {
        BlockMode::Fixed(p) => p.clone(),
        mode => {
            let slices = if *mode == BlockMode::Static {
                1
            } else {
                data.epochs()
            };
            let mut base = Array2::<f64>::zeros((k, data.labels()));
            base.iter_mut().for_each(|v| *v = rng.sample(Exp1));
            BlockTensor::from_normalized(dirichlet_rows(base, slices))
        }
    };
    (MembershipTensor::from_normalized(theta), p)
}

/// Normalizes exponential draws into simplex rows and stacks `copies` of them.
fn dirichlet_rows(draws: Array2<f64>, copies: usize) -> Array3<f64> {
    let (r, c) = draws.dim();
    let mut out = draws
        .broadcast((copies, r, c))
        .expect("leading axis broadcast")
        .to_owned();
    floor_and_normalize(&mut out);
    out
}

fn check_data(data: &Dataset, config: &FitConfig) -> Result<()> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::DegenerateInput("cannot fit an empty dataset".into()));
    }
    if let BlockMode::Fixed(p) = &config.block_mode {
        if p.labels() != data.labels() {
            return Err(Error::ShapeMismatch(format!(
                "fixed block tensor has {} labels, dataset {}",
                p.labels(),
                data.labels()
            )));
        }
        if !p.is_static() && p.slices() != data.epochs() {
            return Err(Error::ShapeMismatch(format!(
                "fixed block tensor has {} slices for {} epochs",
                p.slices(),
                data.epochs()
            )));
        }
    }
    Ok(())
}

/// Runs `config.restarts` EM chains and keeps the one with the best final objective.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    check_data(data, config)?;
    let mut best: Option<FitReport> = None;
    let mut failed = 0;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let (theta, p) = random_init(data, config, &mut rng);
        match run_chain(data, config, theta, p) {
            Ok(mut report) => {
                report.best_restart_index = restart;
                let better = best
                    .as_ref()
                    .is_none_or(|b| report.final_objective() > b.final_objective());
                if better {
                    best = Some(report);
                }
            }
            Err(Error::DegenerateParameters { .. }) => failed += 1,
            Err(other) => return Err(other),
        }
    }
    let mut report = best.ok_or(Error::AllRestartsFailed {
        restarts: config.restarts,
    })?;
    report.failed_restarts = failed;
    Ok(report)
}

/// A single EM chain from the given starting point (`config.restarts` is ignored).
///
/// Under [`BlockMode::Fixed`] the supplied `p` is replaced by the fixed tensor.
pub fn fit_from(
    data: &Dataset,
    config: &FitConfig,
    theta: MembershipTensor,
    p: BlockTensor,
) -> Result<FitReport> {
    check_data(data, config)?;
    if theta.epochs() != data.epochs()
        || theta.nodes() != data.nodes()
        || theta.clusters() != config.clusters
    {
        return Err(Error::ShapeMismatch(
            "initial membership tensor does not match the dataset".into(),
        ));
    }
    let p = match &config.block_mode {
        BlockMode::Fixed(fixed) => fixed.clone(),
        BlockMode::Static if !p.is_static() => {
            return Err(Error::ShapeMismatch("static mode needs a single block slice".into()))
        }
        BlockMode::Dynamic if p.slices() != data.epochs() => {
            return Err(Error::ShapeMismatch("dynamic mode needs one block slice per epoch".into()))
        }
        _ => p,
    };
    if p.labels() != data.labels() {
        return Err(Error::ShapeMismatch("initial block tensor has wrong label count".into()));
    }
    run_chain(data, config, theta, p)
}

fn run_chain(
    data: &Dataset,
    config: &FitConfig,
    mut theta: MembershipTensor,
    mut p: BlockTensor,
) -> Result<FitReport> {
    let state = PriorState::new(data, config);
    let update_block = !matches!(config.block_mode, BlockMode::Fixed(_));
    let mut trace = Vec::with_capacity(config.max_iterations.min(4096) + 1);
    let mut iterations = 0;
    let mut converged = false;
    let mut dead_cluster_resets = 0;

    loop {
        let theta_avg = state.theta_average(&theta);
        let block_avg = state.block_average(&p);
        let stats = e_step(&theta, &p, data)?;
        let objective = objective_with_averages(
            &theta,
            &p,
            stats.log_likelihood,
            &theta_avg,
            &block_avg,
            &state.prior,
        );
        if !objective.is_finite() {
            // floor keeps logs finite, so this only happens on overflow
            return Err(Error::Domain(format!("objective became {objective}")));
        }
        if let Some(&previous) = trace.last() {
            let change = (objective - previous) / f64::abs(previous).max(f64::MIN_POSITIVE);
            if change.abs() < config.tol {
                converged = true;
            }
        }
        trace.push(objective);
        if converged || iterations == config.max_iterations {
            break;
        }

        theta = m_step_theta(data, &stats, &theta_avg, state.prior.beta_theta);
        if update_block {
            let (updated, dead) = m_step_p(&stats, &block_avg, state.prior.beta_p);
            p = updated;
            dead_cluster_resets += dead;
        }
        iterations += 1;
    }

    Ok(FitReport {
        theta,
        p,
        trace,
        iterations_run: iterations,
        converged,
        best_restart_index: 0,
        seed: config.seed,
        failed_restarts: 0,
        dead_cluster_resets,
    })
}
