//! Observations, parameter tensors and the mixture likelihood.
//!
//! Ids are dense: nodes in `[0, I)`, labels in `[0, O)`, epochs in `[0, T)`.
//! Raw keys are mapped to ids by [`crate::io::Vocabulary`].

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Dimension, Error, Result};
use crate::prior::{log_prior_term, NeighbourWeights, PriorConfig};

/// Tolerance on row sums accepted by the tensor constructors.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Lower bound applied to parameter entries after every M-step.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// One observed `(node, label, epoch)` triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation {
    pub node: usize,
    pub label: usize,
    pub epoch: usize,
}

impl Observation {
    pub fn new(node: usize, label: usize, epoch: usize) -> Self {
        Observation { node, label, epoch }
    }
}

fn check_index(dim: Dimension, index: usize, extent: usize) -> Result<()> {
    if index < extent {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { dim, index, extent })
    }
}

/// Epoch-indexed collection of observations.
///
/// Besides the raw triplets the dataset keeps a compressed index: for every
/// `(epoch, node)` cell the distinct labels seen there and their multiplicities.
/// The EM engine iterates over that index, so duplicated triplets cost one
/// multiply instead of one pass each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    nodes: usize,
    labels: usize,
    epochs: usize,
    epoch_counts: Vec<usize>,
    node_epoch_counts: Vec<usize>,
    cell_offsets: Vec<usize>,
    cell_labels: Vec<usize>,
    cell_weights: Vec<f64>,
}

impl Dataset {
    pub fn new(
        nodes: usize,
        labels: usize,
        epochs: usize,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if nodes == 0 || labels == 0 || epochs == 0 {
            return Err(Error::ShapeMismatch(format!(
                "dataset extents must be positive (I={nodes}, O={labels}, T={epochs})"
            )));
        }
        for obs in &observations {
            check_index(Dimension::Node, obs.node, nodes)?;
            check_index(Dimension::Label, obs.label, labels)?;
            check_index(Dimension::Epoch, obs.epoch, epochs)?;
        }

        let mut epoch_counts = vec![0; epochs];
        let mut node_epoch_counts = vec![0; epochs * nodes];
        let mut keys: Vec<(usize, usize)> = Vec::with_capacity(observations.len());
        for obs in &observations {
            epoch_counts[obs.epoch] += 1;
            let cell = obs.epoch * nodes + obs.node;
            node_epoch_counts[cell] += 1;
            keys.push((cell, obs.label));
        }
        keys.sort_unstable();

        let mut cell_offsets = vec![0; epochs * nodes + 1];
        let mut cell_labels = Vec::new();
        let mut cell_weights: Vec<f64> = Vec::new();
        let mut previous: Option<(usize, usize)> = None;
        for &key in &keys {
            if previous == Some(key) {
                *cell_weights.last_mut().expect("run started") += 1.0;
            } else {
                cell_labels.push(key.1);
                cell_weights.push(1.0);
                cell_offsets[key.0 + 1] += 1;
                previous = Some(key);
            }
        }
        for c in 0..epochs * nodes {
            cell_offsets[c + 1] += cell_offsets[c];
        }

        Ok(Dataset {
            observations,
            nodes,
            labels,
            epochs,
            epoch_counts,
            node_epoch_counts,
            cell_offsets,
            cell_labels,
            cell_weights,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// `N_t` for every epoch, empty epochs included.
    pub fn epoch_counts(&self) -> &[usize] {
        &self.epoch_counts
    }

    /// `N_{i,t}`, the number of observations of `node` during `epoch`.
    pub fn node_epoch_count(&self, node: usize, epoch: usize) -> usize {
        self.node_epoch_counts[epoch * self.nodes + node]
    }

    /// Distinct labels observed for `(node, epoch)` with their multiplicities.
    pub fn cell(&self, node: usize, epoch: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let c = epoch * self.nodes + node;
        let range = self.cell_offsets[c]..self.cell_offsets[c + 1];
        self.cell_labels[range.clone()]
            .iter()
            .copied()
            .zip(self.cell_weights[range].iter().copied())
    }

    /// Raw CSR view used by the EM hot loop: offsets indexed by `epoch * I + node`.
    pub(crate) fn cell_index(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.cell_offsets, &self.cell_labels, &self.cell_weights)
    }

    /// Observations at the given positions, keeping the extents.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut picked = Vec::with_capacity(indices.len());
        for &ix in indices {
            let obs = self.observations.get(ix).ok_or_else(|| {
                Error::Contract(format!(
                    "subset index {ix} beyond {} observations",
                    self.observations.len()
                ))
            })?;
            picked.push(*obs);
        }
        Dataset::new(self.nodes, self.labels, self.epochs, picked)
    }

    /// Same observations with every epoch mapped to 0.
    pub fn collapse_epochs(&self) -> Dataset {
        let observations = self
            .observations
            .iter()
            .map(|o| Observation::new(o.node, o.label, 0))
            .collect();
        Dataset::new(self.nodes, self.labels, 1, observations).expect("ids already validated")
    }

    /// The observations of one epoch as a single-epoch dataset.
    pub fn epoch_slice(&self, epoch: usize) -> Result<Dataset> {
        check_index(Dimension::Epoch, epoch, self.epochs)?;
        let observations = self
            .observations
            .iter()
            .filter(|o| o.epoch == epoch)
            .map(|o| Observation::new(o.node, o.label, 0))
            .collect();
        Dataset::new(self.nodes, self.labels, 1, observations)
    }
}

fn validate_rows(values: &Array3<f64>, what: &str) -> Result<()> {
    let width = values.shape()[2];
    if width == 0 {
        return Err(Error::InvalidTensor(format!("{what} has zero-width rows")));
    }
    let flat = values.as_slice().expect("standard layout");
    for (r, row) in flat.chunks_exact(width).enumerate() {
        if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidTensor(format!(
                "{what} row {r} has invalid entry {bad}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidTensor(format!(
                "{what} row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Floors every entry at [`PROBABILITY_FLOOR`] and rescales rows to sum to one.
pub(crate) fn floor_and_normalize(values: &mut Array3<f64>) {
    let width = values.shape()[2];
    let flat = values.as_slice_mut().expect("standard layout");
    for row in flat.chunks_exact_mut(width) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            if *v < PROBABILITY_FLOOR {
                *v = PROBABILITY_FLOOR;
            }
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-epoch membership matrices `theta[t][i][k]`, each row on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipTensor {
    values: Array3<f64>,
}

impl MembershipTensor {
    /// Takes an `epochs × nodes × clusters` array; every row must be a distribution.
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let values = values.as_standard_layout().into_owned();
        validate_rows(&values, "membership")?;
        Ok(MembershipTensor { values })
    }

    pub fn uniform(epochs: usize, nodes: usize, clusters: usize) -> Self {
        MembershipTensor {
            values: Array3::from_elem((epochs, nodes, clusters), 1.0 / clusters as f64),
        }
    }

    pub(crate) fn from_normalized(values: Array3<f64>) -> Self {
        debug_assert!(values.is_standard_layout());
        MembershipTensor { values }
    }

    pub fn epochs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn clusters(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.values
    }

    pub fn row(&self, epoch: usize, node: usize) -> &[f64] {
        let k = self.clusters();
        let start = (epoch * self.nodes() + node) * k;
        &self.values.as_slice().expect("standard layout")[start..start + k]
    }

    /// Repeats a single-epoch tensor over `epochs` epochs.
    pub fn broadcast(&self, epochs: usize) -> Result<MembershipTensor> {
        if self.epochs() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "broadcast needs a single-epoch tensor, got {} epochs",
                self.epochs()
            )));
        }
        let single = self.values.index_axis(ndarray::Axis(0), 0);
        let values = single
            .broadcast((epochs, self.nodes(), self.clusters()))
            .expect("leading axis broadcast")
            .to_owned();
        Ok(MembershipTensor { values })
    }

    /// A single-epoch tensor holding epoch `t`.
    pub fn epoch_slice(&self, epoch: usize) -> Result<MembershipTensor> {
        check_index(Dimension::Epoch, epoch, self.epochs())?;
        let values = self
            .values
            .slice(ndarray::s![epoch..epoch + 1, .., ..])
            .to_owned();
        Ok(MembershipTensor { values })
    }
}

/// Block-interaction tensor `p[s][k][o]` with either one slice per epoch or a
/// single slice shared by every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTensor {
    values: Array3<f64>,
}

impl BlockTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let values = values.as_standard_layout().into_owned();
        validate_rows(&values, "block")?;
        Ok(BlockTensor { values })
    }

    pub fn uniform(slices: usize, clusters: usize, labels: usize) -> Self {
        BlockTensor {
            values: Array3::from_elem((slices, clusters, labels), 1.0 / labels as f64),
        }
    }

    pub(crate) fn from_normalized(values: Array3<f64>) -> Self {
        debug_assert!(values.is_standard_layout());
        BlockTensor { values }
    }

    pub fn slices(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn clusters(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn labels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn is_static(&self) -> bool {
        self.slices() == 1
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.values.view()
    }

    /// Slice used at `epoch`: 0 for a static tensor.
    #[inline]
    pub fn slice_for(&self, epoch: usize) -> usize {
        if self.is_static() {
            0
        } else {
            epoch
        }
    }

    pub fn row(&self, slice: usize, cluster: usize) -> &[f64] {
        let o = self.labels();
        let start = (slice * self.clusters() + cluster) * o;
        &self.values.as_slice().expect("standard layout")[start..start + o]
    }

    pub fn epoch_slice(&self, epoch: usize) -> Result<BlockTensor> {
        let s = self.slice_for(epoch);
        check_index(Dimension::Epoch, s, self.slices())?;
        Ok(BlockTensor {
            values: self.values.slice(ndarray::s![s..s + 1, .., ..]).to_owned(),
        })
    }
}

/// Checks that `theta` and `p` can be used together.
pub fn check_compatible(theta: &MembershipTensor, p: &BlockTensor) -> Result<()> {
    if theta.clusters() != p.clusters() {
        return Err(Error::ShapeMismatch(format!(
            "membership has {} clusters, block tensor {}",
            theta.clusters(),
            p.clusters()
        )));
    }
    if !p.is_static() && p.slices() != theta.epochs() {
        return Err(Error::ShapeMismatch(format!(
            "block tensor has {} slices for {} epochs",
            p.slices(),
            theta.epochs()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn mixture(theta_row: &[f64], p: &BlockTensor, slice: usize, label: usize) -> f64 {
    let labels = p.labels();
    let block = p.values.as_slice().expect("standard layout");
    let base = slice * p.clusters() * labels + label;
    theta_row
        .iter()
        .enumerate()
        .map(|(k, th)| th * block[base + k * labels])
        .sum()
}

/// Probability that `node` is linked to `label` during `epoch`:
/// `sum_k theta[t][i][k] * p[t][k][o]`.
pub fn edge_probability(
    theta: &MembershipTensor,
    p: &BlockTensor,
    node: usize,
    label: usize,
    epoch: usize,
) -> Result<f64> {
    check_compatible(theta, p)?;
    check_index(Dimension::Node, node, theta.nodes())?;
    check_index(Dimension::Label, label, p.labels())?;
    check_index(Dimension::Epoch, epoch, theta.epochs())?;
    Ok(mixture(theta.row(epoch, node), p, p.slice_for(epoch), label))
}

/// Unnormalised log-posterior split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPosterior {
    /// Total objective; `-inf` when `zero_probability` is set.
    pub value: f64,
    pub log_likelihood: f64,
    pub log_prior: f64,
    /// First observation whose mixture probability is exactly zero.
    pub zero_probability: Option<Observation>,
}

impl LogPosterior {
    pub fn is_degenerate(&self) -> bool {
        self.zero_probability.is_some()
    }
}

/// Log-likelihood of the data plus the temporal log-prior of every row, the
/// neighbour averages being computed from `theta` and `p` themselves.
/// The Dirichlet normaliser is omitted.
pub fn log_posterior(
    theta: &MembershipTensor,
    p: &BlockTensor,
    data: &Dataset,
    prior: &PriorConfig,
) -> Result<LogPosterior> {
    check_compatible(theta, p)?;
    prior.validate()?;
    if theta.nodes() != data.nodes() || theta.epochs() != data.epochs() || p.labels() != data.labels()
    {
        return Err(Error::ShapeMismatch(format!(
            "parameters (I={}, T={}, O={}) do not match dataset (I={}, T={}, O={})",
            theta.nodes(),
            theta.epochs(),
            p.labels(),
            data.nodes(),
            data.epochs(),
            data.labels()
        )));
    }

    let mut log_likelihood = 0.0;
    let mut zero_probability = None;
    'outer: for t in 0..data.epochs() {
        let slice = p.slice_for(t);
        for i in 0..data.nodes() {
            let row = theta.row(t, i);
            for (o, weight) in data.cell(i, t) {
                let prob = mixture(row, p, slice, o);
                if prob <= 0.0 {
                    zero_probability = Some(Observation::new(i, o, t));
                    break 'outer;
                }
                log_likelihood += weight * prob.ln();
            }
        }
    }

    let mut log_prior = 0.0;
    if prior.beta_theta > 0.0 {
        let weights = NeighbourWeights::new(data.epoch_counts(), prior);
        let avg = weights.average(theta.view());
        log_prior += log_prior_term(theta.view(), &avg, prior.beta_theta);
    }
    if prior.beta_p > 0.0 && !p.is_static() {
        let weights = NeighbourWeights::new(data.epoch_counts(), prior);
        let avg = weights.average(p.view());
        log_prior += log_prior_term(p.view(), &avg, prior.beta_p);
    }

    let value = if zero_probability.is_some() {
        f64::NEG_INFINITY
    } else {
        log_likelihood + log_prior
    };
    Ok(LogPosterior {
        value,
        log_likelihood,
        log_prior,
        zero_probability,
    })
}

/// Fitted parameters together with what is needed to query epochs outside the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub theta: MembershipTensor,
    pub p: BlockTensor,
    /// Training `N_t`, used by the kernel for epochs beyond the fitted range.
    pub epoch_counts: Vec<usize>,
    pub prior: PriorConfig,
}

impl FittedModel {
    pub fn new(
        theta: MembershipTensor,
        p: BlockTensor,
        epoch_counts: Vec<usize>,
        prior: PriorConfig,
    ) -> Result<Self> {
        check_compatible(&theta, &p)?;
        prior.validate()?;
        if epoch_counts.len() != theta.epochs() {
            return Err(Error::ShapeMismatch(format!(
                "{} epoch counts for {} epochs",
                epoch_counts.len(),
                theta.epochs()
            )));
        }
        Ok(FittedModel {
            theta,
            p,
            epoch_counts,
            prior,
        })
    }

    pub fn nodes(&self) -> usize {
        self.theta.nodes()
    }

    pub fn labels(&self) -> usize {
        self.p.labels()
    }

    pub fn clusters(&self) -> usize {
        self.theta.clusters()
    }

    pub fn epochs(&self) -> usize {
        self.theta.epochs()
    }

    /// Membership row of `node` at `epoch`; epochs past the fitted range get
    /// the kernel-weighted average of the fitted epochs.
    pub fn membership_at(&self, node: usize, epoch: usize) -> Result<Vec<f64>> {
        check_index(Dimension::Node, node, self.nodes())?;
        if epoch < self.epochs() {
            return Ok(self.theta.row(epoch, node).to_vec());
        }
        let weights = NeighbourWeights::for_targets(&[epoch], &self.epoch_counts, &self.prior);
        if weights.is_fallback(0) {
            return Ok(vec![1.0 / self.clusters() as f64; self.clusters()]);
        }
        let mut row = vec![0.0; self.clusters()];
        for t in 0..self.epochs() {
            let w = weights.weight(0, t);
            if w > 0.0 {
                for (acc, x) in row.iter_mut().zip(self.theta.row(t, node)) {
                    *acc += w * x;
                }
            }
        }
        Ok(row)
    }

    /// Block matrix (`K × O`, row-major) in force at `epoch`.
    pub fn block_at(&self, epoch: usize) -> Vec<f64> {
        let width = self.clusters() * self.labels();
        let flat = self.p.values().as_slice().expect("standard layout");
        if self.p.is_static() || epoch < self.p.slices() {
            let s = self.p.slice_for(epoch);
            return flat[s * width..(s + 1) * width].to_vec();
        }
        let weights = NeighbourWeights::for_targets(&[epoch], &self.epoch_counts, &self.prior);
        if weights.is_fallback(0) {
            return vec![1.0 / self.labels() as f64; width];
        }
        let mut block = vec![0.0; width];
        for s in 0..self.p.slices() {
            let w = weights.weight(0, s);
            if w > 0.0 {
                for (acc, x) in block.iter_mut().zip(&flat[s * width..(s + 1) * width]) {
                    *acc += w * x;
                }
            }
        }
        block
    }

    /// Probability of every label for `node` at `epoch`.
    pub fn label_distribution(&self, node: usize, epoch: usize) -> Result<Vec<f64>> {
        let membership = self.membership_at(node, epoch)?;
        let block = self.block_at(epoch);
        let labels = self.labels();
        let mut out = vec![0.0; labels];
        for (k, th) in membership.iter().enumerate() {
            for (o, acc) in out.iter_mut().enumerate() {
                *acc += th * block[k * labels + o];
            }
        }
        Ok(out)
    }
}
