//! Ground-truth generators for controlled experiments.
//!
//! Memberships follow either phase-shifted raised sinusoids or random
//! piecewise-linear paths on the simplex; the block matrix is the cyclic
//! 3×3 matrix parameterised by the leakage `s`.

use std::f64::consts::PI;

use ndarray::{array, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockTensor, Dataset, MembershipTensor, Observation};

/// Cyclic block matrix: cluster `k` emits label `k` with `1 - s` and label `k + 1` with `s`.
pub fn block_matrix(s: f64) -> Result<BlockTensor> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("s must lie in [0, 1], got {s}")));
    }
    BlockTensor::new(array![[
        [1.0 - s, s, 0.0],
        [0.0, 1.0 - s, s],
        [s, 0.0, 1.0 - s]
    ]])
}

/// `-(1/K) sum_k sum_o p_k(o) ln p_k(o)`, averaged over slices.
pub fn mean_entropy(p: &BlockTensor) -> f64 {
    let rows = (p.slices() * p.clusters()) as f64;
    let total: f64 = p
        .values()
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| -v * v.ln())
        .sum();
    total / rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Sinusoidal,
    BrokenLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub epochs: usize,
    pub items: usize,
    pub clusters: usize,
    pub seed: u64,
}

/// Range of full periods a sinusoidal item goes through over the run.
const CYCLES: (f64, f64) = (1.0, 3.0);
/// Range of interior breakpoints of a broken-line item.
const BREAKPOINTS: (usize, usize) = (2, 5);

impl PatternSpec {
    pub fn new(kind: PatternKind, epochs: usize, items: usize, clusters: usize, seed: u64) -> Self {
        PatternSpec {
            kind,
            epochs,
            items,
            clusters,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.items == 0 || self.clusters == 0 {
            return Err(Error::InvalidConfig(
                "pattern needs at least one epoch, item and cluster".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on `|theta(t+1) - theta(t)|` for any entry.
    pub fn max_step(&self) -> f64 {
        if self.epochs < 2 {
            return 0.0;
        }
        let span = (self.epochs - 1) as f64;
        match self.kind {
            PatternKind::Sinusoidal => {
                // d/dt of (1 + sin(w t + phi)) / K is at most w / K
                2.0 * PI * CYCLES.1 / (span * self.clusters as f64)
            }
            PatternKind::BrokenLine => {
                let knots = broken_line_knots(self.epochs, BREAKPOINTS.1);
                let shortest = (span / (knots + 1) as f64) / 2.0;
                1.0 / shortest.floor().max(1.0)
            }
        }
    }
}

fn broken_line_knots(epochs: usize, wanted: usize) -> usize {
    // keep each segment at least two epochs long
    wanted.min(epochs.saturating_sub(1) / 4)
}

fn item_rng(seed: u64, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item as u64);
    rng
}

fn simplex_point(rng: &mut impl Rng, width: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..width).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Membership trajectories for every item; each item draws its own coefficients
/// from a sub-stream of `spec.seed`.
pub fn generate_memberships(spec: &PatternSpec) -> Result<MembershipTensor> {
    spec.validate()?;
    let (epochs, items, clusters) = (spec.epochs, spec.items, spec.clusters);
    let mut values = Array3::<f64>::zeros((epochs, items, clusters));
    for i in 0..items {
        let mut rng = item_rng(spec.seed, i);
        match spec.kind {
            PatternKind::Sinusoidal => {
                let cycles = rng.random_range(CYCLES.0..=CYCLES.1);
                let phase = rng.random_range(0.0..2.0 * PI);
                let omega = 2.0 * PI * cycles / (epochs.max(2) - 1) as f64;
                for t in 0..epochs {
                    let mut total = 0.0;
                    for k in 0..clusters {
                        let shift = 2.0 * PI * k as f64 / clusters as f64;
                        let v = 1.0 + (omega * t as f64 + phase + shift).sin();
                        values[[t, i, k]] = v;
                        total += v;
                    }
                    for k in 0..clusters {
                        // K = 1 can hit 0/0 at the trough
                        values[[t, i, k]] = if clusters == 1 { 1.0 } else { values[[t, i, k]] / total };
                    }
                }
            }
            PatternKind::BrokenLine => {
                let wanted = rng.random_range(BREAKPOINTS.0..=BREAKPOINTS.1);
                let interior = broken_line_knots(epochs, wanted);
                let span = (epochs - 1) as f64;
                let segment = span / (interior + 1) as f64;
                let mut knots = vec![0.0];
                for j in 1..=interior {
                    let jitter = rng.random_range(-0.25..=0.25) * segment;
                    knots.push(j as f64 * segment + jitter);
                }
                knots.push(span.max(1.0));
                let points: Vec<Vec<f64>> =
                    (0..knots.len()).map(|_| simplex_point(&mut rng, clusters)).collect();
                let mut seg = 0;
                for t in 0..epochs {
                    let x = t as f64;
                    while seg + 2 < knots.len() && x > knots[seg + 1] {
                        seg += 1;
                    }
                    let (a, b) = (knots[seg], knots[seg + 1]);
                    let w = ((x - a) / (b - a)).clamp(0.0, 1.0);
                    for k in 0..clusters {
                        values[[t, i, k]] = (1.0 - w) * points[seg][k] + w * points[seg + 1][k];
                    }
                }
            }
        }
    }
    MembershipTensor::new(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta: MembershipTensor,
    pub p: BlockTensor,
    pub spec: PatternSpec,
    pub s: f64,
}

impl GroundTruth {
    /// Memberships from `spec` with the cyclic block matrix; needs `spec.clusters == 3`.
    pub fn generate(spec: PatternSpec, s: f64) -> Result<Self> {
        if spec.clusters != 3 {
            return Err(Error::InvalidConfig(format!(
                "the cyclic block matrix has 3 clusters, pattern asks for {}",
                spec.clusters
            )));
        }
        Ok(GroundTruth {
            theta: generate_memberships(&spec)?,
            p: block_matrix(s)?,
            spec,
            s,
        })
    }
}

/// Number of observations to draw for each `(epoch, item)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    PerItemPerEpoch(usize),
    /// `total` observations per item spread as evenly as possible over epochs.
    PerItemTotal(usize),
    /// Explicit counts indexed `epoch * items + item`.
    Explicit(Vec<usize>),
}

impl Schedule {
    pub fn count(&self, epoch: usize, item: usize, epochs: usize, items: usize) -> usize {
        match self {
            Schedule::PerItemPerEpoch(n) => *n,
            Schedule::PerItemTotal(total) => {
                (epoch + 1) * total / epochs - epoch * total / epochs
            }
            Schedule::Explicit(counts) => counts[epoch * items + item],
        }
    }
}

/// Draws `k ~ theta_i(t)` then `o ~ p_k` for every scheduled observation.
pub fn sample_dataset(truth: &GroundTruth, schedule: &Schedule, seed: u64) -> Result<Dataset> {
    let (epochs, items) = (truth.theta.epochs(), truth.theta.nodes());
    if let Schedule::Explicit(counts) = schedule {
        if counts.len() != epochs * items {
            return Err(Error::ShapeMismatch(format!(
                "explicit schedule has {} entries for {} epochs × {} items",
                counts.len(),
                epochs,
                items
            )));
        }
    }
    let total: usize = (0..epochs)
        .flat_map(|t| (0..items).map(move |i| (t, i)))
        .map(|(t, i)| schedule.count(t, i, epochs, items))
        .sum();
    if total == 0 {
        return Err(Error::InvalidConfig("schedule draws no observation".into()));
    }

    let block_rows: Vec<WeightedIndex<f64>> = (0..truth.p.slices())
        .flat_map(|s| (0..truth.p.clusters()).map(move |k| (s, k)))
        .map(|(s, k)| WeightedIndex::new(truth.p.row(s, k)).expect("validated row"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(total);
    for t in 0..epochs {
        let slice = truth.p.slice_for(t);
        for i in 0..items {
            let n = schedule.count(t, i, epochs, items);
            if n == 0 {
                continue;
            }
            let membership = WeightedIndex::new(truth.theta.row(t, i)).expect("validated row");
            for _ in 0..n {
                let k = membership.sample(&mut rng);
                let o = block_rows[slice * truth.p.clusters() + k].sample(&mut rng);
                observations.push(Observation::new(i, o, t));
            }
        }
    }
    Dataset::new(items, truth.p.labels(), epochs, observations)
}
