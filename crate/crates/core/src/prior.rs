//! Temporal Dirichlet prior.
//!
//! Every parameter row `x^(t)` gets a Dirichlet prior with concentration
//! `1 + beta * <x^(t)>`, where `<x^(t)>` is the kernel-weighted mean of the
//! same row at the other epochs. The kernel is
//!
//! ```text
//! kappa(t, t') = N_t' / |t - t'|^a
//! ```
//!
//! with `N_t'` the global observation count of epoch `t'`. The mode of that
//! prior is the neighbour average itself, and `beta = 0` leaves it flat.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Dimension, Error, Result};

/// Hyper-parameters of the temporal prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Concentration strength on membership rows.
    pub beta_theta: f64,
    /// Concentration strength on block-interaction rows.
    pub beta_p: f64,
    /// Exponent `a` of the distance in the kernel.
    pub kernel_exponent: u32,
    /// Ignore neighbours farther than this many epochs.
    pub window: Option<usize>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta_theta: 0.0,
            beta_p: 0.0,
            kernel_exponent: 1,
            window: None,
        }
    }
}

impl PriorConfig {
    /// Same `beta` on both parameter families.
    pub fn with_beta(beta: f64) -> Self {
        PriorConfig {
            beta_theta: beta,
            beta_p: beta,
            ..PriorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta_theta", self.beta_theta), ("beta_p", self.beta_p)] {
            if !beta.is_finite() || beta < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {beta}"
                )));
            }
        }
        if self.kernel_exponent == 0 {
            return Err(Error::InvalidConfig("kernel exponent must be >= 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn beta(&self, family: ParamFamily) -> f64 {
        match family {
            ParamFamily::Membership => self.beta_theta,
            ParamFamily::Block => self.beta_p,
        }
    }

    fn in_window(&self, distance: usize) -> bool {
        self.window.is_none_or(|w| distance <= w)
    }
}

/// Which parameter tensor a prior quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFamily {
    Membership,
    Block,
}

/// `kappa(t, t') = N_t' / |t - t'|^a`.
pub fn kernel_weight(t: usize, t_prime: usize, counts: &[usize], exponent: u32) -> Result<f64> {
    if t == t_prime {
        return Err(Error::Contract(format!(
            "kernel weight of epoch {t} with itself is undefined"
        )));
    }
    let n = *counts.get(t_prime).ok_or(Error::IndexOutOfRange {
        dim: Dimension::Epoch,
        index: t_prime,
        extent: counts.len(),
    })?;
    if n == 0 {
        return Ok(0.0);
    }
    let distance = t.abs_diff(t_prime) as f64;
    Ok(n as f64 / distance.powi(exponent as i32))
}

/// Normalised kernel weights from a set of target epochs to every source epoch.
#[derive(Debug, Clone)]
pub struct NeighbourWeights {
    /// `targets × sources`, rows summing to one (or all zero on fallback).
    weights: Array2<f64>,
    fallback: Vec<bool>,
}

impl NeighbourWeights {
    /// Weights for every epoch `0..counts.len()`.
    pub fn new(counts: &[usize], config: &PriorConfig) -> Self {
        let targets: Vec<usize> = (0..counts.len()).collect();
        Self::for_targets(&targets, counts, config)
    }

    /// Weights for arbitrary target epochs, which may lie outside `0..counts.len()`.
    pub fn for_targets(targets: &[usize], counts: &[usize], config: &PriorConfig) -> Self {
        let sources = counts.len();
        let mut weights = Array2::zeros((targets.len(), sources));
        let mut fallback = vec![false; targets.len()];
        for (row, &t) in targets.iter().enumerate() {
            let mut total = 0.0;
            for (s, &n) in counts.iter().enumerate() {
                if s == t || n == 0 || !config.in_window(t.abs_diff(s)) {
                    continue;
                }
                let w = n as f64 / (t.abs_diff(s) as f64).powi(config.kernel_exponent as i32);
                weights[[row, s]] = w;
                total += w;
            }
            if total > 0.0 {
                weights.row_mut(row).mapv_inplace(|w| w / total);
            } else {
                fallback[row] = true;
            }
        }
        NeighbourWeights { weights, fallback }
    }

    pub fn targets(&self) -> usize {
        self.weights.nrows()
    }

    /// Normalised weight of source `s` for target row `row`.
    pub fn weight(&self, row: usize, s: usize) -> f64 {
        self.weights[[row, s]]
    }

    /// Whether target row `row` has no weighted neighbour.
    pub fn is_fallback(&self, row: usize) -> bool {
        self.fallback[row]
    }

    /// Averages a `sources × rows × width` parameter tensor over neighbours.
    ///
    /// Fallback targets receive uniform rows.
    pub fn average(&self, param: ArrayView3<'_, f64>) -> NeighbourAverage {
        let (sources, rows, width) = param.dim();
        assert_eq!(
            sources,
            self.weights.ncols(),
            "parameter has {sources} epochs, weights expect {}",
            self.weights.ncols()
        );
        let flat = param
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((sources, rows * width))
            .expect("contiguous");
        let mut values = self
            .weights
            .dot(&flat)
            .into_shape_with_order((self.targets(), rows, width))
            .expect("matching element count");
        let uniform = 1.0 / width as f64;
        for (row, _) in self.fallback.iter().enumerate().filter(|(_, f)| **f) {
            values.index_axis_mut(Axis(0), row).fill(uniform);
        }
        NeighbourAverage {
            values,
            fallback: self.fallback.clone(),
        }
    }
}

/// Neighbour averages `<x^(t)>` for a parameter family, one slab per target epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourAverage {
    values: Array3<f64>,
    fallback: Vec<bool>,
}

impl NeighbourAverage {
    /// All targets in fallback, used when the family has no temporal coupling.
    pub fn inactive(targets: usize, rows: usize, width: usize) -> Self {
        NeighbourAverage {
            values: Array3::from_elem((targets, rows, width), 1.0 / width as f64),
            fallback: vec![true; targets],
        }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn is_fallback(&self, target: usize) -> bool {
        self.fallback[target]
    }

    pub fn row(&self, target: usize, row: usize) -> &[f64] {
        let (_, rows, width) = self.values.dim();
        let start = (target * rows + row) * width;
        &self.values.as_slice().expect("standard layout")[start..start + width]
    }
}

/// Neighbour average of every row at a single epoch `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochAverage {
    /// `rows × width`.
    pub rows: Array2<f64>,
    /// Set when no neighbour carried weight and the rows are uniform.
    pub fallback: bool,
}

/// Kernel-weighted average of `param` over all epochs except `t`.
///
/// `param` is `epochs × rows × width` and `counts[t']` is `N_t'`. `t` may
/// lie beyond the last epoch, in which case every epoch is a neighbour.
pub fn neighbour_average(
    param: ArrayView3<'_, f64>,
    counts: &[usize],
    config: &PriorConfig,
    t: usize,
) -> Result<EpochAverage> {
    config.validate()?;
    if param.dim().0 != counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameter has {} epochs but {} epoch counts were given",
            param.dim().0,
            counts.len()
        )));
    }
    let weights = NeighbourWeights::for_targets(&[t], counts, config);
    let avg = weights.average(param);
    Ok(EpochAverage {
        rows: avg.values.index_axis_move(Axis(0), 0),
        fallback: weights.fallback[0],
    })
}

/// Concentration `1 + beta * <x^(t)>` of every row at epoch `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Concentration {
    pub alpha: Array2<f64>,
    pub fallback: bool,
}

pub fn concentration(
    param: ArrayView3<'_, f64>,
    counts: &[usize],
    config: &PriorConfig,
    family: ParamFamily,
    t: usize,
) -> Result<Concentration> {
    let avg = neighbour_average(param, counts, config, t)?;
    let beta = config.beta(family);
    Ok(Concentration {
        alpha: avg.rows.mapv(|x| 1.0 + beta * x),
        fallback: avg.fallback,
    })
}

/// Mode of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMode {
    pub mode: Vec<f64>,
    /// The prior is flat, so the returned uniform vector is one of many modes.
    pub uniform: bool,
}

/// `(alpha_n - 1) / sum(alpha - 1)`; flat priors return the uniform vector.
pub fn dirichlet_mode(alpha: &[f64]) -> Result<DirichletMode> {
    if alpha.is_empty() {
        return Err(Error::Domain("empty concentration vector".into()));
    }
    if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a < 1.0) {
        return Err(Error::Domain(format!(
            "concentration entries must be >= 1 for a unique mode, got {bad}"
        )));
    }
    let excess: f64 = alpha.iter().map(|a| a - 1.0).sum();
    if excess == 0.0 {
        let n = alpha.len() as f64;
        return Ok(DirichletMode {
            mode: vec![1.0 / n; alpha.len()],
            uniform: true,
        });
    }
    Ok(DirichletMode {
        mode: alpha.iter().map(|a| (a - 1.0) / excess).collect(),
        uniform: false,
    })
}

/// `beta * sum <x> ln x` over all rows of non-fallback epochs. `0 ln 0` is 0.
pub(crate) fn log_prior_term(
    param: ArrayView3<'_, f64>,
    avg: &NeighbourAverage,
    beta: f64,
) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (t, slab) in param.outer_iter().enumerate() {
        if avg.is_fallback(t) {
            continue;
        }
        let target = avg.values.index_axis(Axis(0), t);
        for (x, m) in slab.iter().zip(target.iter()) {
            if *m > 0.0 {
                total += m * x.ln();
            }
        }
    }
    beta * total
}
