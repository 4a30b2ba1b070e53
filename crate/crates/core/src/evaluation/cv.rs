//! Repeated train/validation/test splits with `beta` selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::rmse_aligned;
use super::metrics::{average_precision, coverage_error_normalized, roc_auc, score_test_set};
use crate::error::{Error, Result};
use crate::inference::{fit, BlockMode, FitConfig};
use crate::model::{Dataset, FittedModel, MembershipTensor};
use crate::prior::PriorConfig;

/// Default `beta` grid, log-spaced.
pub const DEFAULT_BETA_GRID: [f64; 8] = [0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: usize,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            folds: 5,
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

/// Observation indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig("at least two folds are needed".into()));
        }
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::InvalidConfig("split fractions must be positive".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// Fold `fold` shuffles the observations with its own stream of `seed`.
    pub fn split(&self, observations: usize, fold: usize) -> Result<Split> {
        self.validate()?;
        let mut order: Vec<usize> = (0..observations).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fold as u64);
        order.shuffle(&mut rng);
        let n_test = (observations as f64 * self.test).round() as usize;
        let n_val = (observations as f64 * self.validation).round() as usize;
        let n_train = observations.saturating_sub(n_test + n_val);
        if n_test == 0 || n_val == 0 || n_train == 0 {
            return Err(Error::EmptySplit(format!(
                "{observations} observations give train/validation/test sizes {n_train}/{n_val}/{n_test}"
            )));
        }
        let test = order[..n_test].to_vec();
        let validation = order[n_test..n_test + n_val].to_vec();
        let train = order[n_test + n_val..].to_vec();
        Ok(Split {
            train,
            validation,
            test,
        })
    }
}

/// Model families compared by the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    /// Temporal prior, `beta` chosen on validation data.
    Sdsbm,
    /// Independent epochs: dynamic parameters with `beta = 0`.
    NoCoupling,
    /// Epochs collapsed into one.
    Static,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Sdsbm => "SDSBM",
            ModelFamily::NoCoupling => "NC",
            ModelFamily::Static => "SIMSBM(1)",
        }
    }

    pub fn all() -> [ModelFamily; 3] {
        [ModelFamily::Sdsbm, ModelFamily::NoCoupling, ModelFamily::Static]
    }
}

/// Fits one family on `train` at a given `beta`, returning a model over the
/// full epoch range of `train`.
pub fn fit_family(
    train: &Dataset,
    family: ModelFamily,
    beta: f64,
    base: &FitConfig,
) -> Result<FittedModel> {
    let mut config = base.clone();
    config.prior = PriorConfig {
        beta_theta: beta,
        beta_p: beta,
        ..base.prior
    };
    match family {
        ModelFamily::Sdsbm => {}
        ModelFamily::NoCoupling => {
            config.prior.beta_theta = 0.0;
            config.prior.beta_p = 0.0;
        }
        ModelFamily::Static => {
            config.prior.beta_theta = 0.0;
            config.prior.beta_p = 0.0;
            match &config.block_mode {
                BlockMode::Fixed(p) if !p.is_static() => {
                    return Err(Error::InvalidConfig(
                        "static baseline needs a single-slice fixed block tensor".into(),
                    ))
                }
                BlockMode::Fixed(_) => {}
                _ => config.block_mode = BlockMode::Static,
            }
            let collapsed = train.collapse_epochs();
            let report = fit(&collapsed, &config)?;
            let theta = report.theta.broadcast(train.epochs())?;
            return FittedModel::new(theta, report.p, train.epoch_counts().to_vec(), config.prior);
        }
    }
    let report = fit(train, &config)?;
    FittedModel::new(report.theta, report.p, train.epoch_counts().to_vec(), config.prior)
}

/// Test metrics of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub beta: f64,
    pub validation_roc: f64,
    pub roc: f64,
    pub ap: f64,
    pub nce: f64,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAndError {
    pub mean: f64,
    /// Sample standard deviation over folds divided by `sqrt(folds)`.
    pub standard_error: f64,
}

impl MeanAndError {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let standard_error = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        MeanAndError {
            mean,
            standard_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: ModelFamily,
    pub folds: Vec<FoldResult>,
    pub roc_auc: MeanAndError,
    pub average_precision: MeanAndError,
    pub coverage_error_normalized: MeanAndError,
    pub rmse_theta: Option<MeanAndError>,
}

impl EvalResult {
    fn from_folds(model: ModelFamily, folds: Vec<FoldResult>) -> Self {
        let collect = |f: fn(&FoldResult) -> f64| folds.iter().map(f).collect::<Vec<_>>();
        let rmse: Option<Vec<f64>> = folds.iter().map(|f| f.rmse).collect();
        EvalResult {
            model,
            roc_auc: MeanAndError::from_values(&collect(|f| f.roc)),
            average_precision: MeanAndError::from_values(&collect(|f| f.ap)),
            coverage_error_normalized: MeanAndError::from_values(&collect(|f| f.nce)),
            rmse_theta: rmse.map(|v| MeanAndError::from_values(&v)),
            folds,
        }
    }
}

/// Everything computed for one candidate `beta` on one fold.
struct Candidate {
    beta: f64,
    model: FittedModel,
    validation_roc: f64,
}

/// Runs the split / tune / test protocol for one model family.
///
/// For every fold the family is fitted on the training part for each `beta`
/// of the grid, the `beta` with the highest validation ROC-AUC is kept and
/// its model is scored on the test part. `truth`, when given, adds the
/// aligned membership RMSE. Non-SDSBM families ignore the grid.
pub fn cross_validate(
    data: &Dataset,
    family: ModelFamily,
    beta_grid: &[f64],
    plan: &SplitPlan,
    base: &FitConfig,
    truth: Option<&MembershipTensor>,
) -> Result<EvalResult> {
    plan.validate()?;
    base.validate()?;
    if beta_grid.is_empty() {
        return Err(Error::InvalidConfig("beta grid is empty".into()));
    }
    let grid: Vec<f64> = match family {
        ModelFamily::Sdsbm => beta_grid.to_vec(),
        _ => vec![0.0],
    };

    let mut folds = Vec::with_capacity(plan.folds);
    for fold in 0..plan.folds {
        let split = plan.split(data.len(), fold)?;
        let train = data.subset(&split.train)?;
        let validation = data.subset(&split.validation)?;
        let test = data.subset(&split.test)?;
        let mut config = base.clone();
        config.seed = base.seed.wrapping_add(fold as u64);

        let candidates: Vec<Candidate> = grid
            .par_iter()
            .map(|&beta| -> Result<Candidate> {
                let model = fit_family(&train, family, beta, &config)?;
                let validation_roc = roc_auc(&score_test_set(&model, &validation)?)?;
                Ok(Candidate {
                    beta,
                    model,
                    validation_roc,
                })
            })
            .collect::<Result<_>>()?;
        // first grid point wins ties
        let best = candidates
            .iter()
            .reduce(|a, b| if b.validation_roc > a.validation_roc { b } else { a })
            .expect("non-empty grid");

        let table = score_test_set(&best.model, &test)?;
        let rmse = truth
            .map(|t| rmse_aligned(&best.model.theta, t).map(|a| a.rmse))
            .transpose()?;
        folds.push(FoldResult {
            fold,
            beta: best.beta,
            validation_roc: best.validation_roc,
            roc: roc_auc(&table)?,
            ap: average_precision(&table)?,
            nce: coverage_error_normalized(&table)?,
            rmse,
        });
    }
    Ok(EvalResult::from_folds(family, folds))
}
