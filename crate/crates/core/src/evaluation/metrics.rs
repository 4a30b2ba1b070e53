//! Ranking metrics over per-observation score vectors.
//!
//! ROC-AUC and average precision are computed one-vs-rest over the flattened
//! `(observation, candidate label)` pairs: the true label of each observation
//! is a positive, every other label a negative.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{Dataset, FittedModel};

/// Label distributions predicted for a set of test observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    labels: usize,
    scores: Vec<f64>,
    truth: Vec<usize>,
    /// Test observations dropped because the model does not know their node.
    pub skipped: usize,
}

impl ScoreTable {
    pub fn new(labels: usize) -> Self {
        ScoreTable {
            labels,
            scores: Vec::new(),
            truth: Vec::new(),
            skipped: 0,
        }
    }

    pub fn push(&mut self, scores: &[f64], truth: usize) -> Result<()> {
        if scores.len() != self.labels || truth >= self.labels {
            return Err(Error::ShapeMismatch(format!(
                "score row of {} entries with truth {truth}, table has {} labels",
                scores.len(),
                self.labels
            )));
        }
        self.scores.extend_from_slice(scores);
        self.truth.push(truth);
        Ok(())
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn row(&self, ix: usize) -> (&[f64], usize) {
        let start = ix * self.labels;
        (&self.scores[start..start + self.labels], self.truth[ix])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.scores
            .chunks_exact(self.labels)
            .zip(self.truth.iter().copied())
    }

    /// Flattened `(score, is_positive)` pairs.
    fn pairs(&self) -> Vec<(f64, bool)> {
        self.rows()
            .flat_map(|(scores, truth)| {
                scores
                    .iter()
                    .enumerate()
                    .map(move |(o, &s)| (s, o == truth))
            })
            .collect()
    }
}

/// Scores every test observation with the model's label distribution at its epoch.
pub fn score_test_set(model: &FittedModel, test: &Dataset) -> Result<ScoreTable> {
    if test.labels() != model.labels() {
        return Err(Error::ShapeMismatch(format!(
            "model predicts {} labels, test set has {}",
            model.labels(),
            test.labels()
        )));
    }
    let mut table = ScoreTable::new(model.labels());
    for obs in test.observations() {
        if obs.node >= model.nodes() {
            table.skipped += 1;
            continue;
        }
        let scores = model.label_distribution(obs.node, obs.epoch)?;
        table.push(&scores, obs.label)?;
    }
    Ok(table)
}

fn check_pairs(pairs: &[(f64, bool)]) -> Result<(usize, usize)> {
    let positives = pairs.iter().filter(|(_, p)| *p).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Domain(format!(
            "ranking metric needs positives and negatives, got {positives} and {negatives}"
        )));
    }
    if pairs.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    Ok((positives, negatives))
}

fn by_score(a: &(f64, bool), b: &(f64, bool)) -> Ordering {
    a.0.partial_cmp(&b.0).expect("NaN filtered")
}

/// Probability that a positive pair outranks a negative one, ties counting half.
pub fn roc_auc(table: &ScoreTable) -> Result<f64> {
    let mut pairs = table.pairs();
    let (positives, negatives) = check_pairs(&pairs)?;
    pairs.sort_by(by_score);

    // Mann-Whitney with mid-ranks for ties
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start;
        while end < pairs.len() && pairs[end].0 == pairs[start].0 {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_positives = pairs[start..end].iter().filter(|(_, p)| *p).count();
        rank_sum += mid_rank * tied_positives as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Step-wise area under the precision-recall curve, one step per distinct score.
pub fn average_precision(table: &ScoreTable) -> Result<f64> {
    let mut pairs = table.pairs();
    let (positives, _) = check_pairs(&pairs)?;
    pairs.sort_by(|a, b| by_score(b, a));

    let mut ap = 0.0;
    let mut true_pos = 0usize;
    let mut seen = 0usize;
    let mut previous_recall = 0.0;
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start;
        while end < pairs.len() && pairs[end].0 == pairs[start].0 {
            end += 1;
        }
        true_pos += pairs[start..end].iter().filter(|(_, p)| *p).count();
        seen = end;
        let recall = true_pos as f64 / positives as f64;
        let precision = true_pos as f64 / seen as f64;
        ap += (recall - previous_recall) * precision;
        previous_recall = recall;
        start = end;
    }
    debug_assert_eq!(seen, pairs.len());
    Ok(ap)
}

/// Mean over observations of `(rank of the true label - 1) / (O - 1)`.
///
/// The rank counts every label scored at least as high as the true one, so
/// ties are resolved against the model.
pub fn coverage_error_normalized(table: &ScoreTable) -> Result<f64> {
    if table.labels() < 2 {
        return Err(Error::Domain(
            "normalized coverage error needs at least two labels".into(),
        ));
    }
    if table.is_empty() {
        return Err(Error::Domain("empty score table".into()));
    }
    let denom = (table.labels() - 1) as f64;
    let total: f64 = table
        .rows()
        .map(|(scores, truth)| {
            let reference = scores[truth];
            let rank = scores.iter().filter(|&&s| s >= reference).count();
            (rank - 1) as f64 / denom
        })
        .sum();
    Ok(total / table.len() as f64)
}
