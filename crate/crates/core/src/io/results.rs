use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::evaluation::EvalResult;

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow<'a> {
    pub model: &'a str,
    pub dataset: &'a str,
    pub fold: usize,
    pub beta: f64,
    pub roc: f64,
    pub ap: f64,
    pub nce: f64,
    pub rmse: Option<f64>,
}

pub fn result_rows<'a>(dataset: &'a str, results: &'a [EvalResult]) -> Vec<ResultRow<'a>> {
    results
        .iter()
        .flat_map(|r| {
            r.folds.iter().map(move |f| ResultRow {
                model: r.model.name(),
                dataset,
                fold: f.fold,
                beta: f.beta,
                roc: f.roc,
                ap: f.ap,
                nce: f.nce,
                rmse: f.rmse,
            })
        })
        .collect()
}

/// CSV with columns `model,dataset,fold,beta,roc,ap,nce,rmse`; `rmse` is empty without ground truth.
pub fn write_results_csv<W: Write>(writer: W, dataset: &str, results: &[EvalResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["model", "dataset", "fold", "beta", "roc", "ap", "nce", "rmse"])?;
    for row in result_rows(dataset, results) {
        out.write_record([
            row.model.to_owned(),
            row.dataset.to_owned(),
            row.fold.to_string(),
            row.beta.to_string(),
            row.roc.to_string(),
            row.ap.to_string(),
            row.nce.to_string(),
            row.rmse.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    dataset: &'a str,
    rows: Vec<ResultRow<'a>>,
    summaries: &'a [EvalResult],
}

/// JSON mirror of the CSV plus the per-model means and standard errors.
pub fn write_results_json<W: Write>(writer: W, dataset: &str, results: &[EvalResult]) -> Result<()> {
    let doc = ResultsDocument {
        dataset,
        rows: result_rows(dataset, results),
        summaries: results,
    };
    serde_json::to_writer_pretty(writer, &doc)?;
    Ok(())
}
