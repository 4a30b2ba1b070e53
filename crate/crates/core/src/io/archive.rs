//! Versioned JSON container for fitted models.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so `load(save(m))` reproduces tensors exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::ingest::{TimeAxis, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::FitReport;
use crate::model::{BlockTensor, FittedModel, MembershipTensor};
use crate::prior::PriorConfig;

pub const ARCHIVE_FORMAT: &str = "sdsbm-model";
pub const ARCHIVE_VERSION: u32 = 1;

/// Objective values kept from the end of the trace.
const TRACE_TAIL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub trace_tail: Vec<f64>,
}

impl FitMetadata {
    pub fn from_report(report: &FitReport) -> Self {
        let start = report.trace.len().saturating_sub(TRACE_TAIL);
        FitMetadata {
            seed: report.seed,
            iterations: report.iterations_run,
            converged: report.converged,
            objective: report.final_objective(),
            trace_tail: report.trace[start..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub nodes: usize,
    pub clusters: usize,
    pub labels: usize,
    pub epochs: usize,
    pub block_slices: usize,
    pub node_keys: Vec<String>,
    pub label_keys: Vec<String>,
    /// Row-major `epochs × nodes × clusters`.
    pub theta: Vec<f64>,
    /// Row-major `block_slices × clusters × labels`.
    pub p: Vec<f64>,
    pub epoch_counts: Vec<usize>,
    pub prior: PriorConfig,
    pub time: Option<TimeAxis>,
    pub fit: Option<FitMetadata>,
}

impl ModelArchive {
    pub fn new(
        model: &FittedModel,
        nodes: &Vocabulary,
        labels: &Vocabulary,
        time: Option<TimeAxis>,
        fit: Option<FitMetadata>,
    ) -> Result<Self> {
        if nodes.len() != model.nodes() || labels.len() != model.labels() {
            return Err(Error::ShapeMismatch(format!(
                "vocabularies ({} nodes, {} labels) do not match model ({} nodes, {} labels)",
                nodes.len(),
                labels.len(),
                model.nodes(),
                model.labels()
            )));
        }
        Ok(ModelArchive {
            format: ARCHIVE_FORMAT.to_owned(),
            version: ARCHIVE_VERSION,
            nodes: model.nodes(),
            clusters: model.clusters(),
            labels: model.labels(),
            epochs: model.epochs(),
            block_slices: model.p.slices(),
            node_keys: nodes.keys().to_vec(),
            label_keys: labels.keys().to_vec(),
            theta: model.theta.values().iter().copied().collect(),
            p: model.p.values().iter().copied().collect(),
            epoch_counts: model.epoch_counts.clone(),
            prior: model.prior,
            time,
            fit,
        })
    }

    pub fn model(&self) -> Result<FittedModel> {
        let theta = Array3::from_shape_vec((self.epochs, self.nodes, self.clusters), self.theta.clone())
            .map_err(|e| Error::Archive(format!("theta: {e}")))?;
        let p = Array3::from_shape_vec((self.block_slices, self.clusters, self.labels), self.p.clone())
            .map_err(|e| Error::Archive(format!("p: {e}")))?;
        FittedModel::new(
            MembershipTensor::new(theta)?,
            BlockTensor::new(p)?,
            self.epoch_counts.clone(),
            self.prior,
        )
    }

    pub fn node_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_keys(self.node_keys.clone())
    }

    pub fn label_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_keys(self.label_keys.clone())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let archive: ModelArchive = serde_json::from_reader(reader)?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(Error::Archive(format!("unknown format {:?}", archive.format)));
        }
        if archive.version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!(
                "unsupported version {} (expected {ARCHIVE_VERSION})",
                archive.version
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
