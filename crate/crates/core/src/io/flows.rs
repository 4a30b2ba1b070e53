//! Membership transfers between consecutive epochs, for alluvial plots.

use std::io::Write;

use serde::Serialize;

use super::ingest::Vocabulary;
use crate::error::{Error, Result};
use crate::model::MembershipTensor;

/// Transfer matrix `flow[a][b]` moving the mass of `from` onto `to`.
///
/// Each cluster keeps `min(from_k, to_k)`; the surplus of shrinking clusters
/// is spread over growing clusters in proportion to their deficit. Rows sum
/// to `from`, columns to `to`.
pub fn membership_flows(from: &[f64], to: &[f64]) -> Vec<Vec<f64>> {
    let k = from.len();
    let mut flow = vec![vec![0.0; k]; k];
    let mut surplus = vec![0.0; k];
    let mut deficit = vec![0.0; k];
    for c in 0..k {
        let kept = from[c].min(to[c]);
        flow[c][c] = kept;
        surplus[c] = from[c] - kept;
        deficit[c] = to[c] - kept;
    }
    let total: f64 = deficit.iter().sum();
    if total > 0.0 {
        for a in 0..k {
            if surplus[a] == 0.0 {
                continue;
            }
            for b in 0..k {
                if deficit[b] > 0.0 {
                    flow[a][b] += surplus[a] * deficit[b] / total;
                }
            }
        }
    }
    flow
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub epoch_from: usize,
    pub epoch_to: usize,
    pub node: String,
    pub cluster_from: usize,
    pub cluster_to: usize,
    pub mass: f64,
}

/// Every non-zero transfer for every node and consecutive epoch pair.
pub fn export_flows(theta: &MembershipTensor, nodes: &Vocabulary) -> Result<Vec<FlowRecord>> {
    if nodes.len() != theta.nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} node keys for {} nodes",
            nodes.len(),
            theta.nodes()
        )));
    }
    let mut records = Vec::new();
    for t in 1..theta.epochs() {
        for i in 0..theta.nodes() {
            let flow = membership_flows(theta.row(t - 1, i), theta.row(t, i));
            for (a, row) in flow.iter().enumerate() {
                for (b, &mass) in row.iter().enumerate() {
                    if mass > 0.0 {
                        records.push(FlowRecord {
                            epoch_from: t - 1,
                            epoch_to: t,
                            node: nodes.key(i).expect("checked length").to_owned(),
                            cluster_from: a,
                            cluster_to: b,
                            mass,
                        });
                    }
                }
            }
        }
    }
    Ok(records)
}

pub fn write_flows<W: Write>(writer: W, records: &[FlowRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for r in records {
        out.serialize(r)?;
    }
    if records.is_empty() {
        out.write_record(["epoch_from", "epoch_to", "node", "cluster_from", "cluster_to", "mass"])?;
    }
    out.flush()?;
    Ok(())
}
