//! Ground-truth tables written by the generator and read back for scoring.

use std::io::{Read, Write};

use ndarray::Array3;

use super::ingest::{TimeAxis, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{BlockTensor, MembershipTensor};

/// `epoch,node,cluster,value` with node keys.
pub fn write_memberships<W: Write>(
    writer: W,
    theta: &MembershipTensor,
    nodes: &Vocabulary,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["epoch", "node", "cluster", "value"])?;
    let v = theta.values();
    for ((t, i, k), value) in v.indexed_iter() {
        let key = nodes
            .key(i)
            .ok_or_else(|| Error::Contract(format!("node {i} missing from vocabulary")))?;
        out.write_record([t.to_string(), key.to_owned(), k.to_string(), value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `slice,cluster,label,value` with label keys.
pub fn write_blocks<W: Write>(writer: W, p: &BlockTensor, labels: &Vocabulary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["slice", "cluster", "label", "value"])?;
    for ((s, k, o), value) in p.values().indexed_iter() {
        let key = labels
            .key(o)
            .ok_or_else(|| Error::Contract(format!("label {o} missing from vocabulary")))?;
        out.write_record([s.to_string(), k.to_string(), key.to_owned(), value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a membership table and lays it out with the ids of `nodes` and the
/// epochs of `time` (table epochs are timestamps in the same units as the
/// events). Rows for unknown nodes or outside the time span are skipped.
pub fn read_memberships<R: Read>(
    reader: R,
    nodes: &Vocabulary,
    time: &TimeAxis,
    clusters: usize,
) -> Result<MembershipTensor> {
    let mut values = Array3::<f64>::from_elem((time.epochs, nodes.len(), clusters), f64::NAN);
    let mut rdr = csv::Reader::from_reader(reader);
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |what: &str| Error::Parse {
            line,
            message: format!("invalid {what}"),
        };
        if record.len() != 4 {
            return Err(parse_err("row length"));
        }
        let stamp: f64 = record[0].parse().map_err(|_| parse_err("epoch"))?;
        let k: usize = record[2].parse().map_err(|_| parse_err("cluster"))?;
        let value: f64 = record[3].parse().map_err(|_| parse_err("value"))?;
        let Some(i) = nodes.id(&record[1]) else {
            // nodes absent from the event log cannot be compared
            continue;
        };
        let Some(t) = time.epoch_of(stamp).filter(|&t| t < time.epochs) else {
            // outside the span covered by the events
            continue;
        };
        if k >= clusters {
            return Err(parse_err("cluster id"));
        }
        values[[t, i, k]] = value;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateInput(
            "ground truth does not cover every (epoch, node, cluster)".into(),
        ));
    }
    MembershipTensor::new(values)
}
