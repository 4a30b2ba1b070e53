use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Observation};

/// Dense ids for raw string keys, assigned in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    pub fn from_keys(keys: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(keys.len());
        for (id, key) in keys.iter().enumerate() {
            if index.insert(key.clone(), id).is_some() {
                return Err(Error::Archive(format!("duplicate vocabulary key {key:?}")));
            }
        }
        Ok(Vocabulary { keys, index })
    }

    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len();
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn id(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: usize) -> Option<&str> {
        self.keys.get(id).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// How timestamps are cut into epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slicing {
    /// Fixed duration per epoch, in timestamp units.
    Width(f64),
    /// Split the observed time span into this many equal epochs.
    Count(usize),
}

/// Maps timestamps to epochs: `floor((ts - origin) / width)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeAxis {
    pub origin: f64,
    pub width: f64,
    pub epochs: usize,
}

impl TimeAxis {
    /// Epoch of `timestamp`, or `None` before the origin. Timestamps after
    /// the ingested span map past the last epoch.
    pub fn epoch_of(&self, timestamp: f64) -> Option<usize> {
        let offset = (timestamp - self.origin) / self.width;
        if !(offset >= 0.0) {
            return None;
        }
        Some(offset.floor() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub nodes: Vocabulary,
    pub labels: Vocabulary,
    pub time: TimeAxis,
}

struct RawEvent {
    node: usize,
    label: usize,
    timestamp: f64,
    weight: u64,
}

/// Reads a delimited event log: `node_key, label_key, timestamp[, weight]`.
///
/// Lines starting with `#` are comments, and a first row whose third field is
/// `timestamp` is taken as a header. Empty epochs inside the span are kept.
pub fn ingest<R: Read>(reader: R, slicing: Slicing, delimiter: u8) -> Result<Ingested> {
    match slicing {
        Slicing::Width(w) if !(w.is_finite() && w > 0.0) => {
            return Err(Error::InvalidConfig(format!("slice width must be > 0, got {w}")))
        }
        Slicing::Count(0) => {
            return Err(Error::InvalidConfig("epoch count must be >= 1".into()))
        }
        _ => {}
    }

    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .delimiter(delimiter)
        .from_reader(reader);

    let mut nodes = Vocabulary::new();
    let mut labels = Vocabulary::new();
    let mut events = Vec::new();
    let mut first = true;
    for record in csv_reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if first && record.len() >= 3 && record[2].eq_ignore_ascii_case("timestamp") {
            first = false;
            continue;
        }
        first = false;
        if !(3..=4).contains(&record.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 or 4 fields, found {}", record.len()),
            });
        }
        let timestamp: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid timestamp {:?}", &record[2]),
        })?;
        if !timestamp.is_finite() {
            return Err(Error::Parse {
                line,
                message: "timestamp must be finite".into(),
            });
        }
        let weight = match record.get(3) {
            None | Some("") => 1,
            Some(raw) => match raw.parse::<u64>() {
                Ok(w) if w >= 1 => w,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("weight must be a positive integer, got {raw:?}"),
                    })
                }
            },
        };
        if record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty node or label key".into(),
            });
        }
        events.push(RawEvent {
            node: nodes.intern(&record[0]),
            label: labels.intern(&record[1]),
            timestamp,
            weight,
        });
    }

    if events.is_empty() {
        return Err(Error::DegenerateInput("event log contains no events".into()));
    }
    let t_min = events.iter().map(|e| e.timestamp).fold(f64::INFINITY, f64::min);
    let t_max = events.iter().map(|e| e.timestamp).fold(f64::NEG_INFINITY, f64::max);
    let (width, epochs) = match slicing {
        Slicing::Width(w) => (w, ((t_max - t_min) / w).floor() as usize + 1),
        Slicing::Count(n) => {
            let span = t_max - t_min;
            if span <= 0.0 {
                return Err(Error::DegenerateInput(
                    "all events share one timestamp, cannot split the span into epochs".into(),
                ));
            }
            (span / n as f64, n)
        }
    };
    let time = TimeAxis {
        origin: t_min,
        width,
        epochs,
    };

    let mut observations = Vec::new();
    for e in &events {
        let epoch = ((e.timestamp - t_min) / width).floor() as usize;
        let epoch = epoch.min(epochs - 1);
        for _ in 0..e.weight {
            observations.push(Observation::new(e.node, e.label, epoch));
        }
    }
    let dataset = Dataset::new(nodes.len(), labels.len(), epochs, observations)?;
    Ok(Ingested {
        dataset,
        nodes,
        labels,
        time,
    })
}

pub fn ingest_path(path: &Path, slicing: Slicing, delimiter: u8) -> Result<Ingested> {
    ingest(File::open(path)?, slicing, delimiter)
}

/// Writes observations back as an event log with the epoch as timestamp.
pub fn write_events<W: Write>(
    writer: W,
    data: &Dataset,
    nodes: &Vocabulary,
    labels: &Vocabulary,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["node", "label", "timestamp"])?;
    for obs in data.observations() {
        let node = nodes.key(obs.node).ok_or_else(|| {
            Error::Contract(format!("node {} missing from vocabulary", obs.node))
        })?;
        let label = labels.key(obs.label).ok_or_else(|| {
            Error::Contract(format!("label {} missing from vocabulary", obs.label))
        })?;
        out.write_record([node, label, &obs.epoch.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
