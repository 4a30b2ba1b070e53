//! Event-log ingestion, model archives and plot-ready exports.

mod archive;
mod config;
mod flows;
mod ingest;
mod results;
mod truth;

pub use archive::{FitMetadata, ModelArchive, ARCHIVE_FORMAT, ARCHIVE_VERSION};
pub use config::{parse_config, read_config};
pub use flows::{export_flows, membership_flows, write_flows, FlowRecord};
pub use ingest::{ingest, ingest_path, write_events, Ingested, Slicing, TimeAxis, Vocabulary};
pub use results::{result_rows, write_results_csv, write_results_json, ResultRow};
pub use truth::{read_memberships, write_blocks, write_memberships};
