//! Censored multi-stage panels, selection specs and tabular ingestion.

mod io;
mod panel;
mod preprocess;
mod spec;
mod table;

pub use io::{
    atomic_write, load_panel, load_population, read_panel_csv, read_population_csv, save_panel,
    save_population, sidecar_path, write_panel_csv, write_population_csv, Sidecar,
};
pub use panel::{Candidate, Population, StagePanel};
pub use preprocess::{
    preprocess, split_stage_covariates, train_test_split, Encoding, Feature, FeatureTable,
    Preprocessor, StageSplit,
};
pub use spec::{FairnessNotion, SelectionSpec};
pub use table::{ingest, ingest_reader, Cell, Column, ColumnKind, RawTable, Schema};
