//! Dataset loading, stratified splitting, and the heterogeneous-to-binary
//! data homogenizer.

pub mod dataset;
pub mod homogenizer;
pub mod schema;
pub mod split;
pub mod synthetic;

pub use dataset::{load_csv, write_csv, Cell, CellValue, Dataset};
pub use homogenizer::{
    encode_binary, encode_binary_with_stats, fit_homogenizer, group_argmax_decode, BinStrategy,
    EncodeStats, Homogenizer,
};
pub use schema::{ColumnKind, ColumnSchema, SchemaSidecar};
pub use split::{stratified_split, DataSplit};
