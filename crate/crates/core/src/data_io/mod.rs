//! Dataset plumbing: CSV files, gridded station data, hourly interpolation
//! and synthetic regression tasks with pre-trained components.

mod grid;
mod synthetic;
mod table;

pub use grid::{grid_from_stations, interpolate_time, knn_impute, Grid, GridSpec, Station};
pub use synthetic::{generate_synthetic, SyntheticTask, SyntheticTaskSpec, Teacher};
pub use table::{load_component_outputs, load_csv, save_csv, CsvSchema, SPLIT_COLUMN};
