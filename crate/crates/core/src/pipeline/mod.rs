//! Ingestion, preprocessing, rendering and run bookkeeping.

mod dataset;
mod io;
mod manifest;
mod overlay;
mod table;

pub use dataset::{load_dataset, split_dataset, Annotation, DatasetEntry, Spectrum, DEFAULT_TEST_FRACTION};
pub use io::{load_image, DEFAULT_INPUT_SIZE};
pub use manifest::{file_digest, RunManifest, RunOutputs};
pub use overlay::{colormap, render_overlay, save_png, BOX_COLOR, COLORMAP};
pub use table::{mean_std, ResultsRow, ResultsTable};
