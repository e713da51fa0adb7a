//! Slide ingestion and dataset preparation.
//!
//! Regions are cut into non-overlapping square tiles; partial edge tiles are
//! zero-padded so the grid is always `ceil(h/ts) x ceil(w/ts)` and each tile
//! records the padded fraction of its area. Patients, not slides, are the
//! unit of the train/val/test split.

pub mod error;
pub mod manifest;
pub mod sampling;
pub mod source;
pub mod split;
pub mod tiling;

pub use error::SlideError;
pub use manifest::{parse_manifest, read_manifest, validate_cohort, write_manifest, SlideManifest};
pub use sampling::{is_blank, sample_patches, BLANK_STD_THRESHOLD, MAX_PAD_FRACTION};
pub use source::{assemble_tiles, load_raster, load_source, parse_tile_name, read_tile_dir, tile_file_name, write_tile_dir};
pub use split::{largest_remainder, parse_ratios, patient_classes, split_patients, DatasetSplit, Partition};
pub use tiling::{tile_image, tile_region, GridLayout, Roi, Tile, TileBounds, TileGrid, DEFAULT_TILE_SIZE};
