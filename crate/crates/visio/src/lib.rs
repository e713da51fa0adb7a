//! Slide-level visualizations and the cohort D-Graph.
//!
//! Label maps and heatmaps draw one cell per tile, scaled up by a display
//! factor. Heatmap intensity is `round(255 p)` of each tile's top-class
//! probability.

pub mod dgraph;
pub mod error;
pub mod maps;
pub mod palette;

pub use dgraph::{dgraph_layout, dgraph_svg, layout_csv, to_pixels, CohortSample, DGraphPoint, SvgOptions, DEFAULT_MAX_RADIUS};
pub use error::VisioError;
pub use maps::{cell_records, reconstruct, render_heatmap, render_labelmap, GridShape, Legend, RenderedMap};
pub use palette::{class_color, probability_intensity, Colormap, PALETTE, PALETTE_VERSION};
