use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisioError {
    #[error("grid cells without a prediction or tile: {0:?}")]
    MissingCells(Vec<(usize, usize)>),
    #[error("grid cell ({0}, {1}) appears more than once")]
    DuplicateCell(usize, usize),
    #[error("cell ({row}, {col}) lies outside a {rows}x{cols} grid")]
    OutOfGrid { row: usize, col: usize, rows: usize, cols: usize },
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
