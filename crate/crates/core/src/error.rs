use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    /// `row` is the 1-based data row (header excluded).
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("label at row {row} is not 0 or 1")]
    BadLabel { row: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("too few rows: have {have}, need at least {need}")]
    TooFewRows { have: usize, need: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("point set is empty")]
    EmptyPointSet,
    #[error("asked for {k} neighbours but only {available} are eligible")]
    NotEnoughNeighbors { k: usize, available: usize },

    #[error("minority class has {count} rows, need at least 2")]
    TooFewMinority { count: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_loss})")]
    NonFiniteLoss { epoch: usize, last_loss: f64 },
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("bad model file: {0}")]
    BadModelFile(String),

    #[error("hyper-parameter space is empty")]
    EmptySpace,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unsupported model for this operation: {0}")]
    UnsupportedModel(String),
    #[error("grid of size {0} is too small (need at least 3)")]
    GridTooSmall(usize),
    #[error("grids are not comparable: {0}")]
    GridMismatch(String),
    #[error("clustering produced {0} leaves, need at least 2")]
    TooFewLeaves(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
