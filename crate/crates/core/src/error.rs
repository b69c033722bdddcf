use thiserror::Error;

/// Everything that can go wrong between ingesting a dataset and scoring a
/// refitted model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset has no records")]
    EmptyDataset,

    #[error("covariate `{covariate}`: record {record} has level index {index}, but only {levels} levels exist")]
    LevelOutOfRange {
        covariate: String,
        record: usize,
        index: usize,
        levels: usize,
    },

    #[error("covariate `{covariate}`: level `{level}` is never observed, its effect is not identifiable")]
    UnobservedLevel { covariate: String, level: String },

    #[error("covariate `{0}` needs at least two distinct levels")]
    TooFewLevels(String),

    #[error("covariate `{covariate}`: duplicate level `{level}`")]
    DuplicateLevel { covariate: String, level: String },

    #[error("covariate `{covariate}`: baseline `{baseline}` is not one of its levels")]
    UnknownBaseline { covariate: String, baseline: String },

    #[error("`{name}` has {got} records, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("coefficient vector of length {got} does not match a layout of {expected}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("design matrix is rank deficient (numerical rank {rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("need more observations ({rows}) than design columns ({columns})")]
    TooFewObservations { rows: usize, columns: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("posterior precision is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("residual sum of squares is zero, the error-variance posterior is degenerate")]
    DegenerateResiduals,

    #[error("covariate {covariate}, effect {effect}: every allocation weight underflowed ({detail})")]
    AllocationUnderflow {
        covariate: usize,
        effect: usize,
        detail: String,
    },

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("trace contains no draws")]
    EmptyTrace,

    #[error("cluster count k = {k} is out of range for {n} objects")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("silhouette is undefined for a single-cluster solution")]
    SingleCluster,

    #[error("partitions cover different element sets ({left} vs {right} elements)")]
    ElementMismatch { left: usize, right: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("too few draws for an HPD interval: {got} (need at least {min})")]
    TooFewDraws { got: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column `{0}` not found in the input header")]
    MissingColumn(String),

    #[error("record {record}: missing value in column `{column}`")]
    MissingValue { record: usize, column: String },

    #[error("record {record}: cannot parse `{value}` in column `{column}` as a number")]
    ParseValue {
        record: usize,
        column: String,
        value: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for errors caused by the inputs or configuration rather than by
    /// a numerical failure during fitting.
    pub fn is_configuration(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::DegenerateResiduals
                | Error::AllocationUnderflow { .. }
                | Error::RankDeficient { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
