use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("branch {from}-{to} (line {line}) has zero impedance")]
    ZeroImpedance { from: usize, to: usize, line: usize },

    #[error("grid has no slack bus")]
    NoSlack,

    #[error("grid has {0} slack buses, exactly one is supported")]
    MultipleSlack(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("unknown line id {0}")]
    UnknownLine(usize),

    #[error("invalid zone: {0}")]
    InvalidZone(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("removing lines {0:?} islands the grid")]
    IslandedGrid(Vec<usize>),

    #[error("post-attack power flow has no solution after {iterations} iterations (mismatch {mismatch:.3e})")]
    NoSolution { iterations: usize, mismatch: f64 },

    #[error("observation is singular: {0}")]
    SingularObservation(String),

    #[error("recovery matrix is rank deficient (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("zone incidence matrix is rank deficient; use the L1 program")]
    CyclicZone,

    #[error("inconsistent recovery: {0}")]
    InconsistentRecovery(String),

    #[error("convex program failed: {0}")]
    ConvexSolve(String),

    #[error("{branch} branch: {source}")]
    Branch {
        branch: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("zone has {lines} lines ({subsets} subsets); raise the cap to search it")]
    ZoneTooLarge { lines: usize, subsets: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("schema version {found} not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_branch(self, branch: &'static str) -> Error {
        Error::Branch {
            branch,
            source: Box::new(self),
        }
    }
}
