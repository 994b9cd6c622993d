use thiserror::Error;

/// Invalid or missing configuration value. `field` is the offending key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("schedule overflow in round {round}: {slots} slots exceeds max_total_slots {limit}")]
    ScheduleOverflow { round: u32, slots: f64, limit: u64 },
    #[error("duplicate transmitter id {0}")]
    DuplicateTransmitter(u32),
    #[error("jam action from {0} has an empty target set")]
    EmptyJamTargets(u32),
    #[error("approx_n_mode off")]
    ApproxModeOff,
    #[error("incomplete phase log: {0}")]
    IncompleteLog(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("empty experiment grid")]
    EmptyGrid,
    #[error("cell {cell}, trial {trial}: {source}")]
    Trial {
        cell: usize,
        trial: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("script: {0}")]
    Script(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
