use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid workload at `{field}`: {reason}")]
    InvalidWorkload { field: String, reason: String },

    #[error("unknown subspace `{0}`")]
    UnknownSubspace(String),

    #[error("communication occupies {channels} channels but the device only has {sms} SMs")]
    SmExhaustion { channels: u32, sms: u32 },

    #[error("no global memory bandwidth left for computation (peak {peak}, footprint {footprint})")]
    BandwidthExhaustion { peak: f64, footprint: f64 },

    #[error("wave shares cover {covered} blocks of an op with {total} blocks")]
    PartitionMismatch { covered: u64, total: u64 },

    #[error("joint grid has {size} points, above the limit of {limit}")]
    GridTooLarge { size: u128, limit: u128 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidWorkload {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
