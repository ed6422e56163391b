use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("lookup error: id {id} out of range for {bins} bins (feature {feature})")]
    Lookup { feature: usize, id: usize, bins: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate labels: ROC/AUC needs at least one positive and one negative")]
    DegenerateLabels,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("unsupported checkpoint format_version {0}")]
    Version(u32),
    #[error("schema error: {0}")]
    Schema(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
