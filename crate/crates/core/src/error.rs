use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0} is outside the domain of {1}")]
    Domain(String, &'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("panel is empty")]
    EmptyPanel,
    #[error("non-finite gradient in block `{block}` at index {index}")]
    NonFiniteGradient { block: String, index: usize },
    #[error("non-finite loss at step {step} (params {params})")]
    NonFiniteLoss { step: usize, params: String },
    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("{0}")]
    Range(String),
}
