use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("disconnected bus {0}")]
    DisconnectedBus(usize),
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("branch {from}-{to} has zero series admittance")]
    ZeroAdmittanceBranch { from: usize, to: usize },
    #[error("invalid voltage magnitude measurement {0}")]
    InvalidVoltageMagnitude(f64),
    #[error("singular load current (zero voltage magnitude)")]
    SingularLoadCurrent,
    #[error("degenerate OCV map (slope b = 0)")]
    DegenerateOcvMap,
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("battery over/under charge in schedule at step {step} (soc {soc})")]
    SocBoundViolation { step: usize, soc: f64 },
    #[error("negative converter power {0}")]
    NegativeConverterPower(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario field `{field}`: {msg}")]
    Scenario { field: String, msg: String },
    #[error("unknown measurement target `{0}`")]
    UnknownTarget(String),
    #[error("unknown parameter path `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` is structurally unidentifiable")]
    UnidentifiableParameter(String),
    #[error("missing measurement for {0}")]
    MissingMeasurement(String),
    #[error("battery `{id}` needs the previous step at step {step}")]
    MissingPreviousStep { id: String, step: usize },
    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("singular KKT matrix in block `{block}`")]
    SingularKkt { block: String },
    #[error("undefined relative error (zero truth)")]
    UndefinedRelativeError,
    #[error("zero mean estimate")]
    ZeroMeanEstimate,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
