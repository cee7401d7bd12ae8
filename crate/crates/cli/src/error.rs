use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(flowrecon::Error),
    #[error(transparent)]
    Core(#[from] flowrecon::Error),
}

impl CliError {
    /// 2: configuration, 3: numerical failure, 4: input/output.
    pub fn exit_code(&self) -> i32 {
        use flowrecon::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Dimension(_) | E::Generation(_) => 2,
                E::Numeric { .. } | E::TrainingDiverged { .. } | E::DegenerateSignal(_) => 3,
                E::Io { .. } | E::Checkpoint(_) => 4,
            },
        }
    }
}
