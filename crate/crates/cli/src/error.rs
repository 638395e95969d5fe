use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dualview::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Prefixes an i/o failure with the path it concerns.
pub fn at_path(path: &std::path::Path) -> impl Fn(dualview::Error) -> CliError + '_ {
    move |e| match e {
        dualview::Error::Io(io) => CliError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => CliError::Core(other),
    }
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(
                dualview::Error::InvalidParameter(_) | dualview::Error::TooManyClusters { .. },
            ) => 1,
            _ => 2,
        }
    }
}
