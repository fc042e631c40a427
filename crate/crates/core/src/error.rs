use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("rejected configuration: {0}")]
    RejectedConfig(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted { requested: usize, remaining: usize },

    #[error("attack failed: {0}")]
    AttackFailed(String),

    #[error("remote victim unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("remote victim internal error: {0}")]
    RemoteInternal(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::RejectedConfig(msg.into())
    }

    pub fn in_member(self, member: usize) -> Self {
        Error::Member {
            member,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, unwrapping member and stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Member { source, .. } | Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
