//! K-Means clustering and the retain-and-recluster curation session.
//!
//! A session starts with every recording unassigned. Each round clusters the
//! unassigned recordings, the curator names the clusters worth keeping, and
//! those become categories. The remainder is clustered again next round.

pub mod kmeans;
pub mod metrics;
mod session;

pub use kmeans::{kmeans, suggest_labels, KMeansParams, KMeansResult, LabelSuggestion};
pub use session::{
    accept, default_k, finalize, run_round, start_session, Category, CurationSession,
    ProposedCluster, RoundProposal, RoundSummary, Selection, DEFAULT_LABEL_COUNT,
    DEFAULT_RESIDUAL_NAME, SESSION_FORMAT_VERSION,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k={k} out of range for {n} points")]
    BadK { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("cluster {0} selected twice")]
    DuplicateSelection(usize),
    #[error("category name {0:?} already in use")]
    DuplicateName(String),
    #[error("category name must not be empty")]
    EmptyName,
    #[error("cannot start a session over an empty corpus")]
    EmptyCorpus,
    #[error("proposal is from round {proposal} but the session is at round {session}")]
    StaleProposal { proposal: u32, session: u32 },
    #[error("no vector for recording {0}")]
    MissingVector(String),
    #[error("recording {0} is not unassigned")]
    NotUnassigned(String),
}
