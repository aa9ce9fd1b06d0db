use super::kmeans::{kmeans, top_terms, KMeansParams};
use super::ClusterError;
use crate::fsutil;
use crate::par::Execution;
use crate::vectorizer::TfIdfModel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::path::Path;

pub const DEFAULT_RESIDUAL_NAME: &str = "Miscellaneous";
pub const DEFAULT_LABEL_COUNT: usize = 10;
pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub member_ids: BTreeSet<String>,
    pub suggested_terms: Vec<String>,
    pub origin_round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub k: usize,
    pub seed: u64,
    pub accepted: Vec<String>,
    pub unassigned_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationSession {
    pub format_version: u32,
    pub round: u32,
    pub seed: u64,
    pub accepted: Vec<Category>,
    pub unassigned: BTreeSet<String>,
    pub history: Vec<RoundSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedCluster {
    pub id: usize,
    pub members: Vec<String>,
    pub suggested_terms: Vec<String>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundProposal {
    pub round: u32,
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub clusters: Vec<ProposedCluster>,
}

impl RoundProposal {
    pub fn cluster(&self, id: usize) -> Option<&ProposedCluster> {
        self.clusters.get(id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub cluster: usize,
    pub name: String,
}

impl Selection {
    pub fn new(cluster: usize, name: impl Into<String>) -> Self {
        Self {
            cluster,
            name: name.into(),
        }
    }
}

/// `clamp(round(sqrt(n / 2)), 2, 50)`, never more than `n`.
pub fn default_k(unassigned: usize) -> usize {
    let k = ((unassigned as f64 / 2.0).sqrt().round() as usize).clamp(2, 50);
    k.min(unassigned).max(1)
}

pub fn start_session<I, S>(corpus_ids: I, seed: u64) -> Result<CurationSession, ClusterError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let unassigned: BTreeSet<String> = corpus_ids.into_iter().map(Into::into).collect();
    if unassigned.is_empty() {
        return Err(ClusterError::EmptyCorpus);
    }
    Ok(CurationSession {
        format_version: SESSION_FORMAT_VERSION,
        round: 0,
        seed,
        accepted: Vec::new(),
        unassigned,
        history: Vec::new(),
    })
}

impl CurationSession {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        fsutil::read_json(path)
    }

    /// Atomic: an interrupted save leaves the previous file intact.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fsutil::write_json(path, self)
    }

    /// Seed used for a round when the caller does not pick one.
    pub fn round_seed(&self) -> u64 {
        self.seed.wrapping_add(self.round as u64)
    }

    fn name_taken(&self, name: &str) -> bool {
        let lower = name.to_lowercase();
        self.accepted.iter().any(|c| c.name.to_lowercase() == lower)
    }

    pub fn corpus_size(&self) -> usize {
        self.unassigned.len() + self.accepted.iter().map(|c| c.member_ids.len()).sum::<usize>()
    }
}

/// Clusters the unassigned recordings. The session itself is not modified.
pub fn run_round(
    session: &CurationSession,
    model: &TfIdfModel,
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<RoundProposal, ClusterError> {
    let ids: Vec<String> = session.unassigned.iter().cloned().collect();
    if k < 1 || k > ids.len() {
        return Err(ClusterError::BadK { k, n: ids.len() });
    }
    let rows = ids
        .iter()
        .map(|id| model.row(id).cloned().ok_or_else(|| ClusterError::MissingVector(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let params = KMeansParams::new(k, seed).with_exec(exec);
    let result = kmeans(&rows, &ids, model.vocabulary.len(), &params)?;
    let clusters = (0..k)
        .map(|c| {
            let labels = top_terms(&result.centroids[c], &model.vocabulary, DEFAULT_LABEL_COUNT);
            ProposedCluster {
                id: c,
                members: result.members(c).into_iter().map(str::to_string).collect(),
                suggested_terms: labels.terms,
                low_confidence: labels.low_confidence,
            }
        })
        .collect();
    Ok(RoundProposal {
        round: session.round,
        k,
        seed,
        inertia: result.inertia,
        clusters,
    })
}

/// Turns the selected clusters into categories and advances the round.
pub fn accept(
    session: &CurationSession,
    proposal: &RoundProposal,
    selections: &[Selection],
) -> Result<CurationSession, ClusterError> {
    if proposal.round != session.round {
        return Err(ClusterError::StaleProposal {
            proposal: proposal.round,
            session: session.round,
        });
    }
    let mut next = session.clone();
    let mut seen_clusters = HashSet::new();
    let mut accepted_names = Vec::new();
    for sel in selections {
        let cluster = proposal
            .cluster(sel.cluster)
            .ok_or(ClusterError::UnknownCluster(sel.cluster))?;
        if !seen_clusters.insert(sel.cluster) {
            return Err(ClusterError::DuplicateSelection(sel.cluster));
        }
        if cluster.members.is_empty() {
            return Err(ClusterError::EmptyCluster(sel.cluster));
        }
        let name = sel.name.trim();
        if name.is_empty() {
            return Err(ClusterError::EmptyName);
        }
        if next.name_taken(name) {
            return Err(ClusterError::DuplicateName(name.to_string()));
        }
        for id in &cluster.members {
            if !next.unassigned.remove(id) {
                return Err(ClusterError::NotUnassigned(id.clone()));
            }
        }
        next.accepted.push(Category {
            name: name.to_string(),
            member_ids: cluster.members.iter().cloned().collect(),
            suggested_terms: cluster.suggested_terms.clone(),
            origin_round: session.round,
        });
        accepted_names.push(name.to_string());
    }
    next.history.push(RoundSummary {
        round: session.round,
        k: proposal.k,
        seed: proposal.seed,
        accepted: accepted_names,
        unassigned_after: next.unassigned.len(),
    });
    next.round += 1;
    Ok(next)
}

/// Complete category list: accepted categories plus, when anything is left,
/// one residual category holding the rest.
pub fn finalize(session: &CurationSession, residual_name: &str) -> Result<Vec<Category>, ClusterError> {
    let mut categories = session.accepted.clone();
    if !session.unassigned.is_empty() {
        let name = residual_name.trim();
        if name.is_empty() {
            return Err(ClusterError::EmptyName);
        }
        if session.name_taken(name) {
            return Err(ClusterError::DuplicateName(name.to_string()));
        }
        categories.push(Category {
            name: name.to_string(),
            member_ids: session.unassigned.clone(),
            suggested_terms: Vec::new(),
            origin_round: session.round,
        });
    }
    Ok(categories)
}
