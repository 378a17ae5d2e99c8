//! The key-recovery ceremony: collect shares until the policy is
//! satisfied, then reconstruct the private key once.
//!
//! A ceremony moves Open -> Satisfiable -> Reconstructed, or to Aborted
//! from anywhere. Submissions are validated against the plan (right share
//! set, real leaf, the member's own share) and recorded at most once per
//! (participant, leaf). Reconstructed key material lives only in a
//! [`KeyHandle`] that zeroizes itself on drop; nothing here writes key
//! bytes anywhere.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::policy::{evaluate, reconstruct_key, KeyFragmentationPlan, PolicyError, PolicyNode};
use crate::sharing::{wipe, SecretValue, Share};

#[derive(Debug, Error)]
pub enum CeremonyError {
    #[error("ceremony is {0}, not accepting submissions")]
    SubmissionsClosed(&'static str),
    #[error("{participant} already submitted for {path}")]
    DuplicateSubmission { participant: String, path: String },
    #[error("ceremony is not satisfiable yet")]
    NotSatisfiable,
    #[error("ceremony is {0}, cannot finish")]
    WrongStateForFinish(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeremonyStatus {
    /// Accepting shares; policy not yet satisfied.
    Open,
    /// Accepting shares; policy satisfied, finish is possible.
    Satisfiable,
    /// Key handed out; terminal.
    Reconstructed,
    /// Cancelled; terminal.
    Aborted,
}

impl CeremonyStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CeremonyStatus::Open => "open",
            CeremonyStatus::Satisfiable => "satisfiable",
            CeremonyStatus::Reconstructed => "reconstructed",
            CeremonyStatus::Aborted => "aborted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(CeremonyStatus::Open),
            "satisfiable" => Some(CeremonyStatus::Satisfiable),
            "reconstructed" => Some(CeremonyStatus::Reconstructed),
            "aborted" => Some(CeremonyStatus::Aborted),
            _ => None,
        }
    }
}

/// Reconstructed key bytes, zeroized on drop and never printed.
pub struct KeyHandle {
    bytes: Vec<u8>,
}

impl KeyHandle {
    pub(crate) fn new(secret: SecretValue) -> Self {
        Self {
            bytes: secret.as_bytes().to_vec(),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl Drop for KeyHandle {
    fn drop(&mut self) {
        wipe(&mut self.bytes);
    }
}

impl std::fmt::Debug for KeyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyHandle(redacted)")
    }
}

/// One accepted submission.
#[derive(Debug, Clone)]
pub struct Submission {
    pub participant: String,
    pub node_path: String,
    pub share: Share,
    pub at_unix: u64,
}

/// A timestamped ceremony lifecycle event, for the audit trail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CeremonyEvent {
    pub at_unix: u64,
    pub kind: String,
    pub detail: String,
}

/// Per-leaf progress, for status displays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafProgress {
    pub node_path: String,
    pub group_name: String,
    pub have: usize,
    pub need: usize,
}

pub struct Ceremony {
    id: String,
    plan: KeyFragmentationPlan,
    status: CeremonyStatus,
    submissions: Vec<Submission>,
    events: Vec<CeremonyEvent>,
}

impl Ceremony {
    /// Opens a fresh ceremony against a plan.
    pub fn open<R: RngCore + CryptoRng>(
        plan: KeyFragmentationPlan,
        at_unix: u64,
        rng: &mut R,
    ) -> Self {
        let mut raw = [0u8; 16];
        rng.fill_bytes(&mut raw);
        let id = hex::encode(raw);
        let mut ceremony = Self {
            id,
            plan,
            status: CeremonyStatus::Open,
            submissions: Vec::new(),
            events: Vec::new(),
        };
        ceremony.record(at_unix, "open", "");
        ceremony
    }

    /// Rebuilds a ceremony from persisted state; submissions must already
    /// be validated shares (they are re-validated anyway).
    pub fn resume(
        id: String,
        plan: KeyFragmentationPlan,
        status: CeremonyStatus,
        submissions: Vec<Submission>,
        events: Vec<CeremonyEvent>,
    ) -> Result<Self, CeremonyError> {
        let mut ceremony = Self {
            id,
            plan,
            status,
            submissions: Vec::new(),
            events,
        };
        if matches!(status, CeremonyStatus::Open | CeremonyStatus::Satisfiable) {
            ceremony.status = CeremonyStatus::Open;
            for s in submissions {
                ceremony.accept(s)?;
            }
        } else {
            ceremony.submissions = submissions;
        }
        Ok(ceremony)
    }

    fn record(&mut self, at_unix: u64, kind: &str, detail: &str) {
        self.events.push(CeremonyEvent {
            at_unix,
            kind: kind.to_string(),
            detail: detail.to_string(),
        });
    }

    fn accept(&mut self, submission: Submission) -> Result<(), CeremonyError> {
        self.plan
            .validate_share(&submission.participant, &submission.share)?;
        if self
            .submissions
            .iter()
            .any(|s| s.participant == submission.participant && s.node_path == submission.node_path)
        {
            return Err(CeremonyError::DuplicateSubmission {
                participant: submission.participant,
                path: submission.node_path,
            });
        }
        self.submissions.push(submission);
        self.reevaluate();
        Ok(())
    }

    fn reevaluate(&mut self) {
        let submitted: Vec<(String, String)> = self
            .submissions
            .iter()
            .map(|s| (s.participant.clone(), s.node_path.clone()))
            .collect();
        self.status = if evaluate(&self.plan.policy, &submitted).satisfied {
            CeremonyStatus::Satisfiable
        } else {
            CeremonyStatus::Open
        };
    }

    /// Validates and records one share; returns the new status.
    pub fn submit(
        &mut self,
        at_unix: u64,
        participant: &str,
        share: Share,
    ) -> Result<CeremonyStatus, CeremonyError> {
        match self.status {
            CeremonyStatus::Open | CeremonyStatus::Satisfiable => {}
            other => return Err(CeremonyError::SubmissionsClosed(other.as_str())),
        }
        let node_path = share.policy_path.clone();
        self.accept(Submission {
            participant: participant.to_string(),
            node_path: node_path.clone(),
            share,
            at_unix,
        })?;
        self.record(at_unix, "submit", &format!("{participant} {node_path}"));
        Ok(self.status)
    }

    /// Reconstructs the key. Requires Satisfiable; terminal on success.
    pub fn finish(&mut self, at_unix: u64) -> Result<KeyHandle, CeremonyError> {
        match self.status {
            CeremonyStatus::Satisfiable => {}
            CeremonyStatus::Open => return Err(CeremonyError::NotSatisfiable),
            other => return Err(CeremonyError::WrongStateForFinish(other.as_str())),
        }
        let shares: Vec<Share> = self.submissions.iter().map(|s| s.share.clone()).collect();
        let key = reconstruct_key(&self.plan, &shares)?;
        self.status = CeremonyStatus::Reconstructed;
        self.record(at_unix, "finish", "");
        Ok(KeyHandle::new(key))
    }

    /// Cancels the ceremony from any state.
    pub fn abort(&mut self, at_unix: u64) {
        self.status = CeremonyStatus::Aborted;
        self.record(at_unix, "abort", "");
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> CeremonyStatus {
        self.status
    }

    pub fn plan(&self) -> &KeyFragmentationPlan {
        &self.plan
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn events(&self) -> &[CeremonyEvent] {
        &self.events
    }

    /// Share counts per group leaf against their thresholds.
    pub fn progress(&self) -> Vec<LeafProgress> {
        self.plan
            .policy
            .leaves()
            .into_iter()
            .map(|(path, node)| {
                let PolicyNode::GroupLeaf { group_name, k, .. } = node else {
                    unreachable!("leaves() yields only group leaves");
                };
                let have = self
                    .submissions
                    .iter()
                    .filter(|s| s.node_path == path)
                    .count();
                LeafProgress {
                    node_path: path,
                    group_name: group_name.clone(),
                    have,
                    need: *k as usize,
                }
            })
            .collect()
    }
}
