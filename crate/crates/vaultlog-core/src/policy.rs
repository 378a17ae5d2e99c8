//! Access-policy trees and key fragmentation.
//!
//! A policy tree says who may jointly reconstruct the private key. Internal
//! nodes are `And` (every child required, realized as XOR parts) or
//! `Threshold(j, m)` (any j of m children suffice, realized as Shamir
//! sharing across children). Leaves are named groups whose members hold a
//! per-group (k_g, n_g) Shamir sharing of the group's part.
//!
//! `fragment_key` walks the tree top-down, splitting the key at each node
//! and issuing exactly one share per group member. `reconstruct_key`
//! mirrors it bottom-up. `evaluate` answers, without touching key
//! material, whether a set of submissions satisfies the policy.
//!
//! Node paths are slash-delimited positions ("/", "/00", "/01/00", ...)
//! with zero-padded two-digit segments, so lexicographic order equals
//! structural order everywhere the paths are serialized.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::canonical::{Doc, DocError};
use crate::field::PrimeField;
use crate::sharing::{
    shamir_reconstruct, shamir_split_chunks, shamir_split_with_context, Scheme, SecretValue, Share,
    SharingError, SplitContext, ThresholdParams,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy node {path}: {reason}")]
    InvalidPolicy { path: String, reason: String },
    #[error("participant id {0:?} appears in more than one group")]
    DuplicateMember(String),
    #[error("policy not satisfied at {path}: have {have} of {need} required parts")]
    PolicyUnsatisfied {
        path: String,
        have: usize,
        need: usize,
    },
    #[error("no policy node at path {0}")]
    UnknownLeaf(String),
    #[error("share does not belong to this plan's share set")]
    WrongShareSet,
    #[error("share at {path} does not match the plan (index, parameters, or length)")]
    ShareMismatch { path: String },
    #[error("inconsistent reconstruction at {path}: redundant shares disagree")]
    InconsistentReconstruction { path: String },
    #[error("policy file: {0}")]
    PolicyFile(String),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Doc(#[from] DocError),
}

/// Two-digit path segments keep serialized keys sorted structurally.
const MAX_CHILDREN: usize = 99;

pub fn child_path(parent: &str, index: usize) -> String {
    if parent == "/" {
        format!("/{index:02}")
    } else {
        format!("{parent}/{index:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyNode {
    /// Every child is required.
    And { children: Vec<PolicyNode> },
    /// Any `j` of the children suffice.
    Threshold { j: u32, children: Vec<PolicyNode> },
    /// A named group of members holding a (k, |members|) Shamir sharing.
    GroupLeaf {
        group_name: String,
        k: u32,
        members: Vec<String>,
    },
}

impl PolicyNode {
    pub fn and(children: Vec<PolicyNode>) -> Self {
        PolicyNode::And { children }
    }

    pub fn threshold(j: u32, children: Vec<PolicyNode>) -> Self {
        PolicyNode::Threshold { j, children }
    }

    pub fn group(group_name: &str, k: u32, members: &[&str]) -> Self {
        PolicyNode::GroupLeaf {
            group_name: group_name.to_string(),
            k,
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }

    pub fn children(&self) -> &[PolicyNode] {
        match self {
            PolicyNode::And { children } | PolicyNode::Threshold { children, .. } => children,
            PolicyNode::GroupLeaf { .. } => &[],
        }
    }

    /// Validates the whole tree: arity bounds, threshold ranges, group
    /// sizes, and tree-wide member uniqueness.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut seen_members = BTreeSet::new();
        self.validate_at("/", &mut seen_members)
    }

    fn validate_at(
        &self,
        path: &str,
        seen_members: &mut BTreeSet<String>,
    ) -> Result<(), PolicyError> {
        let invalid = |reason: &str| PolicyError::InvalidPolicy {
            path: path.to_string(),
            reason: reason.to_string(),
        };
        match self {
            PolicyNode::And { children } => {
                if children.is_empty() {
                    return Err(invalid("and node needs at least one child"));
                }
                if children.len() > MAX_CHILDREN {
                    return Err(invalid("too many children"));
                }
                for (i, child) in children.iter().enumerate() {
                    child.validate_at(&child_path(path, i), seen_members)?;
                }
                Ok(())
            }
            PolicyNode::Threshold { j, children } => {
                if children.is_empty() {
                    return Err(invalid("threshold node needs at least one child"));
                }
                if children.len() > MAX_CHILDREN {
                    return Err(invalid("too many children"));
                }
                if *j == 0 || *j as usize > children.len() {
                    return Err(invalid("threshold j must satisfy 1 <= j <= children"));
                }
                for (i, child) in children.iter().enumerate() {
                    child.validate_at(&child_path(path, i), seen_members)?;
                }
                Ok(())
            }
            PolicyNode::GroupLeaf {
                group_name,
                k,
                members,
            } => {
                if group_name.is_empty() {
                    return Err(invalid("group name must not be empty"));
                }
                if members.is_empty() {
                    return Err(invalid("group needs at least one member"));
                }
                if *k == 0 || *k as usize > members.len() {
                    return Err(invalid("group k must satisfy 1 <= k <= members"));
                }
                for member in members {
                    if member.is_empty() {
                        return Err(invalid("member id must not be empty"));
                    }
                    if !seen_members.insert(member.clone()) {
                        return Err(PolicyError::DuplicateMember(member.clone()));
                    }
                }
                Ok(())
            }
        }
    }

    /// All (path, node) pairs in depth-first order, root first.
    pub fn walk(&self) -> Vec<(String, &PolicyNode)> {
        let mut out = Vec::new();
        fn recurse<'a>(
            node: &'a PolicyNode,
            path: String,
            out: &mut Vec<(String, &'a PolicyNode)>,
        ) {
            out.push((path.clone(), node));
            for (i, child) in node.children().iter().enumerate() {
                recurse(child, child_path(&path, i), out);
            }
        }
        recurse(self, "/".to_string(), &mut out);
        out
    }

    /// The node at a given path, if any.
    pub fn node_at(&self, path: &str) -> Option<&PolicyNode> {
        if path == "/" {
            return Some(self);
        }
        let mut node = self;
        for segment in path.trim_start_matches('/').split('/') {
            let index: usize = segment.parse().ok()?;
            if segment.len() != 2 {
                return None;
            }
            node = node.children().get(index)?;
        }
        Some(node)
    }

    /// Leaf paths with their groups, in structural order.
    pub fn leaves(&self) -> Vec<(String, &PolicyNode)> {
        self.walk()
            .into_iter()
            .filter(|(_, node)| matches!(node, PolicyNode::GroupLeaf { .. }))
            .collect()
    }

    fn write_into(&self, doc: &mut Doc) {
        for (path, node) in self.walk() {
            let prefix = format!("node.{path}");
            match node {
                PolicyNode::And { .. } => {
                    doc.set(format!("{prefix}.kind"), "and");
                }
                PolicyNode::Threshold { j, .. } => {
                    doc.set(format!("{prefix}.kind"), "threshold");
                    doc.set(format!("{prefix}.j"), j.to_string());
                }
                PolicyNode::GroupLeaf {
                    group_name,
                    k,
                    members,
                } => {
                    doc.set(format!("{prefix}.kind"), "group");
                    doc.set(format!("{prefix}.group_name"), group_name.clone());
                    doc.set(format!("{prefix}.k"), k.to_string());
                    doc.set(format!("{prefix}.members"), members.join(","));
                }
            }
        }
    }

    fn read_from(doc: &Doc) -> Result<Self, PolicyError> {
        // Collect per-path attribute maps from "node.<path>.<attr>" keys.
        let mut nodes: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (key, value) in doc.iter() {
            let Some(rest) = key.strip_prefix("node.") else {
                continue;
            };
            let Some((path, attr)) = rest.rsplit_once('.') else {
                return Err(PolicyError::PolicyFile(format!(
                    "malformed node key {key:?}"
                )));
            };
            nodes
                .entry(path.to_string())
                .or_default()
                .insert(attr.to_string(), value.to_string());
        }
        if nodes.is_empty() {
            return Err(PolicyError::PolicyFile("no policy nodes".to_string()));
        }

        fn build(
            path: &str,
            nodes: &BTreeMap<String, BTreeMap<String, String>>,
        ) -> Result<PolicyNode, PolicyError> {
            let attrs = nodes
                .get(path)
                .ok_or_else(|| PolicyError::PolicyFile(format!("missing node at {path}")))?;
            let kind = attrs
                .get("kind")
                .ok_or_else(|| PolicyError::PolicyFile(format!("node {path} has no kind")))?;
            let known: &[&str] = match kind.as_str() {
                "and" => &["kind"],
                "threshold" => &["kind", "j"],
                "group" => &["kind", "group_name", "k", "members"],
                other => {
                    return Err(PolicyError::PolicyFile(format!(
                        "node {path} has unknown kind {other:?}"
                    )))
                }
            };
            if let Some(extra) = attrs.keys().find(|a| !known.contains(&a.as_str())) {
                return Err(PolicyError::PolicyFile(format!(
                    "node {path} has unexpected attribute {extra:?}"
                )));
            }
            let parse_u32 = |attr: &str| -> Result<u32, PolicyError> {
                attrs
                    .get(attr)
                    .ok_or_else(|| PolicyError::PolicyFile(format!("node {path} missing {attr}")))?
                    .parse::<u32>()
                    .map_err(|_| {
                        PolicyError::PolicyFile(format!("node {path}: {attr} is not an integer"))
                    })
            };
            match kind.as_str() {
                "group" => Ok(PolicyNode::GroupLeaf {
                    group_name: attrs
                        .get("group_name")
                        .ok_or_else(|| {
                            PolicyError::PolicyFile(format!("node {path} missing group_name"))
                        })?
                        .clone(),
                    k: parse_u32("k")?,
                    members: attrs
                        .get("members")
                        .ok_or_else(|| {
                            PolicyError::PolicyFile(format!("node {path} missing members"))
                        })?
                        .split(',')
                        .map(str::to_string)
                        .collect(),
                }),
                kind => {
                    let mut children = Vec::new();
                    loop {
                        let child = child_path(path, children.len());
                        if !nodes.contains_key(&child) {
                            break;
                        }
                        children.push(build(&child, nodes)?);
                    }
                    if kind == "and" {
                        Ok(PolicyNode::And { children })
                    } else {
                        Ok(PolicyNode::Threshold {
                            j: parse_u32("j")?,
                            children,
                        })
                    }
                }
            }
        }

        let root = build("/", &nodes)?;
        // Non-contiguous children and stray paths both surface here.
        let reached: BTreeSet<String> = root.walk().into_iter().map(|(p, _)| p).collect();
        if let Some(orphan) = nodes.keys().find(|p| !reached.contains(*p)) {
            return Err(PolicyError::PolicyFile(format!(
                "node {orphan} is not reachable from the root"
            )));
        }
        root.validate()?;
        Ok(root)
    }

    /// Canonical policy file bytes, digest included.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        self.write_into(&mut doc);
        doc.to_bytes_with_digest()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let doc = Doc::parse_with_digest(bytes)?;
        Self::read_from(&doc)
    }

    /// Parses a policy file: the digest line is verified when present and
    /// optional otherwise, so hand-written policies load too.
    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let doc = Doc::parse(bytes)?;
        let doc = if doc.get(crate::canonical::DIGEST_KEY).is_some() {
            Doc::parse_with_digest(bytes)?
        } else {
            doc
        };
        Self::read_from(&doc)
    }
}

/// Where one participant's share lives in a plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub share_id: String,
    pub policy_path: String,
    pub group_name: String,
}

/// A generated fragmentation of one private key: the policy, the sharing
/// field, and enough metadata to validate incoming shares. Holds no key
/// material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyFragmentationPlan {
    pub policy: PolicyNode,
    pub share_set_id: [u8; 16],
    pub field: PrimeField,
    pub key_len: u64,
}

/// One issued share, addressed to a group member.
#[derive(Debug, Clone)]
pub struct IssuedShare {
    pub participant: String,
    pub group_name: String,
    pub share: Share,
}

fn xor_parts<R: RngCore + CryptoRng>(secret: &[u8], parts: usize, rng: &mut R) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(parts);
    let mut last = secret.to_vec();
    for _ in 1..parts {
        let mut pad = vec![0u8; secret.len()];
        rng.fill_bytes(&mut pad);
        for (acc, b) in last.iter_mut().zip(&pad) {
            *acc ^= b;
        }
        out.push(pad);
    }
    out.push(last);
    out
}

/// Fixed-width encoding of one Shamir evaluation vector, used as the child
/// secret under a Threshold node.
fn encode_threshold_part(field: &PrimeField, values: &[BigUint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * field.byte_len());
    for value in values {
        out.extend_from_slice(&field.encode_value(value));
    }
    out
}

fn decode_threshold_part(field: &PrimeField, part: &[u8]) -> Result<Vec<BigUint>, PolicyError> {
    let width = field.byte_len();
    if part.is_empty() || !part.len().is_multiple_of(width) {
        return Err(PolicyError::PolicyFile(
            "threshold part has invalid length".to_string(),
        ));
    }
    Ok(part.chunks(width).map(BigUint::from_bytes_be).collect())
}

/// Splits a private key along the policy tree and issues one share per
/// group member. The plan itself contains no key material.
pub fn fragment_key<R: RngCore + CryptoRng>(
    private_key: &SecretValue,
    policy: &PolicyNode,
    field: &PrimeField,
    rng: &mut R,
) -> Result<(KeyFragmentationPlan, Vec<IssuedShare>), PolicyError> {
    policy.validate()?;
    if private_key.is_empty() {
        return Err(SharingError::EmptySecret.into());
    }
    let mut set_id = [0u8; 16];
    rng.fill_bytes(&mut set_id);

    let mut issued = Vec::new();
    fragment_node(
        policy,
        "/",
        private_key.as_bytes(),
        &set_id,
        field,
        rng,
        &mut issued,
    )?;

    Ok((
        KeyFragmentationPlan {
            policy: policy.clone(),
            share_set_id: set_id,
            field: field.clone(),
            key_len: private_key.len() as u64,
        },
        issued,
    ))
}

fn fragment_node<R: RngCore + CryptoRng>(
    node: &PolicyNode,
    path: &str,
    secret: &[u8],
    set_id: &[u8; 16],
    field: &PrimeField,
    rng: &mut R,
    issued: &mut Vec<IssuedShare>,
) -> Result<(), PolicyError> {
    match node {
        PolicyNode::And { children } => {
            let parts = xor_parts(secret, children.len(), rng);
            for (i, (child, part)) in children.iter().zip(parts).enumerate() {
                fragment_node(
                    child,
                    &child_path(path, i),
                    &part,
                    set_id,
                    field,
                    rng,
                    issued,
                )?;
            }
            Ok(())
        }
        PolicyNode::Threshold { j, children } => {
            let m = children.len() as u32;
            let params = ThresholdParams::new(*j, m)?;
            let chunks = SecretValue::new(secret.to_vec()).chunks(field)?;
            let per_child = shamir_split_chunks(&chunks, params, field, rng)?;
            for (i, (child, values)) in children.iter().zip(per_child).enumerate() {
                let part = encode_threshold_part(field, &values);
                fragment_node(
                    child,
                    &child_path(path, i),
                    &part,
                    set_id,
                    field,
                    rng,
                    issued,
                )?;
            }
            Ok(())
        }
        PolicyNode::GroupLeaf {
            group_name,
            k,
            members,
        } => {
            let params = ThresholdParams::new(*k, members.len() as u32)?;
            let ctx = SplitContext {
                set_id: *set_id,
                policy_path: path.to_string(),
            };
            let shares = shamir_split_with_context(
                &SecretValue::new(secret.to_vec()),
                params,
                field,
                rng,
                &ctx,
            )?;
            for (member, share) in members.iter().zip(shares) {
                issued.push(IssuedShare {
                    participant: member.clone(),
                    group_name: group_name.clone(),
                    share,
                });
            }
            Ok(())
        }
    }
}

impl KeyFragmentationPlan {
    /// Expected byte length of the secret handled at a given node. The root
    /// carries the key itself; And children inherit their parent's length;
    /// Threshold children carry fixed-width-encoded evaluation vectors.
    pub fn expected_len_at(&self, path: &str) -> Result<u64, PolicyError> {
        let mut len = self.key_len as usize;
        let mut node = &self.policy;
        if path != "/" {
            for segment in path.trim_start_matches('/').split('/') {
                let index: usize = segment
                    .parse()
                    .map_err(|_| PolicyError::UnknownLeaf(path.to_string()))?;
                if segment.len() != 2 {
                    return Err(PolicyError::UnknownLeaf(path.to_string()));
                }
                match node {
                    PolicyNode::And { children } => {
                        node = children
                            .get(index)
                            .ok_or_else(|| PolicyError::UnknownLeaf(path.to_string()))?;
                    }
                    PolicyNode::Threshold { children, .. } => {
                        let chunk_count = len.div_ceil(self.field.chunk_width().max(1));
                        len = chunk_count * self.field.byte_len();
                        node = children
                            .get(index)
                            .ok_or_else(|| PolicyError::UnknownLeaf(path.to_string()))?;
                    }
                    PolicyNode::GroupLeaf { .. } => {
                        return Err(PolicyError::UnknownLeaf(path.to_string()))
                    }
                }
            }
        }
        Ok(len as u64)
    }

    /// Mapping participant id -> share location, derived from the policy
    /// and the share-set id (share ids are deterministic).
    pub fn manifest(&self) -> BTreeMap<String, ManifestEntry> {
        let mut out = BTreeMap::new();
        for (path, node) in self.policy.leaves() {
            let PolicyNode::GroupLeaf {
                group_name,
                members,
                ..
            } = node
            else {
                continue;
            };
            for (i, member) in members.iter().enumerate() {
                out.insert(
                    member.clone(),
                    ManifestEntry {
                        share_id: crate::sharing::derive_share_id(
                            Scheme::Shamir,
                            &self.share_set_id,
                            &path,
                            (i + 1) as u32,
                        ),
                        policy_path: path.clone(),
                        group_name: group_name.clone(),
                    },
                );
            }
        }
        out
    }

    /// Checks that a share is one this plan issued: right share set, a real
    /// leaf, the member's own index, and matching parameters.
    pub fn validate_share(&self, participant: &str, share: &Share) -> Result<(), PolicyError> {
        if share.share_set_id != self.share_set_id {
            return Err(PolicyError::WrongShareSet);
        }
        let mismatch = || PolicyError::ShareMismatch {
            path: share.policy_path.clone(),
        };
        let node = self
            .policy
            .node_at(&share.policy_path)
            .ok_or_else(|| PolicyError::UnknownLeaf(share.policy_path.clone()))?;
        let PolicyNode::GroupLeaf { k, members, .. } = node else {
            return Err(PolicyError::UnknownLeaf(share.policy_path.clone()));
        };
        let position = members
            .iter()
            .position(|m| m == participant)
            .ok_or_else(mismatch)?;
        let expected_params = ThresholdParams::new(*k, members.len() as u32)?;
        if share.scheme != Scheme::Shamir
            || share.participant_index != (position + 1) as u32
            || share.params != expected_params
            || share.field.as_ref() != Some(&self.field)
            || share.secret_len != self.expected_len_at(&share.policy_path)?
        {
            return Err(mismatch());
        }
        Ok(())
    }

    /// Embeds the plan into a canonical document under a key prefix.
    pub fn write_into(&self, doc: &mut Doc) {
        doc.set("plan.field_p", self.field.modulus().to_string());
        doc.set("plan.key_len", self.key_len.to_string());
        doc.set("plan.share_set_id", hex::encode(self.share_set_id));
        self.policy.write_into(doc);
    }

    pub fn read_from(doc: &Doc) -> Result<Self, PolicyError> {
        let p = doc
            .require("plan.field_p")?
            .parse::<BigUint>()
            .map_err(|_| PolicyError::PolicyFile("plan.field_p is not an integer".to_string()))?;
        let field = PrimeField::new(p).map_err(|e| PolicyError::Sharing(SharingError::Field(e)))?;
        let key_len = doc.require_u64("plan.key_len")?;
        let set_raw = hex::decode(doc.require("plan.share_set_id")?)
            .map_err(|_| PolicyError::PolicyFile("plan.share_set_id is not hex".to_string()))?;
        let share_set_id: [u8; 16] = set_raw.try_into().map_err(|_| {
            PolicyError::PolicyFile("plan.share_set_id must be 16 bytes".to_string())
        })?;
        let policy = PolicyNode::read_from(doc)?;
        Ok(Self {
            policy,
            share_set_id,
            field,
            key_len,
        })
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        self.write_into(&mut doc);
        doc.to_bytes_with_digest()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let doc = Doc::parse_with_digest(bytes)?;
        Self::read_from(&doc)
    }
}

/// Result of a policy evaluation over submissions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub satisfied: bool,
    /// Submissions that referenced no known leaf or no known member; they
    /// never count toward satisfaction.
    pub unknown: usize,
}

/// Decides whether `(participant, node_path)` submissions satisfy the
/// policy. Pure and order-independent; duplicates collapse.
pub fn evaluate(policy: &PolicyNode, submitted: &[(String, String)]) -> Evaluation {
    let mut per_leaf: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut unknown = 0usize;
    for (participant, path) in submitted {
        let recognized = match policy.node_at(path) {
            Some(PolicyNode::GroupLeaf { members, .. }) => members.iter().any(|m| m == participant),
            _ => false,
        };
        if recognized {
            per_leaf
                .entry(path.clone())
                .or_default()
                .insert(participant);
        } else {
            unknown += 1;
        }
    }

    fn satisfied(
        node: &PolicyNode,
        path: &str,
        per_leaf: &BTreeMap<String, BTreeSet<&str>>,
    ) -> bool {
        match node {
            PolicyNode::And { children } => children
                .iter()
                .enumerate()
                .all(|(i, c)| satisfied(c, &child_path(path, i), per_leaf)),
            PolicyNode::Threshold { j, children } => {
                let hits = children
                    .iter()
                    .enumerate()
                    .filter(|(i, c)| satisfied(c, &child_path(path, *i), per_leaf))
                    .count();
                hits >= *j as usize
            }
            PolicyNode::GroupLeaf { k, .. } => per_leaf
                .get(path)
                .map(|present| present.len() >= *k as usize)
                .unwrap_or(false),
        }
    }

    Evaluation {
        satisfied: satisfied(policy, "/", &per_leaf),
        unknown,
    }
}

/// Reconstructs the private key from submitted shares, mirroring
/// `fragment_key` bottom-up. Shares must already be digest-verified (the
/// canonical parser enforces that); beyond the required quorum, redundant
/// shares are cross-checked and any disagreement is an error rather than a
/// silently wrong key.
pub fn reconstruct_key(
    plan: &KeyFragmentationPlan,
    submitted: &[Share],
) -> Result<SecretValue, PolicyError> {
    for share in submitted {
        if share.share_set_id != plan.share_set_id {
            return Err(PolicyError::WrongShareSet);
        }
    }
    let mut by_path: BTreeMap<&str, Vec<&Share>> = BTreeMap::new();
    for share in submitted {
        by_path
            .entry(share.policy_path.as_str())
            .or_default()
            .push(share);
    }
    let key = reconstruct_node(&plan.policy, "/", plan, &by_path)?;
    if key.len() as u64 != plan.key_len {
        return Err(PolicyError::InconsistentReconstruction {
            path: "/".to_string(),
        });
    }
    Ok(key)
}

fn reconstruct_node(
    node: &PolicyNode,
    path: &str,
    plan: &KeyFragmentationPlan,
    by_path: &BTreeMap<&str, Vec<&Share>>,
) -> Result<SecretValue, PolicyError> {
    match node {
        PolicyNode::And { children } => {
            let mut acc: Option<Vec<u8>> = None;
            for (i, child) in children.iter().enumerate() {
                let part = reconstruct_node(child, &child_path(path, i), plan, by_path)?;
                match &mut acc {
                    None => acc = Some(part.as_bytes().to_vec()),
                    Some(acc) => {
                        if acc.len() != part.len() {
                            return Err(PolicyError::InconsistentReconstruction {
                                path: path.to_string(),
                            });
                        }
                        for (a, b) in acc.iter_mut().zip(part.as_bytes()) {
                            *a ^= b;
                        }
                    }
                }
            }
            Ok(SecretValue::new(
                acc.expect("validated: at least one child"),
            ))
        }
        PolicyNode::Threshold { j, children } => {
            // Recover each child part we can; child x-coordinate is its
            // position + 1, matching the split. An unsatisfied child is
            // fine as long as j others come through.
            let mut points: Vec<(u32, Vec<BigUint>)> = Vec::new();
            for (i, child) in children.iter().enumerate() {
                match reconstruct_node(child, &child_path(path, i), plan, by_path) {
                    Ok(part) => {
                        points.push((
                            (i + 1) as u32,
                            decode_threshold_part(&plan.field, part.as_bytes())?,
                        ));
                    }
                    Err(PolicyError::PolicyUnsatisfied { .. }) => {}
                    Err(other) => return Err(other),
                }
            }
            let need = *j as usize;
            if points.len() < need {
                return Err(PolicyError::PolicyUnsatisfied {
                    path: path.to_string(),
                    have: points.len(),
                    need,
                });
            }
            let expected_len = plan.expected_len_at(path)? as usize;
            let chunk_count = expected_len.div_ceil(plan.field.chunk_width().max(1));
            if points.iter().any(|(_, values)| values.len() != chunk_count) {
                return Err(PolicyError::InconsistentReconstruction {
                    path: path.to_string(),
                });
            }
            let reconstruct_from = |selection: &[(u32, Vec<BigUint>)]| {
                let quorum: Vec<(u32, &[BigUint])> = selection
                    .iter()
                    .map(|(x, values)| (*x, values.as_slice()))
                    .collect();
                crate::sharing::shamir_reconstruct_chunks(&quorum, &plan.field, chunk_count)
            };
            let base = reconstruct_from(&points[..need])?;
            for extra in &points[need..] {
                let mut alternate: Vec<(u32, Vec<BigUint>)> = points[..need - 1].to_vec();
                alternate.push(extra.clone());
                if reconstruct_from(&alternate)? != base {
                    return Err(PolicyError::InconsistentReconstruction {
                        path: path.to_string(),
                    });
                }
            }
            Ok(SecretValue::from_chunks(
                &base,
                expected_len as u64,
                &plan.field,
            )?)
        }
        PolicyNode::GroupLeaf { k, members, .. } => {
            let expected_len = plan.expected_len_at(path)?;
            let mut shares: Vec<&Share> = by_path.get(path).cloned().unwrap_or_default();
            shares.sort_by_key(|s| s.participant_index);
            // Identical duplicates collapse; same index with different
            // payload is corruption.
            for pair in shares.windows(2) {
                if pair[0].participant_index == pair[1].participant_index && pair[0] != pair[1] {
                    return Err(PolicyError::InconsistentReconstruction {
                        path: path.to_string(),
                    });
                }
            }
            shares.dedup_by(|a, b| a == b);
            for share in &shares {
                if share.scheme != Scheme::Shamir
                    || share.participant_index as usize > members.len()
                    || share.field.as_ref() != Some(&plan.field)
                    || share.secret_len != expected_len
                {
                    return Err(PolicyError::ShareMismatch {
                        path: path.to_string(),
                    });
                }
            }
            let need = *k as usize;
            if shares.len() < need {
                return Err(PolicyError::PolicyUnsatisfied {
                    path: path.to_string(),
                    have: shares.len(),
                    need,
                });
            }
            let reconstruct_from = |selection: &[&Share]| {
                let owned: Vec<Share> = selection.iter().map(|s| (*s).clone()).collect();
                shamir_reconstruct(&owned)
            };
            let base = reconstruct_from(&shares[..need])?;
            for extra in &shares[need..] {
                let mut alternate: Vec<&Share> = shares[..need - 1].to_vec();
                alternate.push(extra);
                if reconstruct_from(&alternate)? != base {
                    return Err(PolicyError::InconsistentReconstruction {
                        path: path.to_string(),
                    });
                }
            }
            Ok(base)
        }
    }
}
