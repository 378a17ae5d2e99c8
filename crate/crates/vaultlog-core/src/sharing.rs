//! Threshold secret sharing over byte-string secrets.
//!
//! Two (k, n) schemes share one interface: Shamir's polynomial scheme (the
//! secret is the constant term, shares are evaluations at x = 1..n) and
//! Blakley's hyperplane scheme (the secret is the first coordinate of a
//! point in k-space, shares are hyperplanes through it). An all-or-nothing
//! XOR splitter covers the AND case where every part is required.
//!
//! Secrets are opaque byte strings. They are cut into fixed-width chunks
//! that each fit one field element; every chunk is shared with independent
//! randomness, so the field stays fixed while secrets may be any length.
//! Under the production field GF(2^521 - 1) the chunk width is 64 bytes.
//!
//! Shares from one split are bound together by a random 16-byte share-set
//! identifier, and each share file carries a SHA-256 integrity digest over
//! its canonical serialization.

use num_bigint::BigUint;
use num_traits::Zero;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{Doc, DocError};
use crate::field::{lagrange_at_zero, solve_linear_system, FieldElement, FieldError, PrimeField};

/// Bounded attempts when resampling Blakley hyperplanes for nonsingularity.
const BLAKLEY_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SharingError {
    #[error("invalid threshold parameters: k={k}, n={n}")]
    InvalidParams { k: u32, n: u32 },
    #[error("secret must not be empty")]
    EmptySecret,
    #[error("field too small: no secret chunk fits below the modulus")]
    FieldTooSmall,
    #[error("secret chunk is not below the field modulus")]
    ChunkOutOfRange,
    #[error("insufficient shares: got {got}, need {needed}")]
    InsufficientShares { got: usize, needed: u32 },
    #[error("shares come from different splits")]
    MixedShareSets,
    #[error("duplicate participant index {0}")]
    DuplicateIndex(u32),
    #[error("participant index {index} exceeds n={n}")]
    IndexOutOfRange { index: u32, n: u32 },
    #[error("shares use different schemes")]
    MixedSchemes,
    #[error("all {expected} parts are required, got {got}")]
    AllPartsRequired { expected: u32, got: usize },
    #[error("hyperplane system is singular: corrupt or mismatched shares")]
    SingularSystem,
    #[error("could not sample nonsingular hyperplanes after {BLAKLEY_MAX_ATTEMPTS} attempts")]
    ResamplingFailed,
    #[error("share file: {0}")]
    ShareFile(String),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// (k, n): k shares required out of n issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdParams {
    k: u32,
    n: u32,
}

impl ThresholdParams {
    pub fn new(k: u32, n: u32) -> Result<Self, SharingError> {
        if k == 0 || k > n {
            return Err(SharingError::InvalidParams { k, n });
        }
        Ok(Self { k, n })
    }

    /// Default sizing: choose k first, issue n = 2k - 1 pieces, so a
    /// strict majority reconstructs and a minority learns nothing.
    pub fn majority_of(k: u32) -> Result<Self, SharingError> {
        if k == 0 {
            return Err(SharingError::InvalidParams { k, n: 0 });
        }
        Ok(Self { k, n: 2 * k - 1 })
    }

    pub fn required(&self) -> u32 {
        self.k
    }

    pub fn issued(&self) -> u32 {
        self.n
    }
}

/// Volatile writes so the wipe is not optimized away.
pub(crate) fn wipe(bytes: &mut [u8]) {
    for byte in bytes.iter_mut() {
        unsafe { std::ptr::write_volatile(byte, 0) };
    }
    std::sync::atomic::compiler_fence(std::sync::atomic::Ordering::SeqCst);
}

/// An opaque byte-string secret.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretValue {
    bytes: Vec<u8>,
}

impl std::fmt::Debug for SecretValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print secret bytes.
        write!(f, "SecretValue({} bytes)", self.bytes.len())
    }
}

impl Drop for SecretValue {
    fn drop(&mut self) {
        wipe(&mut self.bytes);
    }
}

impl SecretValue {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Cuts the bytes into big-endian integer chunks, each below p. The
    /// final chunk may be shorter; the byte length is carried alongside the
    /// shares so the round trip is lossless.
    pub fn chunks(&self, field: &PrimeField) -> Result<Vec<BigUint>, SharingError> {
        if self.bytes.is_empty() {
            return Err(SharingError::EmptySecret);
        }
        let width = field.chunk_width();
        if width == 0 {
            return Err(SharingError::FieldTooSmall);
        }
        Ok(self
            .bytes
            .chunks(width)
            .map(BigUint::from_bytes_be)
            .collect())
    }

    /// Inverse of [`SecretValue::chunks`] given the original byte length.
    pub fn from_chunks(
        chunks: &[BigUint],
        total_len: u64,
        field: &PrimeField,
    ) -> Result<Self, SharingError> {
        let width = field.chunk_width();
        if width == 0 {
            return Err(SharingError::FieldTooSmall);
        }
        let total_len = total_len as usize;
        if total_len == 0 || chunks.len() != total_len.div_ceil(width) {
            return Err(SharingError::ShareFile(
                "chunk count does not match secret length".to_string(),
            ));
        }
        let mut bytes = Vec::with_capacity(total_len);
        for (i, chunk) in chunks.iter().enumerate() {
            let chunk_len = if i + 1 == chunks.len() {
                total_len - width * (chunks.len() - 1)
            } else {
                width
            };
            // to_bytes_be() renders zero as [0], so treat zero as empty.
            let raw = if chunk.is_zero() {
                Vec::new()
            } else {
                chunk.to_bytes_be()
            };
            if raw.len() > chunk_len {
                return Err(SharingError::ChunkOutOfRange);
            }
            bytes.resize(bytes.len() + chunk_len - raw.len(), 0);
            bytes.extend_from_slice(&raw);
        }
        Ok(Self::new(bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Shamir,
    Blakley,
    AndPart,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Shamir => "shamir",
            Scheme::Blakley => "blakley",
            Scheme::AndPart => "and-part",
        }
    }

    fn parse(s: &str) -> Result<Self, SharingError> {
        match s {
            "shamir" => Ok(Scheme::Shamir),
            "blakley" => Ok(Scheme::Blakley),
            "and-part" => Ok(Scheme::AndPart),
            other => Err(SharingError::ShareFile(format!("unknown scheme {other:?}"))),
        }
    }
}

/// One hyperplane `coeffs . x = constant` of a Blakley share, per chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperplaneRow {
    pub coeffs: Vec<BigUint>,
    pub constant: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SharePayload {
    /// One polynomial evaluation q_c(i) per chunk c.
    Shamir(Vec<BigUint>),
    /// One hyperplane through the secret point per chunk.
    Blakley(Vec<HyperplaneRow>),
    /// An XOR pad of the secret's length.
    AndPart(Vec<u8>),
}

/// One participant's piece of a split secret.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub scheme: Scheme,
    pub share_set_id: [u8; 16],
    /// The sharing field; `None` for XOR parts, which are plain bytes.
    pub field: Option<PrimeField>,
    pub params: ThresholdParams,
    pub participant_index: u32,
    pub policy_path: String,
    pub share_id: String,
    pub secret_len: u64,
    pub payload: SharePayload,
}

pub(crate) fn derive_share_id(
    scheme: Scheme,
    set_id: &[u8; 16],
    policy_path: &str,
    participant_index: u32,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"vaultlog-share-id");
    hasher.update(set_id);
    hasher.update([match scheme {
        Scheme::Shamir => 1u8,
        Scheme::Blakley => 2,
        Scheme::AndPart => 3,
    }]);
    hasher.update(policy_path.as_bytes());
    hasher.update(participant_index.to_be_bytes());
    hex::encode(&hasher.finalize()[..16])
}

/// Split context used by the policy layer to bind shares to a plan.
#[derive(Debug, Clone)]
pub(crate) struct SplitContext {
    pub set_id: [u8; 16],
    pub policy_path: String,
}

impl SplitContext {
    pub(crate) fn fresh<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut set_id = [0u8; 16];
        rng.fill_bytes(&mut set_id);
        Self {
            set_id,
            policy_path: String::new(),
        }
    }
}

fn validate_chunks_below_modulus(
    chunks: &[BigUint],
    field: &PrimeField,
) -> Result<(), SharingError> {
    if chunks.iter().any(|c| c >= field.modulus()) {
        return Err(SharingError::ChunkOutOfRange);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shamir
// ---------------------------------------------------------------------------

/// Evaluation points q(1)..q(n) for one chunk, with the chunk as constant
/// term and the given higher coefficients.
fn shamir_points(
    field: &PrimeField,
    chunk: &BigUint,
    n: u32,
    higher_coeffs: &[FieldElement],
) -> Result<Vec<BigUint>, SharingError> {
    let mut coeffs = Vec::with_capacity(higher_coeffs.len() + 1);
    coeffs.push(field.element(chunk.clone()));
    coeffs.extend_from_slice(higher_coeffs);
    let poly = crate::field::Polynomial::new(coeffs)?;
    (1..=n as u64)
        .map(|x| Ok(poly.eval(&field.element_u64(x))?.value().clone()))
        .collect()
}

pub(crate) fn shamir_split_chunks<R: RngCore + CryptoRng>(
    chunks: &[BigUint],
    params: ThresholdParams,
    field: &PrimeField,
    rng: &mut R,
) -> Result<Vec<Vec<BigUint>>, SharingError> {
    validate_chunks_below_modulus(chunks, field)?;
    let mut per_share: Vec<Vec<BigUint>> =
        vec![Vec::with_capacity(chunks.len()); params.n as usize];
    for chunk in chunks {
        let higher: Vec<FieldElement> = (1..params.k).map(|_| field.random_element(rng)).collect();
        let points = shamir_points(field, chunk, params.n, &higher)?;
        for (share, y) in per_share.iter_mut().zip(points) {
            share.push(y);
        }
    }
    Ok(per_share)
}

fn assemble_shares(
    scheme: Scheme,
    ctx: &SplitContext,
    field: Option<&PrimeField>,
    params: ThresholdParams,
    secret_len: u64,
    payloads: Vec<SharePayload>,
) -> Vec<Share> {
    payloads
        .into_iter()
        .enumerate()
        .map(|(i, payload)| {
            let index = (i + 1) as u32;
            Share {
                scheme,
                share_set_id: ctx.set_id,
                field: field.cloned(),
                params,
                participant_index: index,
                policy_path: ctx.policy_path.clone(),
                share_id: derive_share_id(scheme, &ctx.set_id, &ctx.policy_path, index),
                secret_len,
                payload,
            }
        })
        .collect()
}

pub(crate) fn shamir_split_with_context<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    params: ThresholdParams,
    field: &PrimeField,
    rng: &mut R,
    ctx: &SplitContext,
) -> Result<Vec<Share>, SharingError> {
    let chunks = secret.chunks(field)?;
    let per_share = shamir_split_chunks(&chunks, params, field, rng)?;
    Ok(assemble_shares(
        Scheme::Shamir,
        ctx,
        Some(field),
        params,
        secret.len() as u64,
        per_share.into_iter().map(SharePayload::Shamir).collect(),
    ))
}

/// Shamir (k, n) split: one fresh random polynomial per chunk, constant
/// term holding the chunk, share i carrying q(i).
pub fn shamir_split<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    params: ThresholdParams,
    field: &PrimeField,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    let ctx = SplitContext::fresh(rng);
    shamir_split_with_context(secret, params, field, rng, &ctx)
}

/// Common validation for a reconstruction set; returns the k shares to use,
/// sorted by participant index.
fn select_quorum(shares: &[Share], scheme: Scheme) -> Result<Vec<&Share>, SharingError> {
    let first = match shares.first() {
        Some(s) => s,
        None => {
            return Err(SharingError::InsufficientShares { got: 0, needed: 1 });
        }
    };
    let params = first.params;
    for share in shares {
        if share.scheme != scheme {
            return Err(SharingError::MixedSchemes);
        }
        if share.share_set_id != first.share_set_id
            || share.params != params
            || share.field != first.field
            || share.secret_len != first.secret_len
            || share.policy_path != first.policy_path
        {
            return Err(SharingError::MixedShareSets);
        }
        if share.participant_index == 0 || share.participant_index > params.n {
            return Err(SharingError::IndexOutOfRange {
                index: share.participant_index,
                n: params.n,
            });
        }
    }
    let mut sorted: Vec<&Share> = shares.iter().collect();
    sorted.sort_by_key(|s| s.participant_index);
    for pair in sorted.windows(2) {
        if pair[0].participant_index == pair[1].participant_index {
            return Err(SharingError::DuplicateIndex(pair[0].participant_index));
        }
    }
    if (sorted.len() as u32) < params.k {
        return Err(SharingError::InsufficientShares {
            got: sorted.len(),
            needed: params.k,
        });
    }
    sorted.truncate(params.k as usize);
    Ok(sorted)
}

pub(crate) fn shamir_reconstruct_chunks(
    quorum: &[(u32, &[BigUint])],
    field: &PrimeField,
    chunk_count: usize,
) -> Result<Vec<BigUint>, SharingError> {
    let mut chunks = Vec::with_capacity(chunk_count);
    for c in 0..chunk_count {
        let points: Vec<(FieldElement, FieldElement)> = quorum
            .iter()
            .map(|(index, values)| {
                (
                    field.element_u64(*index as u64),
                    field.element(values[c].clone()),
                )
            })
            .collect();
        chunks.push(lagrange_at_zero(&points)?.value().clone());
    }
    Ok(chunks)
}

/// Recovers the secret as q(0) per chunk by Lagrange interpolation.
pub fn shamir_reconstruct(shares: &[Share]) -> Result<SecretValue, SharingError> {
    let quorum = select_quorum(shares, Scheme::Shamir)?;
    let field = quorum[0]
        .field
        .clone()
        .ok_or_else(|| SharingError::ShareFile("shamir share without field".to_string()))?;
    let chunk_count = (quorum[0].secret_len as usize).div_ceil(field.chunk_width().max(1));
    let values: Vec<(u32, &[BigUint])> = quorum
        .iter()
        .map(|s| match &s.payload {
            SharePayload::Shamir(v) if v.len() == chunk_count => {
                Ok((s.participant_index, v.as_slice()))
            }
            SharePayload::Shamir(_) => Err(SharingError::ShareFile(
                "payload chunk count mismatch".to_string(),
            )),
            _ => Err(SharingError::MixedSchemes),
        })
        .collect::<Result<_, _>>()?;
    let chunks = shamir_reconstruct_chunks(&values, &field, chunk_count)?;
    SecretValue::from_chunks(&chunks, quorum[0].secret_len, &field)
}

// ---------------------------------------------------------------------------
// Blakley
// ---------------------------------------------------------------------------

fn subset_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recurse(
        start: usize,
        n: usize,
        k: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(i + 1, n, k, current, out);
            current.pop();
        }
    }
    recurse(0, n, k, &mut current, &mut out);
    out
}

fn every_subset_nonsingular(rows: &[Vec<FieldElement>], k: usize) -> Result<bool, SharingError> {
    for subset in subset_indices(rows.len(), k) {
        let matrix: Vec<Vec<FieldElement>> = subset.iter().map(|&i| rows[i].clone()).collect();
        if crate::field::determinant(&matrix)?.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Hyperplanes for one chunk: a point whose first coordinate is the chunk,
/// and n rows through it with every k-subset nonsingular.
pub(crate) fn blakley_rows_for_chunk<R: RngCore + CryptoRng>(
    field: &PrimeField,
    chunk: &BigUint,
    params: ThresholdParams,
    rng: &mut R,
) -> Result<Vec<HyperplaneRow>, SharingError> {
    let k = params.k as usize;
    let mut point = Vec::with_capacity(k);
    point.push(field.element(chunk.clone()));
    for _ in 1..k {
        point.push(field.random_element(rng));
    }

    for _ in 0..BLAKLEY_MAX_ATTEMPTS {
        let rows: Vec<Vec<FieldElement>> = (0..params.n)
            .map(|_| (0..k).map(|_| field.random_element(rng)).collect())
            .collect();
        if !every_subset_nonsingular(&rows, k)? {
            continue;
        }
        return rows
            .into_iter()
            .map(|coeffs| {
                let mut constant = field.zero();
                for (a, x) in coeffs.iter().zip(&point) {
                    constant = constant.add(&a.mul(x)?)?;
                }
                Ok(HyperplaneRow {
                    coeffs: coeffs.into_iter().map(|c| c.value().clone()).collect(),
                    constant: constant.value().clone(),
                })
            })
            .collect();
    }
    Err(SharingError::ResamplingFailed)
}

pub(crate) fn blakley_split_with_context<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    params: ThresholdParams,
    field: &PrimeField,
    rng: &mut R,
    ctx: &SplitContext,
) -> Result<Vec<Share>, SharingError> {
    if BigUint::from(params.n) >= field.modulus().clone() {
        return Err(SharingError::FieldTooSmall);
    }
    let chunks = secret.chunks(field)?;
    validate_chunks_below_modulus(&chunks, field)?;
    let mut per_share: Vec<Vec<HyperplaneRow>> =
        vec![Vec::with_capacity(chunks.len()); params.n as usize];
    for chunk in &chunks {
        let rows = blakley_rows_for_chunk(field, chunk, params, rng)?;
        for (share, row) in per_share.iter_mut().zip(rows) {
            share.push(row);
        }
    }
    Ok(assemble_shares(
        Scheme::Blakley,
        ctx,
        Some(field),
        params,
        secret.len() as u64,
        per_share.into_iter().map(SharePayload::Blakley).collect(),
    ))
}

/// Blakley (k, n) split: per chunk, a k-dimensional point carrying the
/// chunk in its first coordinate and n hyperplanes through it. Every
/// k-subset of hyperplanes is nonsingular by construction (resampled
/// otherwise), so reconstruction never fails late.
pub fn blakley_split<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    params: ThresholdParams,
    field: &PrimeField,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    let ctx = SplitContext::fresh(rng);
    blakley_split_with_context(secret, params, field, rng, &ctx)
}

pub(crate) fn blakley_reconstruct_chunk(
    rows: &[&HyperplaneRow],
    field: &PrimeField,
) -> Result<BigUint, SharingError> {
    let matrix: Vec<Vec<FieldElement>> = rows
        .iter()
        .map(|r| r.coeffs.iter().map(|c| field.element(c.clone())).collect())
        .collect();
    let rhs: Vec<FieldElement> = rows
        .iter()
        .map(|r| field.element(r.constant.clone()))
        .collect();
    let point = solve_linear_system(&matrix, &rhs).map_err(|e| match e {
        FieldError::SingularMatrix => SharingError::SingularSystem,
        other => SharingError::Field(other),
    })?;
    Ok(point[0].value().clone())
}

/// Solves the k x k hyperplane system per chunk; the secret is the first
/// coordinate of the intersection point.
pub fn blakley_reconstruct(shares: &[Share]) -> Result<SecretValue, SharingError> {
    let quorum = select_quorum(shares, Scheme::Blakley)?;
    let field = quorum[0]
        .field
        .clone()
        .ok_or_else(|| SharingError::ShareFile("blakley share without field".to_string()))?;
    let chunk_count = (quorum[0].secret_len as usize).div_ceil(field.chunk_width().max(1));
    let rows_per_share: Vec<&[HyperplaneRow]> = quorum
        .iter()
        .map(|s| match &s.payload {
            SharePayload::Blakley(rows) if rows.len() == chunk_count => Ok(rows.as_slice()),
            SharePayload::Blakley(_) => Err(SharingError::ShareFile(
                "payload chunk count mismatch".to_string(),
            )),
            _ => Err(SharingError::MixedSchemes),
        })
        .collect::<Result<_, _>>()?;
    let mut chunks = Vec::with_capacity(chunk_count);
    for c in 0..chunk_count {
        let rows: Vec<&HyperplaneRow> = rows_per_share.iter().map(|r| &r[c]).collect();
        chunks.push(blakley_reconstruct_chunk(&rows, &field)?);
    }
    SecretValue::from_chunks(&chunks, quorum[0].secret_len, &field)
}

// ---------------------------------------------------------------------------
// AND (XOR) parts
// ---------------------------------------------------------------------------

pub(crate) fn and_split_with_context<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    parts: u32,
    rng: &mut R,
    ctx: &SplitContext,
) -> Result<Vec<Share>, SharingError> {
    if parts < 1 {
        return Err(SharingError::InvalidParams { k: parts, n: parts });
    }
    if secret.is_empty() {
        return Err(SharingError::EmptySecret);
    }
    let len = secret.len();
    let mut payloads: Vec<Vec<u8>> = Vec::with_capacity(parts as usize);
    let mut last = secret.as_bytes().to_vec();
    for _ in 1..parts {
        let mut pad = vec![0u8; len];
        rng.fill_bytes(&mut pad);
        for (acc, b) in last.iter_mut().zip(&pad) {
            *acc ^= b;
        }
        payloads.push(pad);
    }
    payloads.push(last);
    let params = ThresholdParams::new(parts, parts)?;
    Ok(assemble_shares(
        Scheme::AndPart,
        ctx,
        None,
        params,
        len as u64,
        payloads.into_iter().map(SharePayload::AndPart).collect(),
    ))
}

/// Splits into `parts` XOR pads: every part is required, any subset short
/// of the full set is statistically independent of the secret.
pub fn and_split<R: RngCore + CryptoRng>(
    secret: &SecretValue,
    parts: u32,
    rng: &mut R,
) -> Result<Vec<Share>, SharingError> {
    let ctx = SplitContext::fresh(rng);
    and_split_with_context(secret, parts, rng, &ctx)
}

/// XOR of all parts; every issued part must be present.
pub fn and_reconstruct(parts: &[Share]) -> Result<SecretValue, SharingError> {
    let first = parts.first().ok_or(SharingError::AllPartsRequired {
        expected: 1,
        got: 0,
    })?;
    let expected = first.params.n;
    for share in parts {
        if share.scheme != Scheme::AndPart {
            return Err(SharingError::MixedSchemes);
        }
        if share.share_set_id != first.share_set_id
            || share.params != first.params
            || share.secret_len != first.secret_len
            || share.policy_path != first.policy_path
        {
            return Err(SharingError::MixedShareSets);
        }
    }
    let mut seen = vec![false; expected as usize];
    for share in parts {
        let index = share.participant_index;
        if index == 0 || index > expected {
            return Err(SharingError::IndexOutOfRange { index, n: expected });
        }
        if seen[(index - 1) as usize] {
            return Err(SharingError::DuplicateIndex(index));
        }
        seen[(index - 1) as usize] = true;
    }
    if seen.iter().any(|present| !present) {
        return Err(SharingError::AllPartsRequired {
            expected,
            got: parts.len(),
        });
    }
    let len = first.secret_len as usize;
    let mut acc = vec![0u8; len];
    for share in parts {
        let SharePayload::AndPart(pad) = &share.payload else {
            return Err(SharingError::MixedSchemes);
        };
        if pad.len() != len {
            return Err(SharingError::ShareFile("part length mismatch".to_string()));
        }
        for (a, b) in acc.iter_mut().zip(pad) {
            *a ^= b;
        }
    }
    Ok(SecretValue::new(acc))
}

// ---------------------------------------------------------------------------
// Canonical share files
// ---------------------------------------------------------------------------

impl Share {
    /// Canonical share file bytes, digest included.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        doc.set("scheme", self.scheme.as_str());
        doc.set("share_set_id", hex::encode(self.share_set_id));
        doc.set(
            "field_p",
            self.field
                .as_ref()
                .map(|f| f.modulus().to_string())
                .unwrap_or_else(|| "0".to_string()),
        );
        doc.set("k", self.params.k.to_string());
        doc.set("n", self.params.n.to_string());
        doc.set("participant_index", self.participant_index.to_string());
        doc.set("policy_path", self.policy_path.clone());
        doc.set("secret_len", self.secret_len.to_string());
        doc.set("share_id", self.share_id.clone());
        match &self.payload {
            SharePayload::Shamir(values) => {
                let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                doc.set("chunks", joined.join(","));
            }
            SharePayload::Blakley(rows) => {
                let joined: Vec<String> = rows
                    .iter()
                    .map(|row| {
                        let coeffs: Vec<String> =
                            row.coeffs.iter().map(|c| c.to_string()).collect();
                        format!("{};{}", coeffs.join(","), row.constant)
                    })
                    .collect();
                doc.set("chunks", joined.join("|"));
            }
            SharePayload::AndPart(part) => {
                doc.set("part", hex::encode(part));
            }
        }
        doc.to_bytes_with_digest()
    }

    /// Parses and verifies a canonical share file: integrity digest, derived
    /// share id, field primality, and payload canonicality.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, SharingError> {
        let doc = Doc::parse_with_digest(bytes)?;
        let scheme = Scheme::parse(doc.require("scheme")?)?;

        let set_hex = doc.require("share_set_id")?;
        let set_raw = hex::decode(set_hex)
            .map_err(|_| SharingError::ShareFile("share_set_id is not hex".to_string()))?;
        let share_set_id: [u8; 16] = set_raw
            .try_into()
            .map_err(|_| SharingError::ShareFile("share_set_id must be 16 bytes".to_string()))?;

        let parse_uint = |key: &str| -> Result<BigUint, SharingError> {
            let text = doc.require(key)?;
            text.parse::<BigUint>()
                .map_err(|_| SharingError::ShareFile(format!("{key} is not a decimal integer")))
        };

        let p = parse_uint("field_p")?;
        let field = if p.is_zero() {
            if scheme != Scheme::AndPart {
                return Err(SharingError::ShareFile(
                    "field_p=0 is only valid for and-part shares".to_string(),
                ));
            }
            None
        } else {
            Some(PrimeField::new(p).map_err(SharingError::Field)?)
        };

        let k = doc.require_u64("k")? as u32;
        let n = doc.require_u64("n")? as u32;
        let params = ThresholdParams::new(k, n)?;
        let participant_index = doc.require_u64("participant_index")? as u32;
        if participant_index == 0 || participant_index > n {
            return Err(SharingError::IndexOutOfRange {
                index: participant_index,
                n,
            });
        }
        let policy_path = doc.require("policy_path")?.to_string();
        let secret_len = doc.require_u64("secret_len")?;
        let share_id = doc.require("share_id")?.to_string();
        if share_id != derive_share_id(scheme, &share_set_id, &policy_path, participant_index) {
            return Err(SharingError::ShareFile(
                "share_id does not match share".to_string(),
            ));
        }

        let payload = match scheme {
            Scheme::Shamir => {
                let field = field.as_ref().expect("checked above");
                let chunk_count = (secret_len as usize).div_ceil(field.chunk_width().max(1));
                let values: Vec<BigUint> = doc
                    .require("chunks")?
                    .split(',')
                    .map(|v| {
                        v.parse::<BigUint>().map_err(|_| {
                            SharingError::ShareFile("chunk is not a decimal integer".to_string())
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if values.len() != chunk_count {
                    return Err(SharingError::ShareFile(
                        "chunk count does not match secret length".to_string(),
                    ));
                }
                validate_chunks_below_modulus(&values, field)?;
                SharePayload::Shamir(values)
            }
            Scheme::Blakley => {
                let field = field.as_ref().expect("checked above");
                let chunk_count = (secret_len as usize).div_ceil(field.chunk_width().max(1));
                let rows: Vec<HyperplaneRow> = doc
                    .require("chunks")?
                    .split('|')
                    .map(|entry| {
                        let (coeff_text, constant_text) =
                            entry.split_once(';').ok_or_else(|| {
                                SharingError::ShareFile(
                                    "hyperplane entry missing constant".to_string(),
                                )
                            })?;
                        let coeffs: Vec<BigUint> = coeff_text
                            .split(',')
                            .map(|v| {
                                v.parse::<BigUint>().map_err(|_| {
                                    SharingError::ShareFile(
                                        "coefficient is not a decimal integer".to_string(),
                                    )
                                })
                            })
                            .collect::<Result<_, _>>()?;
                        let constant = constant_text.parse::<BigUint>().map_err(|_| {
                            SharingError::ShareFile("constant is not a decimal integer".to_string())
                        })?;
                        if coeffs.len() != k as usize {
                            return Err(SharingError::ShareFile(
                                "hyperplane dimension does not match k".to_string(),
                            ));
                        }
                        validate_chunks_below_modulus(&coeffs, field)?;
                        validate_chunks_below_modulus(std::slice::from_ref(&constant), field)?;
                        Ok(HyperplaneRow { coeffs, constant })
                    })
                    .collect::<Result<_, _>>()?;
                if rows.len() != chunk_count {
                    return Err(SharingError::ShareFile(
                        "chunk count does not match secret length".to_string(),
                    ));
                }
                SharePayload::Blakley(rows)
            }
            Scheme::AndPart => {
                let part = hex::decode(doc.require("part")?)
                    .map_err(|_| SharingError::ShareFile("part is not hex".to_string()))?;
                if part.len() as u64 != secret_len {
                    return Err(SharingError::ShareFile("part length mismatch".to_string()));
                }
                SharePayload::AndPart(part)
            }
        };

        Ok(Share {
            scheme,
            share_set_id,
            field,
            params,
            participant_index,
            policy_path,
            share_id,
            secret_len,
            payload,
        })
    }
}
