//! Append-only, hash-chained record store.
//!
//! Every entry's hash covers its predecessor's hash, so the newest hash
//! commits to the entire history. The API has no update or delete;
//! tampering with stored bytes is detected by `verify_range`, and
//! deletion of the whole store is made evident by anchoring the head
//! (count + newest hash) to an external sink after appends.
//!
//! On-disk layout: a 5-byte header (magic "VLST", version), then one
//! frame per entry: prev_hash(32) ‖ seq(8) ‖ timestamp(8) ‖ len(8) ‖
//! payload ‖ entry_hash(32), all integers big-endian. Appends sync before
//! acknowledging; a torn tail frame from a crash is truncated away on the
//! next writable open, leaving the store at its previous head.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

const STORE_MAGIC: &[u8; 4] = b"VLST";
const STORE_VERSION: u8 = 1;
const HEADER_LEN: u64 = 5;
/// prev_hash + seq + timestamp + len.
const FRAME_FIXED: usize = 32 + 8 + 8 + 8;
const TAG_LEN: usize = 32;

pub const DEFAULT_MAX_PAYLOAD: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("not a record store (bad magic)")]
    NotAStore,
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u8),
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    OversizePayload { len: usize, max: usize },
    #[error("sequence {seq} out of range: store holds {count} entries")]
    OutOfRange { seq: u64, count: u64 },
    #[error("invalid range {from}..={to} over {count} entries")]
    InvalidRange { from: u64, to: u64, count: u64 },
    #[error("store is structurally damaged at entry {at_seq}")]
    CorruptStore { at_seq: u64 },
    #[error("store opened read-only")]
    ReadOnly,
    #[error("head regression: sink already anchored count {anchored}, refusing {current}")]
    AnchorRegression { anchored: u64, current: u64 },
    #[error("chain diverges from the head anchored for {count} entries")]
    AnchorDivergence { count: u64 },
    #[error("anchor sink unreachable: {0}")]
    SinkUnreachable(String),
    #[error("malformed head record")]
    MalformedHead,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One chained record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEntry {
    pub seq: u64,
    pub timestamp: u64,
    pub prev_hash: [u8; 32],
    pub payload: Vec<u8>,
    pub entry_hash: [u8; 32],
}

/// entry_hash = SHA-256(prev_hash ‖ BE64(seq) ‖ BE64(timestamp) ‖
/// BE64(len(payload)) ‖ payload).
pub fn compute_entry_hash(
    prev_hash: &[u8; 32],
    seq: u64,
    timestamp: u64,
    payload: &[u8],
) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(prev_hash);
    hasher.update(seq.to_be_bytes());
    hasher.update(timestamp.to_be_bytes());
    hasher.update((payload.len() as u64).to_be_bytes());
    hasher.update(payload);
    hasher.finalize().into()
}

/// A 40-byte commitment to the whole chain: entry count and newest hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreHead {
    pub count: u64,
    pub head_hash: [u8; 32],
}

impl StoreHead {
    pub fn empty() -> Self {
        Self {
            count: 0,
            head_hash: [0u8; 32],
        }
    }

    pub fn to_bytes(&self) -> [u8; 40] {
        let mut out = [0u8; 40];
        out[..8].copy_from_slice(&self.count.to_be_bytes());
        out[8..].copy_from_slice(&self.head_hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() != 40 {
            return Err(StoreError::MalformedHead);
        }
        Ok(Self {
            count: u64::from_be_bytes(bytes[..8].try_into().expect("fixed width")),
            head_hash: bytes[8..].try_into().expect("fixed width"),
        })
    }
}

/// Result of a verification pass. Failures are report contents, not
/// errors: `first_bad_seq` names the earliest entry whose bytes do not
/// match the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: u64,
    pub first_bad_seq: Option<u64>,
    pub head: StoreHead,
}

impl VerifyReport {
    pub fn intact(&self) -> bool {
        self.first_bad_seq.is_none()
    }
}

struct ScanResult {
    offsets: Vec<u64>,
    head: StoreHead,
    /// Byte offset where a torn (incomplete) tail frame starts.
    torn_tail_at: Option<u64>,
    /// Sequence of a structurally unreadable complete frame (oversize
    /// length field): not a crash artifact, likely tampering.
    structural_fault: Option<u64>,
}

pub struct Store {
    path: PathBuf,
    /// Write handle; `None` when opened read-only.
    file: Option<File>,
    offsets: Vec<u64>,
    head: StoreHead,
    structural_fault: Option<u64>,
    max_payload: usize,
}

fn scan(path: &Path, max_payload: usize) -> Result<ScanResult, StoreError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    let mut version = [0u8; 1];
    if file_len < HEADER_LEN {
        return Err(StoreError::NotAStore);
    }
    reader.read_exact(&mut magic)?;
    if &magic != STORE_MAGIC {
        return Err(StoreError::NotAStore);
    }
    reader.read_exact(&mut version)?;
    if version[0] != STORE_VERSION {
        return Err(StoreError::UnsupportedVersion(version[0]));
    }

    let mut offsets = Vec::new();
    let mut head = StoreHead::empty();
    let mut torn_tail_at = None;
    let mut structural_fault = None;
    let mut at = HEADER_LEN;
    let mut fixed = [0u8; FRAME_FIXED];
    while at < file_len {
        if file_len - at < FRAME_FIXED as u64 {
            torn_tail_at = Some(at);
            break;
        }
        reader.read_exact(&mut fixed)?;
        let len = u64::from_be_bytes(fixed[48..56].try_into().expect("fixed width"));
        if len > max_payload as u64 {
            structural_fault = Some(offsets.len() as u64);
            break;
        }
        let frame_rest = len + TAG_LEN as u64;
        if file_len - at - (FRAME_FIXED as u64) < frame_rest {
            torn_tail_at = Some(at);
            break;
        }
        reader.seek_relative(len as i64)?;
        let mut tag = [0u8; TAG_LEN];
        reader.read_exact(&mut tag)?;
        offsets.push(at);
        head = StoreHead {
            count: offsets.len() as u64,
            head_hash: tag,
        };
        at += FRAME_FIXED as u64 + frame_rest;
    }
    Ok(ScanResult {
        offsets,
        head,
        torn_tail_at,
        structural_fault,
    })
}

impl Store {
    /// Creates an empty store; the file must not already exist.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .create_new(true)
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    StoreError::AlreadyExists(path.clone())
                } else {
                    StoreError::Io(e)
                }
            })?;
        file.write_all(STORE_MAGIC)?;
        file.write_all(&[STORE_VERSION])?;
        file.sync_data()?;
        Ok(Self {
            path,
            file: Some(file),
            offsets: Vec::new(),
            head: StoreHead::empty(),
            structural_fault: None,
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }

    /// Opens for appending. A torn tail frame left by a crash is truncated
    /// away; a structurally damaged interior refuses to open.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let result = scan(&path, DEFAULT_MAX_PAYLOAD)?;
        if let Some(at_seq) = result.structural_fault {
            return Err(StoreError::CorruptStore { at_seq });
        }
        let mut file = OpenOptions::new().read(true).write(true).open(&path)?;
        if let Some(torn_at) = result.torn_tail_at {
            file.set_len(torn_at)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self {
            path,
            file: Some(file),
            offsets: result.offsets,
            head: result.head,
            structural_fault: None,
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }

    /// Opens without touching the file. A torn tail is tolerated (the
    /// complete prefix is visible); a structural fault is remembered and
    /// reported by verification.
    pub fn open_read_only(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let result = scan(&path, DEFAULT_MAX_PAYLOAD)?;
        Ok(Self {
            path,
            file: None,
            offsets: result.offsets,
            head: result.head,
            structural_fault: result.structural_fault,
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn count(&self) -> u64 {
        self.offsets.len() as u64
    }

    pub fn head(&self) -> StoreHead {
        self.head
    }

    /// Appends a payload, syncing before acknowledging. There is no way to
    /// modify or remove an entry.
    pub fn append(&mut self, payload: &[u8], timestamp: u64) -> Result<ChainEntry, StoreError> {
        if payload.len() > self.max_payload {
            return Err(StoreError::OversizePayload {
                len: payload.len(),
                max: self.max_payload,
            });
        }
        let file = self.file.as_mut().ok_or(StoreError::ReadOnly)?;
        let seq = self.offsets.len() as u64;
        let prev_hash = self.head.head_hash;
        let entry_hash = compute_entry_hash(&prev_hash, seq, timestamp, payload);

        let offset = file.seek(SeekFrom::End(0))?;
        let mut frame = Vec::with_capacity(FRAME_FIXED + payload.len() + TAG_LEN);
        frame.extend_from_slice(&prev_hash);
        frame.extend_from_slice(&seq.to_be_bytes());
        frame.extend_from_slice(&timestamp.to_be_bytes());
        frame.extend_from_slice(&(payload.len() as u64).to_be_bytes());
        frame.extend_from_slice(payload);
        frame.extend_from_slice(&entry_hash);
        file.write_all(&frame)?;
        file.sync_data()?;

        self.offsets.push(offset);
        self.head = StoreHead {
            count: seq + 1,
            head_hash: entry_hash,
        };
        Ok(ChainEntry {
            seq,
            timestamp,
            prev_hash,
            payload: payload.to_vec(),
            entry_hash,
        })
    }

    fn read_frame(&self, reader: &mut impl Read) -> Result<ChainEntry, StoreError> {
        let mut fixed = [0u8; FRAME_FIXED];
        reader.read_exact(&mut fixed)?;
        let prev_hash: [u8; 32] = fixed[..32].try_into().expect("fixed width");
        let stored_seq = u64::from_be_bytes(fixed[32..40].try_into().expect("fixed width"));
        let timestamp = u64::from_be_bytes(fixed[40..48].try_into().expect("fixed width"));
        let len = u64::from_be_bytes(fixed[48..56].try_into().expect("fixed width")) as usize;
        let mut payload = vec![0u8; len];
        reader.read_exact(&mut payload)?;
        let mut entry_hash = [0u8; 32];
        reader.read_exact(&mut entry_hash)?;
        Ok(ChainEntry {
            seq: stored_seq,
            timestamp,
            prev_hash,
            payload,
            entry_hash,
        })
    }

    /// Returns an entry verbatim, without verification.
    pub fn read(&self, seq: u64) -> Result<ChainEntry, StoreError> {
        let offset = *self
            .offsets
            .get(seq as usize)
            .ok_or(StoreError::OutOfRange {
                seq,
                count: self.count(),
            })?;
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(offset))?;
        self.read_frame(&mut BufReader::new(file))
    }

    /// Recomputes every entry hash and chain link in `from..=to`
    /// (inclusive). The first mismatching entry is reported, not raised.
    pub fn verify_range(&self, from: u64, to: u64) -> Result<VerifyReport, StoreError> {
        let count = self.count();
        if from > to || to >= count {
            // A structurally damaged frame right at the end of the indexed
            // prefix is part of the store; let a full-range request cover
            // it so damage is reported rather than unreachable.
            if !(self.structural_fault == Some(count) && from <= count && to == count) {
                return Err(StoreError::InvalidRange { from, to, count });
            }
        }
        if count == 0 {
            // Only reachable via the fault exemption: nothing precedes the
            // damaged frame.
            return Ok(VerifyReport {
                checked: 0,
                first_bad_seq: self.structural_fault,
                head: self.head,
            });
        }

        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(self.offsets[from.min(count - 1) as usize]))?;

        // Anchor the range: entry `from` must link to the stored hash of
        // entry `from - 1` (genesis links to zero).
        let mut expected_prev = [0u8; 32];
        if from > 0 {
            let before = self.read(from - 1)?;
            expected_prev = before.entry_hash;
        }

        let mut reader = BufReader::new(file);
        let mut checked = 0u64;
        for seq in from..=to.min(count - 1) {
            let entry = self.read_frame(&mut reader)?;
            let recomputed =
                compute_entry_hash(&entry.prev_hash, entry.seq, entry.timestamp, &entry.payload);
            if entry.seq != seq
                || entry.prev_hash != expected_prev
                || recomputed != entry.entry_hash
            {
                return Ok(VerifyReport {
                    checked,
                    first_bad_seq: Some(seq),
                    head: self.head,
                });
            }
            expected_prev = entry.entry_hash;
            checked += 1;
        }
        if self.structural_fault == Some(count) && to >= count {
            return Ok(VerifyReport {
                checked,
                first_bad_seq: Some(count),
                head: self.head,
            });
        }
        Ok(VerifyReport {
            checked,
            first_bad_seq: None,
            head: self.head,
        })
    }

    /// Verifies the whole chain; an empty store is intact by definition.
    pub fn verify(&self) -> Result<VerifyReport, StoreError> {
        if let Some(fault) = self.structural_fault {
            if self.count() == 0 {
                return Ok(VerifyReport {
                    checked: 0,
                    first_bad_seq: Some(fault),
                    head: self.head,
                });
            }
            return self.verify_range(0, self.count());
        }
        if self.count() == 0 {
            return Ok(VerifyReport {
                checked: 0,
                first_bad_seq: None,
                head: self.head,
            });
        }
        self.verify_range(0, self.count() - 1)
    }

    /// The head as of a historic count, for prefix-consistency checks
    /// against previously anchored heads.
    pub fn head_at(&self, count: u64) -> Result<StoreHead, StoreError> {
        if count == 0 {
            return Ok(StoreHead::empty());
        }
        let entry = self.read(count - 1)?;
        Ok(StoreHead {
            count,
            head_hash: entry.entry_hash,
        })
    }
}

/// Where exported heads go: a local append-only file, or an HTTP endpoint
/// receiving the 40-byte head via POST.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorSink {
    File(PathBuf),
    Http(String),
}

impl AnchorSink {
    pub fn parse(s: &str) -> Self {
        if s.starts_with("http://") || s.starts_with("https://") {
            AnchorSink::Http(s.to_string())
        } else {
            AnchorSink::File(PathBuf::from(s))
        }
    }
}

impl std::fmt::Display for AnchorSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorSink::File(path) => write!(f, "{}", path.display()),
            AnchorSink::Http(url) => write!(f, "{url}"),
        }
    }
}

/// Writes a head to the sink. File sinks append 40-byte records and
/// refuse count regressions, so whole-store deletion leaves evidence.
pub fn anchor_head(head: &StoreHead, sink: &AnchorSink) -> Result<(), StoreError> {
    match sink {
        AnchorSink::File(path) => {
            let existing = read_anchored_heads(path)?;
            if let Some(last) = existing.last() {
                if head.count < last.count {
                    return Err(StoreError::AnchorRegression {
                        anchored: last.count,
                        current: head.count,
                    });
                }
                // Same count with a different hash means the chain was
                // rewritten, not extended.
                if head.count == last.count && head.head_hash != last.head_hash {
                    return Err(StoreError::AnchorDivergence { count: head.count });
                }
            }
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            file.write_all(&head.to_bytes())?;
            file.sync_data()?;
            Ok(())
        }
        AnchorSink::Http(url) => {
            let response = ureq::post(url)
                .content_type("application/octet-stream")
                .send(&head.to_bytes()[..])
                .map_err(|e| StoreError::SinkUnreachable(e.to_string()))?;
            if !response.status().is_success() {
                return Err(StoreError::SinkUnreachable(format!(
                    "sink answered {}",
                    response.status()
                )));
            }
            Ok(())
        }
    }
}

/// Reads every head anchored to a file sink, oldest first.
pub fn read_anchored_heads(path: &Path) -> Result<Vec<StoreHead>, StoreError> {
    let bytes = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::Io(e)),
    };
    if bytes.len() % 40 != 0 {
        return Err(StoreError::MalformedHead);
    }
    bytes.chunks(40).map(StoreHead::from_bytes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn temp_store() -> (TempDir, Store) {
        let dir = TempDir::new().unwrap();
        let store = Store::create(dir.path().join("store.vlst")).unwrap();
        (dir, store)
    }

    #[test]
    fn genesis_entry_matches_pinned_hash() {
        let (_dir, mut store) = temp_store();
        let entry = store.append(b"a", 1_700_000_000).unwrap();
        assert_eq!(entry.seq, 0);
        assert_eq!(entry.prev_hash, [0u8; 32]);
        assert_eq!(
            hex::encode(entry.entry_hash),
            "00670ea0fcebda647257aae5291455bdafbf4f9dab74a10a3ed30f95a1154a9c"
        );

        let second = store.append(b"second entry", 1_700_000_060).unwrap();
        assert_eq!(second.prev_hash, entry.entry_hash);
        assert_eq!(
            hex::encode(second.entry_hash),
            "e6afdc77706a7e5ed95fcd21e4276aad24c8713e1310cc59431974359812742f"
        );
    }

    #[test]
    fn entry_hash_recomputes_from_fields() {
        let (_dir, mut store) = temp_store();
        for i in 0..10u64 {
            let entry = store
                .append(format!("payload {i}").as_bytes(), 100 + i)
                .unwrap();
            assert_eq!(
                compute_entry_hash(&entry.prev_hash, entry.seq, entry.timestamp, &entry.payload),
                entry.entry_hash
            );
        }
    }

    #[test]
    fn read_returns_entries_verbatim_and_repeatably() {
        let (_dir, mut store) = temp_store();
        let written = store.append(b"hello", 42).unwrap();
        assert_eq!(store.read(0).unwrap(), written);
        assert_eq!(store.read(0).unwrap(), store.read(0).unwrap());
        assert!(matches!(
            store.read(1),
            Err(StoreError::OutOfRange { seq: 1, count: 1 })
        ));
    }

    #[test]
    fn verify_confirms_untampered_stores() {
        let (_dir, mut store) = temp_store();
        assert!(store.verify().unwrap().intact());
        assert_eq!(store.head(), StoreHead::empty());

        for i in 0..100u64 {
            store
                .append(format!("entry number {i}").as_bytes(), i)
                .unwrap();
        }
        let report = store.verify().unwrap();
        assert!(report.intact());
        assert_eq!(report.checked, 100);

        // Head is stable across reopen.
        let head = store.head();
        let path = store.path().to_path_buf();
        drop(store);
        let reopened = Store::open_read_only(&path).unwrap();
        assert_eq!(reopened.head(), head);
    }

    #[test]
    fn any_flipped_payload_bit_is_pinpointed() {
        let (dir, mut store) = temp_store();
        let mut offsets_of_payloads = Vec::new();
        let mut at = HEADER_LEN;
        for i in 0..20u64 {
            let payload = format!("sensitive entry {i:03}");
            store.append(payload.as_bytes(), i).unwrap();
            offsets_of_payloads.push((at + FRAME_FIXED as u64, payload.len()));
            at += (FRAME_FIXED + payload.len() + TAG_LEN) as u64;
        }
        let original = std::fs::read(store.path()).unwrap();

        for (seq, (payload_at, payload_len)) in offsets_of_payloads.iter().enumerate() {
            let mut tampered = original.clone();
            let byte = *payload_at as usize + seq % payload_len;
            tampered[byte] ^= 1 << (seq % 8);
            let copy_path = dir.path().join("tampered.vlst");
            std::fs::write(&copy_path, &tampered).unwrap();
            let copy = Store::open_read_only(&copy_path).unwrap();
            let report = copy.verify().unwrap();
            assert_eq!(report.first_bad_seq, Some(seq as u64), "seq {seq}");
        }
    }

    #[test]
    fn range_verification_anchors_on_the_previous_entry() {
        let (_dir, mut store) = temp_store();
        for i in 0..10u64 {
            store.append(format!("e{i}").as_bytes(), i).unwrap();
        }
        let report = store.verify_range(3, 7).unwrap();
        assert!(report.intact());
        assert_eq!(report.checked, 5);
        assert!(matches!(
            store.verify_range(7, 3),
            Err(StoreError::InvalidRange { .. })
        ));
        assert!(matches!(
            store.verify_range(0, 10),
            Err(StoreError::InvalidRange { .. })
        ));
    }

    #[test]
    fn appends_never_rewrite_earlier_bytes() {
        let (_dir, mut store) = temp_store();
        store.append(b"first", 1).unwrap();
        let snapshot = std::fs::read(store.path()).unwrap();
        store.append(b"second", 2).unwrap();
        store.read(0).unwrap();
        store.append(b"third", 3).unwrap();
        let grown = std::fs::read(store.path()).unwrap();
        assert!(grown.len() > snapshot.len());
        assert_eq!(&grown[..snapshot.len()], snapshot.as_slice());
    }

    #[test]
    fn torn_tail_recovers_to_previous_head() {
        let (dir, mut store) = temp_store();
        for i in 0..3u64 {
            store.append(format!("entry {i}").as_bytes(), i).unwrap();
        }
        let head_before = store.head_at(2).unwrap();
        let bytes = std::fs::read(store.path()).unwrap();

        // Cut mid-way through the last frame.
        let torn_path = dir.path().join("torn.vlst");
        std::fs::write(&torn_path, &bytes[..bytes.len() - 17]).unwrap();
        let mut recovered = Store::open(&torn_path).unwrap();
        assert_eq!(recovered.count(), 2);
        assert_eq!(recovered.head(), head_before);
        assert!(recovered.verify().unwrap().intact());

        // The store keeps working after recovery.
        recovered.append(b"after crash", 99).unwrap();
        assert!(recovered.verify().unwrap().intact());
    }

    #[test]
    fn heads_form_a_consistent_sequence() {
        let (_dir, mut store) = temp_store();
        let mut heads = vec![store.head()];
        for i in 0..10u64 {
            store.append(format!("h{i}").as_bytes(), i).unwrap();
            heads.push(store.head());
        }
        for (count, head) in heads.iter().enumerate() {
            assert_eq!(store.head_at(count as u64).unwrap(), *head);
        }
        assert!(heads.windows(2).all(|w| w[0].count + 1 == w[1].count));
    }

    #[test]
    fn truncation_is_evident_against_an_anchored_head() {
        let (dir, mut store) = temp_store();
        for i in 0..5u64 {
            store.append(format!("entry {i}").as_bytes(), i).unwrap();
        }
        let sink = AnchorSink::File(dir.path().join("heads"));
        anchor_head(&store.head(), &sink).unwrap();

        // Adversary truncates two whole frames off the tail.
        let bytes = std::fs::read(store.path()).unwrap();
        let frame_len = FRAME_FIXED + b"entry 0".len() + TAG_LEN;
        let cut = bytes.len() - 2 * frame_len;
        let cut_path = dir.path().join("cut.vlst");
        std::fs::write(&cut_path, &bytes[..cut]).unwrap();

        let truncated = Store::open_read_only(&cut_path).unwrap();
        assert!(truncated.verify().unwrap().intact()); // prefix alone looks fine
        let anchored = read_anchored_heads(&dir.path().join("heads")).unwrap();
        assert_eq!(anchored.len(), 1);
        assert!(truncated.count() < anchored[0].count); // ...but the anchor tells
    }

    #[test]
    fn file_sink_refuses_count_regression() {
        let dir = TempDir::new().unwrap();
        let sink = AnchorSink::File(dir.path().join("heads"));
        let bigger = StoreHead {
            count: 9,
            head_hash: [1u8; 32],
        };
        let smaller = StoreHead {
            count: 3,
            head_hash: [2u8; 32],
        };
        anchor_head(&bigger, &sink).unwrap();
        assert!(matches!(
            anchor_head(&smaller, &sink),
            Err(StoreError::AnchorRegression {
                anchored: 9,
                current: 3
            })
        ));
        anchor_head(&bigger, &sink).unwrap();
        assert_eq!(
            read_anchored_heads(&dir.path().join("heads"))
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn file_sink_refuses_a_rewritten_head_at_the_same_count() {
        let dir = TempDir::new().unwrap();
        let sink = AnchorSink::File(dir.path().join("heads"));
        anchor_head(
            &StoreHead {
                count: 3,
                head_hash: [1u8; 32],
            },
            &sink,
        )
        .unwrap();
        assert!(matches!(
            anchor_head(
                &StoreHead {
                    count: 3,
                    head_hash: [9u8; 32]
                },
                &sink
            ),
            Err(StoreError::AnchorDivergence { count: 3 })
        ));
        // The identical head may be re-anchored.
        anchor_head(
            &StoreHead {
                count: 3,
                head_hash: [1u8; 32],
            },
            &sink,
        )
        .unwrap();
    }

    #[test]
    fn http_sink_posts_the_head() {
        use std::io::{Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(at) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    if buf.len() - (at + 4) >= 40 {
                        break;
                    }
                }
            }
            stream
                .write_all(b"HTTP/1.1 200 OK\r\ncontent-length: 0\r\n\r\n")
                .unwrap();
            let body_start = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap() + 4;
            buf[body_start..].to_vec()
        });

        let head = StoreHead {
            count: 7,
            head_hash: [0xCD; 32],
        };
        anchor_head(&head, &AnchorSink::Http(format!("http://{addr}/anchor"))).unwrap();
        let body = server.join().unwrap();
        assert_eq!(body, head.to_bytes());
    }

    #[test]
    fn unreachable_http_sink_reports_not_panics() {
        let head = StoreHead::empty();
        assert!(matches!(
            anchor_head(&head, &AnchorSink::Http("http://127.0.0.1:1/x".to_string())),
            Err(StoreError::SinkUnreachable(_))
        ));
    }

    #[test]
    fn create_refuses_existing_and_open_refuses_foreign_files() {
        let (dir, store) = temp_store();
        let path = store.path().to_path_buf();
        drop(store);
        assert!(matches!(
            Store::create(&path),
            Err(StoreError::AlreadyExists(_))
        ));

        let foreign = dir.path().join("foreign");
        std::fs::write(&foreign, b"VLSTX trailing").unwrap();
        assert!(matches!(
            Store::open(&foreign),
            Err(StoreError::UnsupportedVersion(b'X'))
        ));
        let tiny = dir.path().join("tiny");
        std::fs::write(&tiny, b"hi").unwrap();
        assert!(matches!(Store::open(&tiny), Err(StoreError::NotAStore)));
    }

    #[test]
    fn oversize_payload_is_rejected_before_touching_disk() {
        let (_dir, mut store) = temp_store();
        store.max_payload = 64;
        let before = std::fs::read(store.path()).unwrap();
        assert!(matches!(
            store.append(&[0u8; 65], 1),
            Err(StoreError::OversizePayload { len: 65, max: 64 })
        ));
        assert_eq!(std::fs::read(store.path()).unwrap(), before);
    }

    #[test]
    fn read_only_store_refuses_appends() {
        let (_dir, mut store) = temp_store();
        store.append(b"x", 1).unwrap();
        let path = store.path().to_path_buf();
        drop(store);
        let mut read_only = Store::open_read_only(&path).unwrap();
        assert!(matches!(
            read_only.append(b"y", 2),
            Err(StoreError::ReadOnly)
        ));
    }
}
