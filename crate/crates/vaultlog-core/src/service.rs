//! Site orchestration: one directory holding everything a deployment
//! needs, and the operations the CLI exposes.
//!
//! Layout under the site root:
//!
//! - `config`       canonical text, public material only; loading rejects
//!   anything that looks like key or share material
//! - `plan`         the key-fragmentation plan (policy plus share metadata,
//!   no key bytes)
//! - `store.vlst`   the append-only hash-chained record store
//! - `heads/`       anchored head files
//! - `ceremonies/`  ceremony state: who submitted, which share file, and a
//!   digest of it — never share payloads or key bytes
//! - `.lock`        advisory lock serializing access to the site
//!
//! Every stored payload is a type byte followed by an encrypted record:
//! ordinary log events and ceremony audit events share the chain and are
//! both unreadable without a completed key-recovery ceremony.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{Doc, DocError};
use crate::ceremony::{
    Ceremony, CeremonyError, CeremonyEvent, CeremonyStatus, LeafProgress, Submission,
};
use crate::envelope::{
    decrypt_record, encrypt_record, keygen, EncryptedRecord, EnvelopeError, GroupParams,
    PrivateKey, PublicKey,
};
use crate::event::{Action, EventError, LogEvent};
use crate::field::PrimeField;
use crate::policy::{fragment_key, reconstruct_key, KeyFragmentationPlan, PolicyError, PolicyNode};
use crate::sharing::{Share, SharingError};
use crate::store::{
    anchor_head, read_anchored_heads, AnchorSink, ChainEntry, Store, StoreError, StoreHead,
    VerifyReport,
};

pub const CONFIG_FILE: &str = "config";
pub const PLAN_FILE: &str = "plan";
pub const STORE_FILE: &str = "store.vlst";
pub const HEADS_DIR: &str = "heads";
pub const CEREMONIES_DIR: &str = "ceremonies";
pub const LOCK_FILE: &str = ".lock";
pub const DEFAULT_ANCHOR_FILE: &str = "anchors";

/// Payload type bytes inside the chained store.
pub const PAYLOAD_EVENT: u8 = 0x01;
pub const PAYLOAD_AUDIT: u8 = 0x02;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("site already initialized at {}", .0.display())]
    SiteExists(PathBuf),
    #[error("no site at {} (run init first)", .0.display())]
    SiteMissing(PathBuf),
    #[error("site already has a key; refusing to overwrite")]
    KeyAlreadyGenerated,
    #[error("site has no public key yet (run keygen)")]
    NoPublicKey,
    #[error("site has no fragmentation plan (run keygen)")]
    NoPlan,
    #[error("device {0:?} is not registered")]
    DeviceNotRegistered(String),
    #[error("device {0:?} is already registered")]
    DeviceAlreadyRegistered(String),
    #[error("{kind} name {value:?} must be non-empty and use only letters, digits, '.', '_', '-'")]
    InvalidName { kind: &'static str, value: String },
    #[error("config key {0:?} looks like private key or share material; refusing to load")]
    PrivateMaterialInConfig(String),
    #[error("a ceremony is already in progress: {0}")]
    CeremonyAlreadyActive(String),
    #[error("no ceremony is accepting shares")]
    NoActiveCeremony,
    #[error("no ceremony has been opened")]
    NoCeremony,
    #[error("decryption requires a completed key-recovery ceremony")]
    NoReconstructedCeremony,
    #[error("share file {} changed since it was submitted", .0.display())]
    ShareFileChanged(PathBuf),
    #[error("share does not match any participant in the plan")]
    UnknownShare,
    #[error("ceremony state is malformed: {0}")]
    MalformedCeremonyState(String),
    #[error("the plan on disk is not the one this ceremony was opened against")]
    PlanChanged,
    #[error("reconstructed key does not match the site public key")]
    KeyMismatch,
    #[error("log chain failed verification at entry {0}")]
    ChainCompromised(u64),
    #[error("site is open read-only")]
    ReadOnlySite,
    #[error("record {0} is malformed: {1}")]
    MalformedPayload(u64, String),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ceremony(#[from] CeremonyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rejects device ids and participant names that would not survive as
/// filenames or comma-joined lists.
fn validate_name(kind: &'static str, value: &str) -> Result<(), ServiceError> {
    let ok = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::InvalidName {
            kind,
            value: value.to_string(),
        })
    }
}

/// Key segments that mark a document as containing secrets. The config
/// must hold public material only, so loading fails hard on any of these.
fn reject_private_material(doc: &Doc) -> Result<(), ServiceError> {
    const FORBIDDEN: [&str; 7] = [
        "x", "exponent", "private", "secret", "share", "chunks", "part",
    ];
    for key in doc.keys() {
        let flagged = key
            .split(['.', '/', '-', '_'])
            .any(|segment| FORBIDDEN.contains(&segment));
        if flagged {
            return Err(ServiceError::PrivateMaterialInConfig(key.to_string()));
        }
    }
    Ok(())
}

/// Public site configuration: registered devices, the anchor sink, and
/// the record-encryption public key.
#[derive(Debug, Clone, Default)]
pub struct SiteConfig {
    pub devices: Vec<String>,
    pub anchor: Option<String>,
    pub public_key: Option<PublicKey>,
}

impl SiteConfig {
    fn to_doc(&self) -> Doc {
        let mut doc = Doc::new();
        doc.set("devices", self.devices.join(","));
        if let Some(anchor) = &self.anchor {
            doc.set("anchor.url", anchor.clone());
        }
        if let Some(public) = &self.public_key {
            public.write_into(&mut doc);
        }
        doc
    }

    fn from_doc(doc: &Doc) -> Result<Self, ServiceError> {
        reject_private_material(doc)?;
        let mut devices: Vec<String> = doc
            .require("devices")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        for device in &devices {
            validate_name("device", device)?;
        }
        devices.sort();
        devices.dedup();
        let anchor = doc.get("anchor.url").map(str::to_string);
        let public_key = if doc.get("group.p").is_some() {
            Some(PublicKey::read_from(doc)?)
        } else {
            None
        };
        Ok(Self {
            devices,
            anchor,
            public_key,
        })
    }

    fn parse(bytes: &[u8]) -> Result<Self, ServiceError> {
        // The digest line is verified when present; a hand-maintained
        // config without one still loads.
        let doc = Doc::parse(bytes)?;
        let doc = if doc.get("digest").is_some() {
            Doc::parse_with_digest(bytes)?
        } else {
            doc
        };
        Self::from_doc(&doc)
    }
}

/// A ceremony lifecycle note, encrypted into the same chain as ordinary
/// events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub kind: String,
    pub ceremony_id: String,
    pub detail: String,
    pub at: u64,
}

impl AuditEvent {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        doc.set("at", self.at.to_string());
        doc.set("ceremony_id", self.ceremony_id.clone());
        doc.set("detail", self.detail.clone());
        doc.set("kind", self.kind.clone());
        doc.to_bytes_with_digest()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, ServiceError> {
        let doc = Doc::parse_with_digest(bytes)?;
        Ok(Self {
            kind: doc.require("kind")?.to_string(),
            ceremony_id: doc.require("ceremony_id")?.to_string(),
            detail: doc.require("detail")?.to_string(),
            at: doc.require_u64("at")?,
        })
    }
}

/// One decrypted chain payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecryptedEntry {
    Event(LogEvent),
    CeremonyAudit(AuditEvent),
}

/// Decryption result for one entry; failures are per-record, not fatal.
#[derive(Debug)]
pub struct RecordReport {
    pub seq: u64,
    pub timestamp: u64,
    pub outcome: Result<DecryptedEntry, ServiceError>,
}

#[derive(Debug)]
pub struct DecryptOutcome {
    pub ceremony_id: String,
    pub records: Vec<RecordReport>,
    /// Sequence of the decryption-audit entry appended by this run.
    pub audit_seq: u64,
}

/// One share file written during key fragmentation.
#[derive(Debug, Clone)]
pub struct IssuedShareFile {
    pub participant: String,
    pub group_name: String,
    pub share_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct KeygenOutcome {
    pub key_id: [u8; 32],
    pub share_files: Vec<IssuedShareFile>,
}

#[derive(Debug, Clone)]
pub struct CeremonyView {
    pub id: String,
    pub status: CeremonyStatus,
    pub opened_at: u64,
    pub submissions: usize,
    pub progress: Vec<LeafProgress>,
}

/// A submitted share file pinned by its content digest.
type ShareFileRef = (PathBuf, [u8; 32]);

/// Persisted ceremony state as stored under `ceremonies/`.
#[derive(Debug, Clone)]
struct StoredCeremony {
    id: String,
    status: CeremonyStatus,
    opened_at: u64,
    plan_digest: [u8; 32],
    submissions: Vec<StoredSubmission>,
    events: Vec<CeremonyEvent>,
}

#[derive(Debug, Clone)]
struct StoredSubmission {
    participant: String,
    leaf: String,
    at: u64,
    file: PathBuf,
    file_digest: [u8; 32],
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn acquire_lock(root: &Path, exclusive: bool) -> std::io::Result<File> {
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(root.join(LOCK_FILE))?;
    if exclusive {
        file.lock()?;
    } else {
        file.lock_shared()?;
    }
    Ok(file)
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn hex32(s: &str) -> Option<[u8; 32]> {
    hex::decode(s).ok()?.try_into().ok()
}

/// A deployment directory plus its loaded state. Holds the site lock for
/// its lifetime: exclusive when writable, shared when read-only.
pub struct Site {
    root: PathBuf,
    config_path: PathBuf,
    config: SiteConfig,
    plan: Option<KeyFragmentationPlan>,
    store: Store,
    read_only: bool,
    _lock: File,
}

impl Site {
    /// Creates the site directory layout. Refuses to touch an existing
    /// site.
    pub fn init(
        root: &Path,
        config_override: Option<&Path>,
        anchor: Option<&str>,
    ) -> Result<Self, ServiceError> {
        fs::create_dir_all(root)?;
        let lock = acquire_lock(root, true)?;
        let config_path = config_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| root.join(CONFIG_FILE));
        if config_path.exists() || root.join(STORE_FILE).exists() {
            return Err(ServiceError::SiteExists(root.to_path_buf()));
        }
        let config = SiteConfig {
            anchor: anchor.map(str::to_string),
            ..SiteConfig::default()
        };
        write_atomic(&config_path, &config.to_doc().to_bytes_with_digest())?;
        let store = Store::create(root.join(STORE_FILE))?;
        fs::create_dir_all(root.join(HEADS_DIR))?;
        fs::create_dir_all(root.join(CEREMONIES_DIR))?;
        Ok(Self {
            root: root.to_path_buf(),
            config_path,
            config,
            plan: None,
            store,
            read_only: false,
            _lock: lock,
        })
    }

    /// Opens a site for writing; repairs a torn store tail if the last
    /// append was interrupted.
    pub fn open(root: &Path, config_override: Option<&Path>) -> Result<Self, ServiceError> {
        Self::open_inner(root, config_override, false)
    }

    /// Opens a site for inspection only; never modifies any file.
    pub fn open_read_only(
        root: &Path,
        config_override: Option<&Path>,
    ) -> Result<Self, ServiceError> {
        Self::open_inner(root, config_override, true)
    }

    fn open_inner(
        root: &Path,
        config_override: Option<&Path>,
        read_only: bool,
    ) -> Result<Self, ServiceError> {
        let config_path = config_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| root.join(CONFIG_FILE));
        if !config_path.exists() || !root.join(STORE_FILE).exists() {
            return Err(ServiceError::SiteMissing(root.to_path_buf()));
        }
        let lock = acquire_lock(root, !read_only)?;
        let config = SiteConfig::parse(&fs::read(&config_path)?)?;
        let plan_path = root.join(PLAN_FILE);
        let plan = if plan_path.exists() {
            Some(KeyFragmentationPlan::from_canonical_bytes(&fs::read(
                &plan_path,
            )?)?)
        } else {
            None
        };
        let store_path = root.join(STORE_FILE);
        let store = if read_only {
            Store::open_read_only(store_path)?
        } else {
            Store::open(store_path)?
        };
        Ok(Self {
            root: root.to_path_buf(),
            config_path,
            config,
            plan,
            store,
            read_only,
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &SiteConfig {
        &self.config
    }

    pub fn plan(&self) -> Option<&KeyFragmentationPlan> {
        self.plan.as_ref()
    }

    pub fn count(&self) -> u64 {
        self.store.count()
    }

    pub fn head(&self) -> StoreHead {
        self.store.head()
    }

    fn ensure_writable(&self) -> Result<(), ServiceError> {
        if self.read_only {
            Err(ServiceError::ReadOnlySite)
        } else {
            Ok(())
        }
    }

    fn save_config(&self) -> Result<(), ServiceError> {
        write_atomic(
            &self.config_path,
            &self.config.to_doc().to_bytes_with_digest(),
        )?;
        Ok(())
    }

    /// Generates the record-encryption keypair, fragments the private key
    /// along the policy, and writes one share file per participant into
    /// `out_dir`. The private key never touches the site directory.
    pub fn keygen_and_fragment<R: RngCore + CryptoRng>(
        &mut self,
        policy: &PolicyNode,
        group: &GroupParams,
        out_dir: &Path,
        rng: &mut R,
    ) -> Result<KeygenOutcome, ServiceError> {
        self.ensure_writable()?;
        if self.config.public_key.is_some() || self.root.join(PLAN_FILE).exists() {
            return Err(ServiceError::KeyAlreadyGenerated);
        }
        policy.validate()?;
        for (_, node) in policy.leaves() {
            if let PolicyNode::GroupLeaf { members, .. } = node {
                for member in members {
                    validate_name("participant", member)?;
                }
            }
        }

        let pair = keygen(group, rng)?;
        let field = PrimeField::mersenne_521();
        let secret = pair.private.to_secret_bytes();
        let (plan, issued) = fragment_key(&secret, policy, &field, rng)?;
        drop(secret); // zeroized on drop

        fs::create_dir_all(out_dir)?;
        let mut share_files = Vec::with_capacity(issued.len());
        for item in &issued {
            let path = out_dir.join(format!("{}.share", item.participant));
            write_atomic(&path, &item.share.to_canonical_bytes())?;
            share_files.push(IssuedShareFile {
                participant: item.participant.clone(),
                group_name: item.group_name.clone(),
                share_id: item.share.share_id.clone(),
                path,
            });
        }

        write_atomic(&self.root.join(PLAN_FILE), &plan.to_canonical_bytes())?;
        self.plan = Some(plan);
        self.config.public_key = Some(pair.public.clone());
        self.save_config()?;
        Ok(KeygenOutcome {
            key_id: *pair.public.key_id(),
            share_files,
        })
    }

    pub fn register_device(&mut self, device_id: &str) -> Result<(), ServiceError> {
        self.ensure_writable()?;
        validate_name("device", device_id)?;
        if self.config.devices.iter().any(|d| d == device_id) {
            return Err(ServiceError::DeviceAlreadyRegistered(device_id.to_string()));
        }
        self.config.devices.push(device_id.to_string());
        self.config.devices.sort();
        self.save_config()
    }

    /// Encrypts one event under the site public key and appends it to the
    /// chain. The device must be registered.
    pub fn log_event<R: RngCore + CryptoRng>(
        &mut self,
        device_id: &str,
        user_ref: &str,
        action: Action,
        detail: &str,
        occurred_at: u64,
        rng: &mut R,
    ) -> Result<ChainEntry, ServiceError> {
        self.ensure_writable()?;
        let event = LogEvent::new(device_id, user_ref, action, detail, occurred_at, rng)?;
        if !self.config.devices.iter().any(|d| d == device_id) {
            return Err(ServiceError::DeviceNotRegistered(device_id.to_string()));
        }
        let public = self
            .config
            .public_key
            .as_ref()
            .ok_or(ServiceError::NoPublicKey)?;
        let record = encrypt_record(public, &event.to_canonical_bytes(), rng)?;
        let mut payload = vec![PAYLOAD_EVENT];
        payload.extend_from_slice(&record.to_bytes(public.group()));
        Ok(self.store.append(&payload, occurred_at)?)
    }

    fn append_audit<R: RngCore + CryptoRng>(
        &mut self,
        audit: &AuditEvent,
        rng: &mut R,
    ) -> Result<ChainEntry, ServiceError> {
        let public = self
            .config
            .public_key
            .as_ref()
            .ok_or(ServiceError::NoPublicKey)?;
        let record = encrypt_record(public, &audit.to_canonical_bytes(), rng)?;
        let mut payload = vec![PAYLOAD_AUDIT];
        payload.extend_from_slice(&record.to_bytes(public.group()));
        Ok(self.store.append(&payload, audit.at)?)
    }

    /// Recomputes the hash chain over the whole store or an inclusive
    /// range. A full verification also cross-checks locally anchored
    /// heads, catching a store that was rolled back or rewritten and
    /// re-chained since a head was anchored.
    pub fn verify(&self, from: Option<u64>, to: Option<u64>) -> Result<VerifyReport, ServiceError> {
        match (from, to) {
            (None, None) => {
                let report = self.store.verify()?;
                if report.intact() {
                    self.check_anchors()?;
                }
                Ok(report)
            }
            (from, to) => {
                let count = self.store.count();
                let from = from.unwrap_or(0);
                let to = to.unwrap_or_else(|| count.saturating_sub(1));
                Ok(self.store.verify_range(from, to)?)
            }
        }
    }

    /// The configured anchor sink. Relative file sinks resolve against
    /// the site root, so they don't wander with the caller's working
    /// directory.
    fn anchor_sink(&self) -> AnchorSink {
        match &self.config.anchor {
            Some(url) => match AnchorSink::parse(url) {
                AnchorSink::File(path) if path.is_relative() => {
                    AnchorSink::File(self.root.join(path))
                }
                sink => sink,
            },
            None => AnchorSink::File(self.root.join(HEADS_DIR).join(DEFAULT_ANCHOR_FILE)),
        }
    }

    /// Compares every locally anchored head against the chain as stored.
    /// An anchored count beyond the store is a rollback; a differing
    /// hash at an anchored count is a rewrite. Remote (HTTP) sinks can't
    /// be read back and are skipped.
    fn check_anchors(&self) -> Result<(), ServiceError> {
        let AnchorSink::File(path) = self.anchor_sink() else {
            return Ok(());
        };
        if !path.exists() {
            return Ok(());
        }
        for anchored in read_anchored_heads(&path)? {
            if anchored.count > self.store.count() {
                return Err(ServiceError::Store(StoreError::AnchorRegression {
                    anchored: anchored.count,
                    current: self.store.count(),
                }));
            }
            if self.store.head_at(anchored.count)? != anchored {
                return Err(ServiceError::Store(StoreError::AnchorDivergence {
                    count: anchored.count,
                }));
            }
        }
        Ok(())
    }

    /// Pushes the current head to the configured anchor sink (an HTTP
    /// endpoint if `anchor.url` is set, otherwise `heads/anchors`).
    pub fn anchor(&self) -> Result<(StoreHead, AnchorSink), ServiceError> {
        let sink = self.anchor_sink();
        let head = self.store.head();
        anchor_head(&head, &sink)?;
        Ok((head, sink))
    }

    pub fn read_entry(&self, seq: u64) -> Result<ChainEntry, ServiceError> {
        Ok(self.store.read(seq)?)
    }

    /// Raw store bytes, for off-site copies.
    pub fn export_binary(&self, out: &mut dyn Write) -> Result<(), ServiceError> {
        let bytes = fs::read(self.store.path())?;
        out.write_all(&bytes)?;
        Ok(())
    }

    /// Human-readable chain listing: metadata only, payloads stay
    /// encrypted.
    pub fn export_text(&self, out: &mut dyn Write) -> Result<(), ServiceError> {
        writeln!(out, "entries={}", self.store.count())?;
        writeln!(out, "head={}", hex::encode(self.store.head().head_hash))?;
        for seq in 0..self.store.count() {
            let entry = self.store.read(seq)?;
            let kind = match entry.payload.first() {
                Some(&PAYLOAD_EVENT) => "event",
                Some(&PAYLOAD_AUDIT) => "ceremony-audit",
                _ => "unknown",
            };
            writeln!(
                out,
                "seq={} time={} kind={} bytes={} hash={}",
                entry.seq,
                entry.timestamp,
                kind,
                entry.payload.len(),
                hex::encode(entry.entry_hash)
            )?;
        }
        Ok(())
    }

    // ---- ceremonies ----

    fn ceremony_file(&self, id: &str) -> PathBuf {
        self.root.join(CEREMONIES_DIR).join(id)
    }

    fn plan_digest(&self) -> Result<[u8; 32], ServiceError> {
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        Ok(sha256(&plan.to_canonical_bytes()))
    }

    fn persist_ceremony(
        &self,
        ceremony: &Ceremony,
        opened_at: u64,
        files: &[ShareFileRef],
    ) -> Result<(), ServiceError> {
        debug_assert_eq!(ceremony.submissions().len(), files.len());
        let mut doc = Doc::new();
        doc.set("ceremony", ceremony.id());
        doc.set("opened_at", opened_at.to_string());
        doc.set("status", ceremony.status().as_str());
        doc.set("plan_digest", hex::encode(self.plan_digest()?));
        for (i, (submission, (path, digest))) in
            ceremony.submissions().iter().zip(files).enumerate()
        {
            let path_str = path.to_str().ok_or_else(|| {
                ServiceError::MalformedCeremonyState("share path is not UTF-8".to_string())
            })?;
            doc.set(
                format!("submission.{i:04}.participant"),
                submission.participant.clone(),
            );
            doc.set(
                format!("submission.{i:04}.leaf"),
                submission.node_path.clone(),
            );
            doc.set(
                format!("submission.{i:04}.at"),
                submission.at_unix.to_string(),
            );
            doc.set(format!("submission.{i:04}.file"), path_str);
            doc.set(
                format!("submission.{i:04}.file_digest"),
                hex::encode(digest),
            );
        }
        for (i, event) in ceremony.events().iter().enumerate() {
            doc.set(format!("event.{i:04}.at"), event.at_unix.to_string());
            doc.set(format!("event.{i:04}.kind"), event.kind.clone());
            doc.set(format!("event.{i:04}.detail"), event.detail.clone());
        }
        write_atomic(
            &self.ceremony_file(ceremony.id()),
            &doc.to_bytes_with_digest(),
        )?;
        Ok(())
    }

    fn parse_stored_ceremony(bytes: &[u8]) -> Result<StoredCeremony, ServiceError> {
        let malformed = |what: &str| ServiceError::MalformedCeremonyState(what.to_string());
        let doc = Doc::parse_with_digest(bytes)?;
        let id = doc.require("ceremony")?.to_string();
        let status = CeremonyStatus::parse(doc.require("status")?)
            .ok_or_else(|| malformed("unknown status"))?;
        let opened_at = doc.require_u64("opened_at")?;
        let plan_digest =
            hex32(doc.require("plan_digest")?).ok_or_else(|| malformed("bad plan digest"))?;
        let mut submissions = Vec::new();
        for i in 0.. {
            let Some(participant) = doc.get(&format!("submission.{i:04}.participant")) else {
                break;
            };
            submissions.push(StoredSubmission {
                participant: participant.to_string(),
                leaf: doc.require(&format!("submission.{i:04}.leaf"))?.to_string(),
                at: doc.require_u64(&format!("submission.{i:04}.at"))?,
                file: PathBuf::from(doc.require(&format!("submission.{i:04}.file"))?),
                file_digest: hex32(doc.require(&format!("submission.{i:04}.file_digest"))?)
                    .ok_or_else(|| malformed("bad share file digest"))?,
            });
        }
        let mut events = Vec::new();
        for i in 0.. {
            let Some(at) = doc.get(&format!("event.{i:04}.at")) else {
                break;
            };
            events.push(CeremonyEvent {
                at_unix: at.parse().map_err(|_| malformed("bad event timestamp"))?,
                kind: doc.require(&format!("event.{i:04}.kind"))?.to_string(),
                detail: doc.require(&format!("event.{i:04}.detail"))?.to_string(),
            });
        }
        Ok(StoredCeremony {
            id,
            status,
            opened_at,
            plan_digest,
            submissions,
            events,
        })
    }

    /// Every persisted ceremony, oldest first.
    fn list_ceremonies(&self) -> Result<Vec<StoredCeremony>, ServiceError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join(CEREMONIES_DIR))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "tmp") || !path.is_file() {
                continue;
            }
            out.push(Self::parse_stored_ceremony(&fs::read(&path)?)?);
        }
        out.sort_by(|a, b| (a.opened_at, &a.id).cmp(&(b.opened_at, &b.id)));
        Ok(out)
    }

    fn active_ceremony(&self) -> Result<Option<StoredCeremony>, ServiceError> {
        Ok(self
            .list_ceremonies()?
            .into_iter()
            .rev()
            .find(|c| matches!(c.status, CeremonyStatus::Open | CeremonyStatus::Satisfiable)))
    }

    /// Rebuilds a live ceremony from stored state, re-reading every
    /// submitted share file and refusing if any changed underneath us.
    fn load_ceremony(
        &self,
        stored: &StoredCeremony,
    ) -> Result<(Ceremony, Vec<ShareFileRef>), ServiceError> {
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        if self.plan_digest()? != stored.plan_digest {
            return Err(ServiceError::PlanChanged);
        }
        let mut submissions = Vec::with_capacity(stored.submissions.len());
        let mut files = Vec::with_capacity(stored.submissions.len());
        for sub in &stored.submissions {
            let bytes = fs::read(&sub.file)
                .map_err(|_| ServiceError::ShareFileChanged(sub.file.clone()))?;
            if sha256(&bytes) != sub.file_digest {
                return Err(ServiceError::ShareFileChanged(sub.file.clone()));
            }
            let share = Share::from_canonical_bytes(&bytes)?;
            if share.policy_path != sub.leaf {
                return Err(ServiceError::ShareFileChanged(sub.file.clone()));
            }
            submissions.push(Submission {
                participant: sub.participant.clone(),
                node_path: sub.leaf.clone(),
                share,
                at_unix: sub.at,
            });
            files.push((sub.file.clone(), sub.file_digest));
        }
        let ceremony = Ceremony::resume(
            stored.id.clone(),
            plan.clone(),
            stored.status,
            submissions,
            stored.events.clone(),
        )?;
        Ok((ceremony, files))
    }

    /// Opens a key-recovery ceremony. Only one may be accepting shares at
    /// a time.
    pub fn ceremony_open<R: RngCore + CryptoRng>(
        &mut self,
        at: u64,
        rng: &mut R,
    ) -> Result<String, ServiceError> {
        self.ensure_writable()?;
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        if let Some(active) = self.active_ceremony()? {
            return Err(ServiceError::CeremonyAlreadyActive(active.id));
        }
        let ceremony = Ceremony::open(plan.clone(), at, rng);
        let id = ceremony.id().to_string();
        self.persist_ceremony(&ceremony, at, &[])?;
        self.append_audit(
            &AuditEvent {
                kind: "ceremony-open".to_string(),
                ceremony_id: id.clone(),
                detail: String::new(),
                at,
            },
            rng,
        )?;
        Ok(id)
    }

    /// Validates and records one share file against the active ceremony.
    pub fn ceremony_submit(
        &mut self,
        at: u64,
        share_file: &Path,
    ) -> Result<(CeremonyStatus, String, String), ServiceError> {
        self.ensure_writable()?;
        let stored = self
            .active_ceremony()?
            .ok_or(ServiceError::NoActiveCeremony)?;
        let (mut ceremony, mut files) = self.load_ceremony(&stored)?;
        let bytes = fs::read(share_file)?;
        let share = Share::from_canonical_bytes(&bytes)?;
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        let participant = participant_for(plan, &share)?;
        let leaf = share.policy_path.clone();
        let status = ceremony.submit(at, &participant, share)?;
        files.push((share_file.to_path_buf(), sha256(&bytes)));
        self.persist_ceremony(&ceremony, stored.opened_at, &files)?;
        Ok((status, participant, leaf))
    }

    /// The most recent ceremony: the one accepting shares if any,
    /// otherwise the last opened.
    pub fn ceremony_status(&self) -> Result<CeremonyView, ServiceError> {
        let all = self.list_ceremonies()?;
        let stored = all
            .iter()
            .rev()
            .find(|c| matches!(c.status, CeremonyStatus::Open | CeremonyStatus::Satisfiable))
            .or_else(|| all.last())
            .ok_or(ServiceError::NoCeremony)?;
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        let mut per_leaf: BTreeMap<&str, usize> = BTreeMap::new();
        for sub in &stored.submissions {
            *per_leaf.entry(sub.leaf.as_str()).or_default() += 1;
        }
        let progress = plan
            .policy
            .leaves()
            .into_iter()
            .map(|(path, node)| {
                let PolicyNode::GroupLeaf { group_name, k, .. } = node else {
                    unreachable!("leaves() yields only group leaves");
                };
                LeafProgress {
                    have: per_leaf.get(path.as_str()).copied().unwrap_or(0),
                    node_path: path,
                    group_name: group_name.clone(),
                    need: *k as usize,
                }
            })
            .collect();
        Ok(CeremonyView {
            id: stored.id.clone(),
            status: stored.status,
            opened_at: stored.opened_at,
            submissions: stored.submissions.len(),
            progress,
        })
    }

    /// Proves the submitted shares reconstruct the key, then marks the
    /// ceremony reconstructed. The key itself is wiped before returning;
    /// decryption re-derives it from the recorded share files.
    pub fn ceremony_finish<R: RngCore + CryptoRng>(
        &mut self,
        at: u64,
        rng: &mut R,
    ) -> Result<CeremonyStatus, ServiceError> {
        self.ensure_writable()?;
        let stored = self
            .active_ceremony()?
            .ok_or(ServiceError::NoActiveCeremony)?;
        let (mut ceremony, files) = self.load_ceremony(&stored)?;
        let handle = ceremony.finish(at)?;
        drop(handle);
        self.persist_ceremony(&ceremony, stored.opened_at, &files)?;
        self.append_audit(
            &AuditEvent {
                kind: "ceremony-finish".to_string(),
                ceremony_id: stored.id.clone(),
                detail: format!("{} shares", files.len()),
                at,
            },
            rng,
        )?;
        Ok(CeremonyStatus::Reconstructed)
    }

    /// Decrypts entries `from..=to` after verifying the whole chain.
    /// Requires a reconstructed ceremony; re-derives the key from its
    /// share files, uses it in memory, and wipes it. A decryption-audit
    /// event is appended to the chain before results are returned.
    pub fn decrypt_range<R: RngCore + CryptoRng>(
        &mut self,
        from: u64,
        to: u64,
        at: u64,
        rng: &mut R,
    ) -> Result<DecryptOutcome, ServiceError> {
        self.ensure_writable()?;
        let public = self
            .config
            .public_key
            .clone()
            .ok_or(ServiceError::NoPublicKey)?;
        let stored = self
            .list_ceremonies()?
            .into_iter()
            .rev()
            .find(|c| c.status == CeremonyStatus::Reconstructed)
            .ok_or(ServiceError::NoReconstructedCeremony)?;

        let report = self.store.verify()?;
        if let Some(seq) = report.first_bad_seq {
            return Err(ServiceError::ChainCompromised(seq));
        }
        self.check_anchors()?;
        // Validate the range before touching key material.
        if from > to {
            return Err(StoreError::InvalidRange {
                from,
                to,
                count: self.store.count(),
            }
            .into());
        }
        let _ = self.store.read(from)?;
        let _ = self.store.read(to)?;

        let (ceremony, _) = self.load_ceremony(&stored)?;
        let plan = self.plan.as_ref().ok_or(ServiceError::NoPlan)?;
        let shares: Vec<Share> = ceremony
            .submissions()
            .iter()
            .map(|s| s.share.clone())
            .collect();
        let secret = reconstruct_key(plan, &shares)?;
        let private = PrivateKey::from_secret_bytes(public.group().clone(), secret.as_bytes())?;
        drop(secret); // zeroized on drop
        if private.key_id() != public.key_id() {
            return Err(ServiceError::KeyMismatch);
        }

        let mut records = Vec::new();
        for seq in from..=to {
            let entry = self.store.read(seq)?;
            let outcome = decrypt_entry(&private, seq, &entry.payload);
            records.push(RecordReport {
                seq,
                timestamp: entry.timestamp,
                outcome,
            });
        }
        drop(private);

        let audit = self.append_audit(
            &AuditEvent {
                kind: "decrypt".to_string(),
                ceremony_id: stored.id.clone(),
                detail: format!("records {from}..{to}"),
                at,
            },
            rng,
        )?;
        Ok(DecryptOutcome {
            ceremony_id: stored.id,
            records,
            audit_seq: audit.seq,
        })
    }
}

/// Maps a share back to the participant it was issued to.
fn participant_for(plan: &KeyFragmentationPlan, share: &Share) -> Result<String, ServiceError> {
    let Some(PolicyNode::GroupLeaf { members, .. }) = plan.policy.node_at(&share.policy_path)
    else {
        return Err(ServiceError::UnknownShare);
    };
    let index = share
        .participant_index
        .checked_sub(1)
        .ok_or(ServiceError::UnknownShare)?;
    members
        .get(index as usize)
        .cloned()
        .ok_or(ServiceError::UnknownShare)
}

fn decrypt_entry(
    private: &PrivateKey,
    seq: u64,
    payload: &[u8],
) -> Result<DecryptedEntry, ServiceError> {
    let (&kind, rest) = payload
        .split_first()
        .ok_or_else(|| ServiceError::MalformedPayload(seq, "empty payload".to_string()))?;
    let record = EncryptedRecord::from_bytes(rest)?;
    let plaintext = decrypt_record(private, &record)?;
    match kind {
        PAYLOAD_EVENT => Ok(DecryptedEntry::Event(LogEvent::from_canonical_bytes(
            &plaintext,
        )?)),
        PAYLOAD_AUDIT => Ok(DecryptedEntry::CeremonyAudit(
            AuditEvent::from_canonical_bytes(&plaintext)?,
        )),
        other => Err(ServiceError::MalformedPayload(
            seq,
            format!("unknown payload type {other:#04x}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use tempfile::TempDir;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    fn small_policy() -> PolicyNode {
        PolicyNode::group("operators", 2, &["ada", "grace", "edsger"])
    }

    fn site_with_key(dir: &TempDir) -> (Site, KeygenOutcome) {
        let root = dir.path().join("site");
        let mut site = Site::init(&root, None, None).unwrap();
        let mut r = rng();
        let outcome = site
            .keygen_and_fragment(
                &small_policy(),
                &GroupParams::test_small(),
                &dir.path().join("shares"),
                &mut r,
            )
            .unwrap();
        (site, outcome)
    }

    #[test]
    fn init_creates_layout_and_refuses_rerun() {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("site");
        let site = Site::init(&root, None, None).unwrap();
        assert!(root.join(CONFIG_FILE).is_file());
        assert!(root.join(STORE_FILE).is_file());
        assert!(root.join(HEADS_DIR).is_dir());
        assert!(root.join(CEREMONIES_DIR).is_dir());
        drop(site);
        assert!(matches!(
            Site::init(&root, None, None),
            Err(ServiceError::SiteExists(_))
        ));
        Site::open(&root, None).unwrap();
    }

    #[test]
    fn open_requires_initialized_site() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            Site::open(&dir.path().join("nope"), None),
            Err(ServiceError::SiteMissing(_))
        ));
    }

    #[test]
    fn keygen_writes_shares_and_refuses_rerun() {
        let dir = TempDir::new().unwrap();
        let (mut site, outcome) = site_with_key(&dir);
        assert_eq!(outcome.share_files.len(), 3);
        for issued in &outcome.share_files {
            let share = Share::from_canonical_bytes(&fs::read(&issued.path).unwrap()).unwrap();
            assert_eq!(share.share_id, issued.share_id);
        }
        assert!(site.config().public_key.is_some());
        let mut r = rng();
        assert!(matches!(
            site.keygen_and_fragment(
                &small_policy(),
                &GroupParams::test_small(),
                dir.path(),
                &mut r
            ),
            Err(ServiceError::KeyAlreadyGenerated)
        ));
        // Survives reopen.
        let root = site.root().to_path_buf();
        drop(site);
        let site = Site::open(&root, None).unwrap();
        assert!(site.plan().is_some());
        assert_eq!(
            site.config().public_key.as_ref().unwrap().key_id(),
            &outcome.key_id
        );
    }

    #[test]
    fn config_rejects_private_material() {
        let dir = TempDir::new().unwrap();
        let (site, _) = site_with_key(&dir);
        let root = site.root().to_path_buf();
        drop(site);
        let mut doc = Doc::new();
        doc.set("devices", "");
        doc.set("group.x", "6");
        fs::write(root.join(CONFIG_FILE), doc.to_bytes_with_digest()).unwrap();
        assert!(matches!(
            Site::open(&root, None),
            Err(ServiceError::PrivateMaterialInConfig(key)) if key == "group.x"
        ));
    }

    #[test]
    fn device_registry_round_trips() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        site.register_device("door-7").unwrap();
        assert!(matches!(
            site.register_device("door-7"),
            Err(ServiceError::DeviceAlreadyRegistered(_))
        ));
        assert!(matches!(
            site.register_device("bad device"),
            Err(ServiceError::InvalidName { .. })
        ));
        let root = site.root().to_path_buf();
        drop(site);
        let site = Site::open(&root, None).unwrap();
        assert_eq!(site.config().devices, vec!["door-7".to_string()]);
    }

    #[test]
    fn log_event_requires_known_device() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        let mut r = rng();
        assert!(matches!(
            site.log_event("ghost", "u", Action::Login, "", 1, &mut r),
            Err(ServiceError::DeviceNotRegistered(_))
        ));
        assert!(matches!(
            site.log_event("", "u", Action::Login, "", 1, &mut r),
            Err(ServiceError::Event(EventError::EmptyDeviceId))
        ));
        site.register_device("door-7").unwrap();
        let entry = site
            .log_event("door-7", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        assert_eq!(entry.seq, 0);
        assert_eq!(entry.payload[0], PAYLOAD_EVENT);
        assert_eq!(site.count(), 1);
    }

    /// Full cycle: log events, run a ceremony from share files, decrypt,
    /// and find the audit trail in the chain.
    #[test]
    fn ceremony_and_decrypt_round_trip() {
        let dir = TempDir::new().unwrap();
        let (mut site, outcome) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("door-7").unwrap();
        site.log_event("door-7", "alice", Action::Login, "badge", 100, &mut r)
            .unwrap();
        site.log_event("door-7", "bob", Action::Logout, "", 160, &mut r)
            .unwrap();

        let mut r = rng();
        assert!(matches!(
            site.decrypt_range(0, 1, 200, &mut r),
            Err(ServiceError::NoReconstructedCeremony)
        ));

        site.ceremony_open(200, &mut r).unwrap();
        assert_eq!(site.count(), 3); // audit entry appended
        assert!(matches!(
            site.ceremony_open(201, &mut r),
            Err(ServiceError::CeremonyAlreadyActive(_))
        ));

        let (status, who, _) = site
            .ceremony_submit(210, &outcome.share_files[0].path)
            .unwrap();
        assert_eq!(status, CeremonyStatus::Open);
        assert_eq!(who, "ada");
        // Resume across a reopen mid-ceremony.
        let root = site.root().to_path_buf();
        drop(site);
        let mut site = Site::open(&root, None).unwrap();
        let view = site.ceremony_status().unwrap();
        assert_eq!(view.status, CeremonyStatus::Open);
        assert_eq!(view.progress[0].have, 1);

        let (status, who, _) = site
            .ceremony_submit(220, &outcome.share_files[2].path)
            .unwrap();
        assert_eq!(status, CeremonyStatus::Satisfiable);
        assert_eq!(who, "edsger");

        site.ceremony_finish(230, &mut r).unwrap();
        assert!(matches!(
            site.ceremony_submit(231, &outcome.share_files[1].path),
            Err(ServiceError::NoActiveCeremony)
        ));

        let out = site.decrypt_range(0, 1, 240, &mut r).unwrap();
        assert_eq!(out.records.len(), 2);
        let DecryptedEntry::Event(first) = out.records[0].outcome.as_ref().unwrap() else {
            panic!("expected an event");
        };
        assert_eq!(first.user_ref, "alice");
        assert_eq!(first.action, Action::Login);
        let DecryptedEntry::Event(second) = out.records[1].outcome.as_ref().unwrap() else {
            panic!("expected an event");
        };
        assert_eq!(second.user_ref, "bob");

        // The decrypt itself left an audit entry; decrypt it too.
        let out2 = site
            .decrypt_range(out.audit_seq, out.audit_seq, 250, &mut r)
            .unwrap();
        let DecryptedEntry::CeremonyAudit(audit) = out2.records[0].outcome.as_ref().unwrap() else {
            panic!("expected an audit entry");
        };
        assert_eq!(audit.kind, "decrypt");
        assert_eq!(audit.detail, "records 0..1");
    }

    #[test]
    fn decrypt_aborts_on_chain_tamper() {
        let dir = TempDir::new().unwrap();
        let (mut site, outcome) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        site.ceremony_open(2, &mut r).unwrap();
        site.ceremony_submit(3, &outcome.share_files[0].path)
            .unwrap();
        site.ceremony_submit(4, &outcome.share_files[1].path)
            .unwrap();
        site.ceremony_finish(5, &mut r).unwrap();

        // Flip one payload byte behind the store's back.
        let store_path = site.root().join(STORE_FILE);
        let root = site.root().to_path_buf();
        drop(site);
        let mut bytes = fs::read(&store_path).unwrap();
        let at = bytes.len() - 40; // inside the last frame's payload
        bytes[at] ^= 1;
        fs::write(&store_path, &bytes).unwrap();

        let mut site = Site::open(&root, None).unwrap();
        assert!(matches!(
            site.decrypt_range(0, 0, 9, &mut r),
            Err(ServiceError::ChainCompromised(_))
        ));
    }

    #[test]
    fn tampered_share_file_is_refused_on_load() {
        let dir = TempDir::new().unwrap();
        let (mut site, outcome) = site_with_key(&dir);
        let mut r = rng();
        site.ceremony_open(1, &mut r).unwrap();
        site.ceremony_submit(2, &outcome.share_files[0].path)
            .unwrap();
        let mut bytes = fs::read(&outcome.share_files[0].path).unwrap();
        let len = bytes.len();
        bytes[len - 2] ^= 1;
        fs::write(&outcome.share_files[0].path, &bytes).unwrap();
        assert!(matches!(
            site.ceremony_submit(3, &outcome.share_files[1].path),
            Err(ServiceError::ShareFileChanged(_))
        ));
    }

    #[test]
    fn finish_requires_satisfiable() {
        let dir = TempDir::new().unwrap();
        let (mut site, outcome) = site_with_key(&dir);
        let mut r = rng();
        site.ceremony_open(1, &mut r).unwrap();
        site.ceremony_submit(2, &outcome.share_files[0].path)
            .unwrap();
        assert!(matches!(
            site.ceremony_finish(3, &mut r),
            Err(ServiceError::Ceremony(CeremonyError::NotSatisfiable))
        ));
    }

    #[test]
    fn anchor_defaults_to_heads_file() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        let (head, sink) = site.anchor().unwrap();
        assert_eq!(head.count, 1);
        let AnchorSink::File(path) = &sink else {
            panic!("expected file sink")
        };
        let heads = crate::store::read_anchored_heads(path).unwrap();
        assert_eq!(heads, vec![head]);
    }

    #[test]
    fn relative_anchor_path_resolves_against_the_site() {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("site");
        let mut site = Site::init(&root, None, Some("heads/anchors")).unwrap();
        let policy = PolicyNode::group("g", 1, &["p"]);
        let mut r = rng();
        site.keygen_and_fragment(&policy, &GroupParams::test_small(), dir.path(), &mut r)
            .unwrap();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        let (head, sink) = site.anchor().unwrap();
        let AnchorSink::File(path) = &sink else {
            panic!("expected file sink")
        };
        assert!(
            path.starts_with(&root),
            "sink {} should live under the site",
            path.display()
        );
        assert_eq!(crate::store::read_anchored_heads(path).unwrap(), vec![head]);
    }

    #[test]
    fn verify_cross_checks_anchored_heads() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "a", 1, &mut r)
            .unwrap();
        site.log_event("d", "u", Action::Logout, "b", 2, &mut r)
            .unwrap();
        site.anchor().unwrap();
        assert!(site.verify(None, None).unwrap().intact());
        let root = site.root().to_path_buf();
        let store_path = root.join(STORE_FILE);
        let first_frame = 5 + 56 + site.read_entry(0).unwrap().payload.len() as u64 + 32;
        drop(site);

        // Roll the store back to one entry: the chain alone is intact,
        // the anchor says otherwise.
        let pristine = fs::read(&store_path).unwrap();
        fs::write(&store_path, &pristine[..first_frame as usize]).unwrap();
        let site = Site::open_read_only(&root, None).unwrap();
        assert!(matches!(
            site.verify(None, None),
            Err(ServiceError::Store(StoreError::AnchorRegression {
                anchored: 2,
                current: 1
            }))
        ));
        drop(site);

        // Replace it with a self-consistent chain of the same length:
        // rewrite, not extension.
        fs::remove_file(&store_path).unwrap();
        let mut forged = Store::create(&store_path).unwrap();
        forged.append(b"forged 1", 1).unwrap();
        forged.append(b"forged 2", 2).unwrap();
        drop(forged);
        let site = Site::open_read_only(&root, None).unwrap();
        assert!(matches!(
            site.verify(None, None),
            Err(ServiceError::Store(StoreError::AnchorDivergence {
                count: 2
            }))
        ));
    }

    #[test]
    fn read_only_site_refuses_writes_but_verifies() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        let root = site.root().to_path_buf();
        drop(site);
        let mut ro = Site::open_read_only(&root, None).unwrap();
        assert!(ro.verify(None, None).unwrap().intact());
        assert!(matches!(
            ro.register_device("x1"),
            Err(ServiceError::ReadOnlySite)
        ));
        assert!(matches!(
            ro.log_event("d", "u", Action::Login, "", 2, &mut r),
            Err(ServiceError::ReadOnlySite)
        ));
    }

    #[test]
    fn export_text_lists_entry_kinds() {
        let dir = TempDir::new().unwrap();
        let (mut site, _) = site_with_key(&dir);
        let mut r = rng();
        site.register_device("d").unwrap();
        site.log_event("d", "u", Action::Login, "", 1, &mut r)
            .unwrap();
        site.ceremony_open(2, &mut r).unwrap();
        let mut text = Vec::new();
        site.export_text(&mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.contains("entries=2"));
        assert!(text.contains("kind=event"));
        assert!(text.contains("kind=ceremony-audit"));

        let mut raw = Vec::new();
        site.export_binary(&mut raw).unwrap();
        assert_eq!(raw, fs::read(site.root().join(STORE_FILE)).unwrap());
    }
}
