//! `vlog`: encrypted, tamper-evident audit logging with
//! threshold-escrowed decryption.
//!
//! Exit codes: 0 success, 1 usage or validation, 2 integrity failure,
//! 3 I/O failure, 4 policy not satisfied, 5 cryptographic failure.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use vaultlog_core::ceremony::CeremonyError;
use vaultlog_core::envelope::GroupParams;
use vaultlog_core::event::Action;
use vaultlog_core::policy::{PolicyError, PolicyNode};
use vaultlog_core::service::{DecryptedEntry, ServiceError, Site};
use vaultlog_core::store::StoreError;

#[derive(Parser)]
#[command(
    name = "vlog",
    version,
    about = "Encrypted, tamper-evident audit logging"
)]
struct Cli {
    /// Site directory
    #[arg(long, global = true, default_value = "./vaultlog-site")]
    site: PathBuf,
    /// Alternate config file (default: <site>/config)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for deterministic randomness; omit for system entropy
    #[arg(long, global = true)]
    seed: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a fresh site directory
    Init {
        /// Anchor sink: an http(s) URL or a file path
        #[arg(long)]
        anchor: Option<String>,
    },
    /// Generate the site keypair and split the private key into share files
    Keygen {
        /// Policy file describing groups and thresholds
        #[arg(long)]
        policy: PathBuf,
        /// Directory receiving one share file per participant
        #[arg(long)]
        out: PathBuf,
    },
    /// Allow a device to append events
    RegisterDevice { id: String },
    /// Encrypt and append one event
    Log {
        #[arg(long)]
        device: String,
        #[arg(long)]
        user: String,
        #[arg(long)]
        action: ActionKind,
        #[arg(long, default_value = "")]
        detail: String,
        /// Event time as a unix timestamp (default: now)
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Recompute the hash chain over the whole store or a range
    Verify {
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
    /// Print the chain head; --anchor also pushes it to the anchor sink
    Head {
        #[arg(long)]
        anchor: bool,
    },
    /// Key-recovery ceremonies
    Ceremony {
        #[command(subcommand)]
        action: CeremonyCmd,
    },
    /// Decrypt entries from..=to (requires a completed ceremony)
    Decrypt {
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
        /// Write plaintext to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Dump the chain to stdout
    Export {
        #[arg(long, value_enum)]
        format: ExportFormat,
    },
}

#[derive(Subcommand)]
enum CeremonyCmd {
    /// Start collecting shares
    Open {
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Submit one participant's share file
    Submit {
        #[arg(long)]
        share: PathBuf,
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Show the current ceremony and per-group progress
    Status,
    /// Prove the key is reconstructable and enable decryption
    Finish {
        #[arg(long)]
        timestamp: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ActionKind {
    Login,
    Logout,
    Operation,
    Custom,
}

impl From<ActionKind> for Action {
    fn from(kind: ActionKind) -> Self {
        match kind {
            ActionKind::Login => Action::Login,
            ActionKind::Logout => Action::Logout,
            ActionKind::Operation => Action::Operation,
            ActionKind::Custom => Action::Custom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Text,
    Binary,
}

fn exit_code(err: &ServiceError) -> i32 {
    use ServiceError as E;
    match err {
        // Policy not satisfied.
        E::NoReconstructedCeremony
        | E::Ceremony(CeremonyError::NotSatisfiable)
        | E::Ceremony(CeremonyError::Policy(PolicyError::PolicyUnsatisfied { .. }))
        | E::Policy(PolicyError::PolicyUnsatisfied { .. }) => 4,
        // Integrity.
        E::ChainCompromised(_)
        | E::Store(StoreError::CorruptStore { .. })
        | E::Store(StoreError::NotAStore)
        | E::Store(StoreError::UnsupportedVersion(_))
        | E::Store(StoreError::AnchorRegression { .. })
        | E::Store(StoreError::AnchorDivergence { .. })
        | E::Store(StoreError::MalformedHead) => 2,
        // I/O.
        E::Store(StoreError::Io(_)) | E::Store(StoreError::SinkUnreachable(_)) | E::Io(_) => 3,
        // Cryptographic material.
        E::Envelope(_)
        | E::Sharing(_)
        | E::KeyMismatch
        | E::ShareFileChanged(_)
        | E::MalformedPayload(..)
        | E::Policy(PolicyError::InconsistentReconstruction { .. }) => 5,
        // Everything else is usage or validation.
        _ => 1,
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn make_rng(seed: Option<&str>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::from_seed(Sha256::digest(s.as_bytes()).into()),
        None => ChaCha20Rng::from_rng(rand::rngs::OsRng).expect("system entropy available"),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                std::process::exit(0);
            }
            eprint!("{err}");
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn run(cli: Cli) -> Result<i32, ServiceError> {
    let mut rng = make_rng(cli.seed.as_deref());
    let site_dir = cli.site;
    let config = cli.config.as_deref();
    match cli.command {
        Command::Init { anchor } => {
            let site = Site::init(&site_dir, config, anchor.as_deref())?;
            println!("initialized site at {}", site.root().display());
            Ok(0)
        }
        Command::Keygen { policy, out } => {
            let mut site = Site::open(&site_dir, config)?;
            let node = PolicyNode::from_file_bytes(&std::fs::read(&policy)?)?;
            let outcome =
                site.keygen_and_fragment(&node, &GroupParams::modp_2048(), &out, &mut rng)?;
            println!("key id {}", hex::encode(outcome.key_id));
            println!("issued {} shares:", outcome.share_files.len());
            for f in &outcome.share_files {
                println!(
                    "  {}\t{}\t{}\t{}",
                    f.participant,
                    f.group_name,
                    f.share_id,
                    f.path.display()
                );
            }
            Ok(0)
        }
        Command::RegisterDevice { id } => {
            let mut site = Site::open(&site_dir, config)?;
            site.register_device(&id)?;
            println!("registered device {id}");
            Ok(0)
        }
        Command::Log {
            device,
            user,
            action,
            detail,
            timestamp,
        } => {
            let mut site = Site::open(&site_dir, config)?;
            let at = timestamp.unwrap_or_else(now_unix);
            let entry = site.log_event(&device, &user, action.into(), &detail, at, &mut rng)?;
            println!("appended entry {}", entry.seq);
            Ok(0)
        }
        Command::Verify { from, to } => {
            let site = Site::open_read_only(&site_dir, config)?;
            let report = site.verify(from, to)?;
            match report.first_bad_seq {
                None => {
                    println!(
                        "intact: {} entries checked, head {}",
                        report.checked,
                        hex::encode(report.head.head_hash)
                    );
                    Ok(0)
                }
                Some(seq) => {
                    println!(
                        "TAMPERED: first bad entry {seq} ({} checked)",
                        report.checked
                    );
                    Ok(2)
                }
            }
        }
        Command::Head { anchor } => {
            let head = if anchor {
                let site = Site::open(&site_dir, config)?;
                let (head, sink) = site.anchor()?;
                println!("count={} head={}", head.count, hex::encode(head.head_hash));
                println!("anchored to {sink}");
                head
            } else {
                let site = Site::open_read_only(&site_dir, config)?;
                let head = site.head();
                println!("count={} head={}", head.count, hex::encode(head.head_hash));
                head
            };
            let _ = head;
            Ok(0)
        }
        Command::Ceremony { action } => match action {
            CeremonyCmd::Open { timestamp } => {
                let mut site = Site::open(&site_dir, config)?;
                let id = site.ceremony_open(timestamp.unwrap_or_else(now_unix), &mut rng)?;
                println!("opened ceremony {id}");
                Ok(0)
            }
            CeremonyCmd::Submit { share, timestamp } => {
                let mut site = Site::open(&site_dir, config)?;
                let (status, participant, leaf) =
                    site.ceremony_submit(timestamp.unwrap_or_else(now_unix), &share)?;
                println!(
                    "accepted share from {participant} for {leaf}; ceremony is {}",
                    status.as_str()
                );
                Ok(0)
            }
            CeremonyCmd::Status => {
                let site = Site::open_read_only(&site_dir, config)?;
                let view = site.ceremony_status()?;
                println!("ceremony {} is {}", view.id, view.status.as_str());
                println!("submissions: {}", view.submissions);
                for leaf in &view.progress {
                    println!(
                        "  {} ({}): {}/{}",
                        leaf.group_name, leaf.node_path, leaf.have, leaf.need
                    );
                }
                Ok(0)
            }
            CeremonyCmd::Finish { timestamp } => {
                let mut site = Site::open(&site_dir, config)?;
                site.ceremony_finish(timestamp.unwrap_or_else(now_unix), &mut rng)?;
                println!("ceremony finished: key reconstructable, decryption enabled");
                Ok(0)
            }
        },
        Command::Decrypt {
            from,
            to,
            out,
            timestamp,
        } => {
            let mut site = Site::open(&site_dir, config)?;
            let outcome =
                site.decrypt_range(from, to, timestamp.unwrap_or_else(now_unix), &mut rng)?;
            let mut sink: Box<dyn Write> = match &out {
                Some(path) => {
                    eprintln!("warning: writing decrypted plaintext to {}", path.display());
                    Box::new(std::fs::File::create(path)?)
                }
                None => Box::new(std::io::stdout().lock()),
            };
            let mut ok = 0usize;
            for record in &outcome.records {
                match &record.outcome {
                    Ok(DecryptedEntry::Event(e)) => {
                        ok += 1;
                        writeln!(
                            sink,
                            "seq={} time={} device={} user={} action={} detail={:?} id={}",
                            record.seq,
                            record.timestamp,
                            e.device_id,
                            e.user_ref,
                            e.action.as_str(),
                            e.detail,
                            hex::encode(e.event_id)
                        )?;
                    }
                    Ok(DecryptedEntry::CeremonyAudit(a)) => {
                        ok += 1;
                        writeln!(
                            sink,
                            "seq={} time={} ceremony-audit kind={} ceremony={} detail={:?}",
                            record.seq, record.timestamp, a.kind, a.ceremony_id, a.detail
                        )?;
                    }
                    Err(err) => eprintln!("seq={} FAILED: {err}", record.seq),
                }
            }
            sink.flush()?;
            eprintln!(
                "decrypted {ok} of {} entries; audit appended at seq={}",
                outcome.records.len(),
                outcome.audit_seq
            );
            Ok(0)
        }
        Command::Export { format } => {
            let site = Site::open_read_only(&site_dir, config)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match format {
                ExportFormat::Text => site.export_text(&mut out)?,
                ExportFormat::Binary => site.export_binary(&mut out)?,
            }
            Ok(0)
        }
    }
}
