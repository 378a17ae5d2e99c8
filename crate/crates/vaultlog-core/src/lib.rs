//! Encrypted, tamper-evident audit logging with threshold-escrowed keys.
//!
//! Log events are encrypted under a site public key and appended to a
//! hash-chained, append-only store whose head can be anchored externally.
//! The matching private key is never stored whole: it is fragmented across
//! an access-policy tree combining AND splits with (k, n) threshold
//! sharing, so decryption requires an explicit multi-party ceremony.

pub mod canonical;
pub mod ceremony;
pub mod envelope;
pub mod event;
pub mod field;
pub mod policy;
pub mod service;
pub mod sharing;
pub mod store;
