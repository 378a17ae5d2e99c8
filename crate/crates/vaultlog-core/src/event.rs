//! Structured authentication events.
//!
//! An event records who did what on which device and when. Serialization
//! uses the canonical sorted-key text form, so a given event always
//! produces the same bytes — ciphertext commitments are reproducible
//! under fixed randomness.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::canonical::{Doc, DocError};

#[derive(Debug, Error)]
pub enum EventError {
    #[error("device id must not be empty")]
    EmptyDeviceId,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error("malformed event: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Login,
    Logout,
    Operation,
    Custom,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Login => "login",
            Action::Logout => "logout",
            Action::Operation => "operation",
            Action::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self, EventError> {
        match s {
            "login" => Ok(Action::Login),
            "logout" => Ok(Action::Logout),
            "operation" => Ok(Action::Operation),
            "custom" => Ok(Action::Custom),
            other => Err(EventError::UnknownAction(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub event_id: [u8; 16],
    pub device_id: String,
    pub user_ref: String,
    pub action: Action,
    pub detail: String,
    pub occurred_at: u64,
}

impl LogEvent {
    pub fn new<R: RngCore + CryptoRng>(
        device_id: &str,
        user_ref: &str,
        action: Action,
        detail: &str,
        occurred_at: u64,
        rng: &mut R,
    ) -> Result<Self, EventError> {
        if device_id.is_empty() {
            return Err(EventError::EmptyDeviceId);
        }
        let mut event_id = [0u8; 16];
        rng.fill_bytes(&mut event_id);
        Ok(Self {
            event_id,
            device_id: device_id.to_string(),
            user_ref: user_ref.to_string(),
            action,
            detail: detail.to_string(),
            occurred_at,
        })
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        doc.set("action", self.action.as_str());
        doc.set("detail", self.detail.clone());
        doc.set("device_id", self.device_id.clone());
        doc.set("event_id", hex::encode(self.event_id));
        doc.set("occurred_at", self.occurred_at.to_string());
        doc.set("user_ref", self.user_ref.clone());
        doc.to_bytes_with_digest()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, EventError> {
        let doc = Doc::parse_with_digest(bytes)?;
        let event_id: [u8; 16] = hex::decode(doc.require("event_id")?)
            .ok()
            .and_then(|raw| raw.try_into().ok())
            .ok_or_else(|| EventError::Malformed("event_id must be 16 hex bytes".to_string()))?;
        let device_id = doc.require("device_id")?.to_string();
        if device_id.is_empty() {
            return Err(EventError::EmptyDeviceId);
        }
        Ok(Self {
            event_id,
            device_id,
            user_ref: doc.require("user_ref")?.to_string(),
            action: Action::parse(doc.require("action")?)?,
            detail: doc.require("detail")?.to_string(),
            occurred_at: doc.require_u64("occurred_at")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn events_round_trip_canonically() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let event = LogEvent::new(
            "terminal-7",
            "employee:1042",
            Action::Login,
            "badge + pin\nsecond line",
            1_700_000_000,
            &mut rng,
        )
        .unwrap();
        let bytes = event.to_canonical_bytes();
        let parsed = LogEvent::from_canonical_bytes(&bytes).unwrap();
        assert_eq!(parsed, event);
        assert_eq!(parsed.to_canonical_bytes(), bytes);
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = LogEvent::new("d", "u", Action::Logout, "", 5, &mut rng).unwrap();
        assert_eq!(a.to_canonical_bytes(), a.clone().to_canonical_bytes());
        let mut rng2 = ChaCha20Rng::seed_from_u64(3);
        let b = LogEvent::new("d", "u", Action::Logout, "", 5, &mut rng2).unwrap();
        assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes());
    }

    #[test]
    fn empty_device_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(matches!(
            LogEvent::new("", "u", Action::Login, "", 1, &mut rng),
            Err(EventError::EmptyDeviceId)
        ));
    }

    #[test]
    fn unknown_actions_are_rejected() {
        assert!(matches!(
            Action::parse("reboot"),
            Err(EventError::UnknownAction(_))
        ));
        for action in [
            Action::Login,
            Action::Logout,
            Action::Operation,
            Action::Custom,
        ] {
            assert_eq!(Action::parse(action.as_str()).unwrap(), action);
        }
    }
}
