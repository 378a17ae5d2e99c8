//! Public-key envelope for log records.
//!
//! Devices hold only a public key and can therefore encrypt but never
//! read. Each record gets a fresh KEM/DEM envelope over a safe-prime
//! multiplicative group: encapsulation c1 = g^r, shared secret y^r, and a
//! record key derived by hashing the shared secret with a random nonce.
//! The DEM is a hash-counter XOR keystream with an encrypt-then-MAC style
//! tag over the ciphertext; the tag verifies before any plaintext is
//! produced.
//!
//! Every derivation is fixed bit-for-bit (domain strings "vaultlog-kem"
//! and "tag", fixed-width big-endian encodings), so records are
//! reproducible from their inputs and independently checkable.

use std::sync::LazyLock;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::Doc;
use crate::field::is_prime;
use crate::sharing::SecretValue;

const RECORD_MAGIC: &[u8; 4] = b"VLG1";
const RECORD_VERSION: u8 = 1;
const KEM_DOMAIN: &[u8] = b"vaultlog-kem";
const TAG_DOMAIN: &[u8] = b"tag";

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("invalid group parameters: {0}")]
    InvalidGroup(&'static str),
    #[error("private exponent out of range")]
    InvalidExponent,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("record was encrypted under a different key")]
    KeyIdMismatch,
    #[error("integrity tag mismatch: record tampered or wrong key")]
    TagMismatch,
    #[error("malformed record: {0}")]
    MalformedRecord(String),
}

/// A multiplicative group modulo a safe prime, with generator g.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    p: BigUint,
    g: BigUint,
    byte_len: usize,
}

/// RFC 3526 MODP-2048 prime (group 14), generator 2.
const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

static MODP_2048: LazyLock<GroupParams> = LazyLock::new(|| {
    let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("constant parses");
    GroupParams::new(p, BigUint::from(2u32)).expect("RFC 3526 group 14 is a safe-prime group")
});

static TEST_SMALL: LazyLock<GroupParams> = LazyLock::new(|| {
    GroupParams::new(BigUint::from(23u32), BigUint::from(5u32)).expect("23 is a safe prime")
});

impl GroupParams {
    /// Validates that p is a safe prime (p and (p-1)/2 both prime) and
    /// that 1 < g < p-1.
    pub fn new(p: BigUint, g: BigUint) -> Result<Self, EnvelopeError> {
        if !is_prime(&p) {
            return Err(EnvelopeError::InvalidGroup("modulus is not prime"));
        }
        let q = (&p - BigUint::one()) >> 1;
        if q <= BigUint::one() || !is_prime(&q) {
            return Err(EnvelopeError::InvalidGroup("modulus is not a safe prime"));
        }
        if g <= BigUint::one() || g >= &p - BigUint::one() {
            return Err(EnvelopeError::InvalidGroup("generator out of range"));
        }
        let byte_len = (p.bits() as usize).div_ceil(8);
        Ok(Self { p, g, byte_len })
    }

    /// Production group: 2048-bit MODP group from RFC 3526.
    pub fn modp_2048() -> Self {
        MODP_2048.clone()
    }

    /// Small published safe prime for tests and examples: p=23, g=5.
    pub fn test_small() -> Self {
        TEST_SMALL.clone()
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    /// Fixed-width big-endian encoding of a group element.
    fn encode(&self, value: &BigUint) -> Vec<u8> {
        let raw = if value.is_zero() {
            Vec::new()
        } else {
            value.to_bytes_be()
        };
        let mut out = vec![0u8; self.byte_len - raw.len()];
        out.extend_from_slice(&raw);
        out
    }

    /// Embeds the group into a canonical document.
    pub fn write_into(&self, doc: &mut Doc) {
        doc.set("group.p", self.p.to_string());
        doc.set("group.g", self.g.to_string());
    }

    pub fn read_from(doc: &Doc) -> Result<Self, EnvelopeError> {
        let parse =
            |key: &str| -> Result<BigUint, EnvelopeError> {
                doc.get(key).and_then(|v| v.parse::<BigUint>().ok()).ok_or(
                    EnvelopeError::InvalidGroup("missing or malformed group parameter"),
                )
            };
        Self::new(parse("group.p")?, parse("group.g")?)
    }
}

/// Public half of a keypair: enough to encrypt, never to decrypt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    group: GroupParams,
    y: BigUint,
    key_id: [u8; 32],
}

/// SHA-256 over the canonical public encoding (g, p, y as decimal).
fn fingerprint(group: &GroupParams, y: &BigUint) -> [u8; 32] {
    let mut doc = Doc::new();
    group.write_into(&mut doc);
    doc.set("group.y", y.to_string());
    Sha256::digest(doc.to_bytes()).into()
}

impl PublicKey {
    pub fn group(&self) -> &GroupParams {
        &self.group
    }

    pub fn y(&self) -> &BigUint {
        &self.y
    }

    pub fn key_id(&self) -> &[u8; 32] {
        &self.key_id
    }

    pub fn write_into(&self, doc: &mut Doc) {
        self.group.write_into(doc);
        doc.set("group.y", self.y.to_string());
    }

    pub fn read_from(doc: &Doc) -> Result<Self, EnvelopeError> {
        let group = GroupParams::read_from(doc)?;
        let y = doc
            .get("group.y")
            .and_then(|v| v.parse::<BigUint>().ok())
            .ok_or(EnvelopeError::InvalidGroup(
                "missing or malformed public value",
            ))?;
        if y <= BigUint::one() || y >= group.p {
            return Err(EnvelopeError::InvalidGroup("public value out of range"));
        }
        let key_id = fingerprint(&group, &y);
        Ok(Self { group, y, key_id })
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut doc = Doc::new();
        self.write_into(&mut doc);
        doc.to_bytes_with_digest()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let doc = Doc::parse_with_digest(bytes)
            .map_err(|e| EnvelopeError::MalformedRecord(format!("public key file: {e}")))?;
        Self::read_from(&doc)
    }
}

/// Private half: the exponent x with y = g^x mod p.
#[derive(Clone)]
pub struct PrivateKey {
    group: GroupParams,
    x: BigUint,
    key_id: [u8; 32],
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PrivateKey(redacted, key_id {})",
            hex::encode(&self.key_id[..4])
        )
    }
}

impl PrivateKey {
    /// The exponent as fixed-width bytes — the exact secret handed to key
    /// fragmentation.
    pub fn to_secret_bytes(&self) -> SecretValue {
        SecretValue::new(self.group.encode(&self.x))
    }

    /// Rebuilds the private key from fragmented-and-reconstructed bytes.
    pub fn from_secret_bytes(group: GroupParams, bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.len() != group.byte_len {
            return Err(EnvelopeError::InvalidExponent);
        }
        let x = BigUint::from_bytes_be(bytes);
        Self::from_exponent(group, x)
    }

    fn from_exponent(group: GroupParams, x: BigUint) -> Result<Self, EnvelopeError> {
        if x.is_zero() || x >= &group.p - BigUint::one() {
            return Err(EnvelopeError::InvalidExponent);
        }
        let y = group.g.modpow(&x, &group.p);
        let key_id = fingerprint(&group, &y);
        Ok(Self { group, x, key_id })
    }

    pub fn key_id(&self) -> &[u8; 32] {
        &self.key_id
    }

    pub fn group(&self) -> &GroupParams {
        &self.group
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// Uniform x in [1, p-2], y = g^x.
pub fn keygen<R: RngCore + CryptoRng>(
    group: &GroupParams,
    rng: &mut R,
) -> Result<KeyPair, EnvelopeError> {
    let upper = &group.p - BigUint::from(2u32); // x-1 ranges over [0, p-3]
    let x = crate::field::random_below(rng, &upper) + BigUint::one();
    keygen_with_exponent(group, x)
}

/// Deterministic keypair for a fixed exponent; rejects x outside [1, p-2].
pub fn keygen_with_exponent(group: &GroupParams, x: BigUint) -> Result<KeyPair, EnvelopeError> {
    let private = PrivateKey::from_exponent(group.clone(), x)?;
    let public = PublicKey {
        group: group.clone(),
        y: group.g.modpow(&private.x, &group.p),
        key_id: private.key_id,
    };
    Ok(KeyPair { public, private })
}

/// One encrypted log record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedRecord {
    pub key_id: [u8; 32],
    pub nonce: [u8; 16],
    pub c1: BigUint,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; 32],
}

fn record_key(group: &GroupParams, shared: &BigUint, nonce: &[u8; 16]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(KEM_DOMAIN);
    hasher.update(group.encode(shared));
    hasher.update(nonce);
    hasher.finalize().into()
}

/// XORs data with the hash-counter keystream in place.
fn apply_keystream(key: &[u8; 32], data: &mut [u8]) {
    for (block_index, block) in data.chunks_mut(32).enumerate() {
        let mut hasher = Sha256::new();
        hasher.update(key);
        hasher.update((block_index as u64).to_be_bytes());
        let pad = hasher.finalize();
        for (byte, pad_byte) in block.iter_mut().zip(pad) {
            *byte ^= pad_byte;
        }
    }
}

fn compute_tag(key: &[u8; 32], ciphertext: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(key);
    hasher.update(TAG_DOMAIN);
    hasher.update(ciphertext);
    hasher.finalize().into()
}

fn tags_equal(a: &[u8; 32], b: &[u8; 32]) -> bool {
    // Fold the whole comparison so it does not short-circuit.
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub(crate) fn encrypt_with(
    public: &PublicKey,
    plaintext: &[u8],
    r: &BigUint,
    nonce: [u8; 16],
) -> Result<EncryptedRecord, EnvelopeError> {
    if plaintext.is_empty() {
        return Err(EnvelopeError::EmptyPlaintext);
    }
    let group = &public.group;
    let c1 = group.g.modpow(r, &group.p);
    let shared = public.y.modpow(r, &group.p);
    let key = record_key(group, &shared, &nonce);
    let mut ciphertext = plaintext.to_vec();
    apply_keystream(&key, &mut ciphertext);
    let tag = compute_tag(&key, &ciphertext);
    Ok(EncryptedRecord {
        key_id: public.key_id,
        nonce,
        c1,
        ciphertext,
        tag,
    })
}

/// Encrypts under the public key with a fresh ephemeral exponent and
/// nonce. Needs no secret: safe to run on any device.
pub fn encrypt_record<R: RngCore + CryptoRng>(
    public: &PublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<EncryptedRecord, EnvelopeError> {
    let upper = &public.group.p - BigUint::from(2u32);
    let r = crate::field::random_below(rng, &upper) + BigUint::one();
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    encrypt_with(public, plaintext, &r, nonce)
}

/// Verifies the tag, then decrypts. On any mismatch no plaintext is
/// returned.
pub fn decrypt_record(
    private: &PrivateKey,
    record: &EncryptedRecord,
) -> Result<Vec<u8>, EnvelopeError> {
    if !tags_equal(&record.key_id, &private.key_id) {
        return Err(EnvelopeError::KeyIdMismatch);
    }
    let group = &private.group;
    if record.c1.is_zero() || record.c1 >= group.p {
        return Err(EnvelopeError::MalformedRecord(
            "encapsulation out of range".to_string(),
        ));
    }
    let shared = record.c1.modpow(&private.x, &group.p);
    let key = record_key(group, &shared, &record.nonce);
    let expected_tag = compute_tag(&key, &record.ciphertext);
    if !tags_equal(&expected_tag, &record.tag) {
        return Err(EnvelopeError::TagMismatch);
    }
    let mut plaintext = record.ciphertext.clone();
    apply_keystream(&key, &mut plaintext);
    Ok(plaintext)
}

impl EncryptedRecord {
    /// Canonical binary layout: magic, version, key id, nonce,
    /// length-prefixed encapsulation, length-prefixed ciphertext, tag.
    pub fn to_bytes(&self, group: &GroupParams) -> Vec<u8> {
        let c1 = group.encode(&self.c1);
        let mut out =
            Vec::with_capacity(4 + 1 + 32 + 16 + 4 + c1.len() + 8 + self.ciphertext.len() + 32);
        out.extend_from_slice(RECORD_MAGIC);
        out.push(RECORD_VERSION);
        out.extend_from_slice(&self.key_id);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(c1.len() as u32).to_be_bytes());
        out.extend_from_slice(&c1);
        out.extend_from_slice(&(self.ciphertext.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let malformed = |what: &str| EnvelopeError::MalformedRecord(what.to_string());
        let mut at = 0usize;
        let mut take = |len: usize| -> Result<&[u8], EnvelopeError> {
            let end = at
                .checked_add(len)
                .ok_or_else(|| malformed("length overflow"))?;
            let slice = bytes
                .get(at..end)
                .ok_or_else(|| malformed("truncated record"))?;
            at = end;
            Ok(slice)
        };
        if take(4)? != RECORD_MAGIC {
            return Err(malformed("bad magic"));
        }
        if take(1)? != [RECORD_VERSION] {
            return Err(malformed("unsupported version"));
        }
        let key_id: [u8; 32] = take(32)?.try_into().expect("fixed width");
        let nonce: [u8; 16] = take(16)?.try_into().expect("fixed width");
        let c1_len = u32::from_be_bytes(take(4)?.try_into().expect("fixed width")) as usize;
        let c1 = BigUint::from_bytes_be(take(c1_len)?);
        let ct_len = u64::from_be_bytes(take(8)?.try_into().expect("fixed width")) as usize;
        let ciphertext = take(ct_len)?.to_vec();
        let tag: [u8; 32] = take(32)?.try_into().expect("fixed width");
        if at != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        Ok(Self {
            key_id,
            nonce,
            c1,
            ciphertext,
            tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(5)
    }

    fn test_pair() -> KeyPair {
        keygen_with_exponent(&GroupParams::test_small(), BigUint::from(6u32)).unwrap()
    }

    #[test]
    fn pinned_keygen_vector() {
        // 5^6 = 15625 = 679 * 23 + 8.
        let pair = test_pair();
        assert_eq!(pair.public.y(), &BigUint::from(8u32));
        assert_eq!(pair.public.key_id(), pair.private.key_id());
    }

    #[test]
    fn exponent_bounds_are_enforced() {
        let group = GroupParams::test_small();
        assert!(matches!(
            keygen_with_exponent(&group, BigUint::zero()),
            Err(EnvelopeError::InvalidExponent)
        ));
        // p - 2 = 21 is the largest valid exponent; p - 1 is not.
        assert!(keygen_with_exponent(&group, BigUint::from(21u32)).is_ok());
        assert!(matches!(
            keygen_with_exponent(&group, BigUint::from(22u32)),
            Err(EnvelopeError::InvalidExponent)
        ));
    }

    #[test]
    fn group_validation_requires_safe_primes() {
        // 13 is prime but (13-1)/2 = 6 is not.
        assert!(matches!(
            GroupParams::new(BigUint::from(13u32), BigUint::from(2u32)),
            Err(EnvelopeError::InvalidGroup(_))
        ));
        assert!(matches!(
            GroupParams::new(BigUint::from(24u32), BigUint::from(2u32)),
            Err(EnvelopeError::InvalidGroup(_))
        ));
        // g must satisfy 1 < g < p-1.
        assert!(GroupParams::new(BigUint::from(23u32), BigUint::from(1u32)).is_err());
        assert!(GroupParams::new(BigUint::from(23u32), BigUint::from(22u32)).is_err());
        assert!(GroupParams::new(BigUint::from(23u32), BigUint::from(5u32)).is_ok());
    }

    #[test]
    fn fingerprint_is_stable_across_reserialization() {
        let pair = test_pair();
        let bytes = pair.public.to_canonical_bytes();
        let reparsed = PublicKey::from_canonical_bytes(&bytes).unwrap();
        assert_eq!(reparsed.key_id(), pair.public.key_id());
        assert_eq!(reparsed.to_canonical_bytes(), bytes);
    }

    #[test]
    fn pinned_encryption_vector() {
        // r=3: c1 = 5^3 mod 23 = 10, shared = 8^3 mod 23 = 6; all derived
        // values frozen from an independent implementation.
        let pair = test_pair();
        let nonce: [u8; 16] = (0u8..16).collect::<Vec<_>>().try_into().unwrap();
        let record =
            encrypt_with(&pair.public, b"attack at dawn", &BigUint::from(3u32), nonce).unwrap();
        assert_eq!(record.c1, BigUint::from(10u32));
        assert_eq!(
            hex::encode(&record.ciphertext),
            "2a6dcd2d5ac04e883720aeb35216"
        );
        assert_eq!(
            hex::encode(record.tag),
            "5ac7346b4d32d1faf27b90b2fa63d8f06db52b1a72062c0a052755526934df12"
        );
        assert_eq!(
            decrypt_record(&pair.private, &record).unwrap(),
            b"attack at dawn"
        );
    }

    #[test]
    fn round_trips_from_one_byte_to_a_mebibyte() {
        let pair = test_pair();
        let mut r = rng();
        for len in [1usize, 31, 32, 33, 1000, 1 << 20] {
            let plaintext: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
            let record = encrypt_record(&pair.public, &plaintext, &mut r).unwrap();
            assert_eq!(decrypt_record(&pair.private, &record).unwrap(), plaintext);
        }
    }

    #[test]
    fn fresh_randomness_per_record() {
        let pair = test_pair();
        let mut r = rng();
        let a = encrypt_record(&pair.public, b"same message", &mut r).unwrap();
        let b = encrypt_record(&pair.public, b"same message", &mut r).unwrap();
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.ciphertext, b.ciphertext);
    }

    #[test]
    fn empty_plaintext_is_rejected() {
        let pair = test_pair();
        assert!(matches!(
            encrypt_record(&pair.public, b"", &mut rng()),
            Err(EnvelopeError::EmptyPlaintext)
        ));
    }

    #[test]
    fn every_bit_flip_in_a_small_record_is_caught() {
        let pair = test_pair();
        let record = encrypt_record(&pair.public, b"short and sweet", &mut rng()).unwrap();
        let group = pair.public.group().clone();
        let bytes = record.to_bytes(&group);
        // Flip each bit past the magic/version header; every mutation must
        // fail parse or decrypt, never yield a different plaintext.
        for bit in (5 * 8)..(bytes.len() * 8) {
            let mut mutated = bytes.clone();
            mutated[bit / 8] ^= 1 << (bit % 8);
            match EncryptedRecord::from_bytes(&mutated) {
                Err(_) => {}
                Ok(parsed) => {
                    assert!(
                        decrypt_record(&pair.private, &parsed).is_err(),
                        "bit {bit} went undetected"
                    );
                }
            }
        }
    }

    #[test]
    fn wrong_keypair_fails_closed() {
        let pair = test_pair();
        let other = keygen_with_exponent(&GroupParams::test_small(), BigUint::from(9u32)).unwrap();
        let record = encrypt_record(&pair.public, b"for the right key only", &mut rng()).unwrap();
        assert!(matches!(
            decrypt_record(&other.private, &record),
            Err(EnvelopeError::KeyIdMismatch)
        ));
        // Same key id forged onto the record: the tag still refuses.
        let mut forged = record.clone();
        forged.key_id = *other.private.key_id();
        assert!(matches!(
            decrypt_record(&other.private, &forged),
            Err(EnvelopeError::TagMismatch)
        ));
    }

    #[test]
    fn record_bytes_round_trip() {
        let pair = test_pair();
        let record = encrypt_record(&pair.public, b"wire format", &mut rng()).unwrap();
        let group = pair.public.group().clone();
        let bytes = record.to_bytes(&group);
        let parsed = EncryptedRecord::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, record);
        assert_eq!(parsed.to_bytes(&group), bytes);

        assert!(EncryptedRecord::from_bytes(b"not a record").is_err());
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(EncryptedRecord::from_bytes(&truncated).is_err());
        let mut padded = bytes;
        padded.push(0);
        assert!(EncryptedRecord::from_bytes(&padded).is_err());
    }

    #[test]
    fn private_key_bytes_round_trip_through_fragmentation_form() {
        let pair = test_pair();
        let secret = pair.private.to_secret_bytes();
        assert_eq!(secret.as_bytes(), &[6u8]);
        let rebuilt =
            PrivateKey::from_secret_bytes(GroupParams::test_small(), secret.as_bytes()).unwrap();
        assert_eq!(rebuilt.key_id(), pair.private.key_id());
        let record = encrypt_record(&pair.public, b"via rebuilt key", &mut rng()).unwrap();
        assert_eq!(
            decrypt_record(&rebuilt, &record).unwrap(),
            b"via rebuilt key"
        );
    }

    #[test]
    fn production_group_loads_and_works() {
        let group = GroupParams::modp_2048();
        assert_eq!(group.byte_len(), 256);
        let pair = keygen(&group, &mut rng()).unwrap();
        let record = encrypt_record(&pair.public, b"big group", &mut rng()).unwrap();
        assert_eq!(
            decrypt_record(&pair.private, &record).unwrap(),
            b"big group"
        );
    }
}
