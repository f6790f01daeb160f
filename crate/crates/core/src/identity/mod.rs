//! Consortium participants, signing identities, and role-based access control.

mod acl;
mod membership;

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::ledger::{hex_bytes, EnvelopeBody, Signature, TransactionEnvelope};

pub use acl::{check_acl, AccessControlList, AclRule, Decision, Pattern};
pub use membership::{keys as membership_keys, IdentityHistory, Membership, NodeRecord};

pub const ED25519: &str = "ed25519";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("participant {0} already registered")]
    DuplicateId(String),
    #[error("{0} is not authorized for this operation")]
    Unauthorized(String),
    #[error("identity of {0} is revoked")]
    RevokedIdentity(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("unsupported signature scheme {0}")]
    UnsupportedScheme(String),
    #[error("malformed key: {0}")]
    BadKey(String),
    #[error("unknown {kind} {value}")]
    UnknownVocabulary { kind: &'static str, value: String },
}

macro_rules! closed_vocabulary {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = IdentityError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(IdentityError::UnknownVocabulary { kind: $kind, value: s.to_string() }),
                }
            }
        }
    };
}

closed_vocabulary!(Org, "org", {
    Cooperative => "cooperative",
    Warehouse => "warehouse",
    Bank => "bank",
    Trading => "trading",
    FoodProcessor => "food_processor",
});

closed_vocabulary!(Role, "role", {
    Producer => "producer",
    QaOperator => "qa_operator",
    WarehouseOperator => "warehouse_operator",
    Trader => "trader",
    BankAgent => "bank_agent",
    Admin => "admin",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub org: Org,
    pub role: Role,
    pub display_name: String,
}

/// A participant's registered public key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub participant_id: String,
    pub scheme: String,
    #[serde(with = "hex_bytes")]
    pub public_key: Vec<u8>,
    pub issued_at: u64,
    #[serde(default)]
    pub revoked: bool,
}

impl Identity {
    /// The identity file form: everything but the revocation flag.
    pub fn file_document(&self) -> crate::doc::Doc {
        crate::doc::Doc::map()
            .with("participant_id", self.participant_id.as_str())
            .with("scheme", self.scheme.as_str())
            .with("public_key", hex::encode(&self.public_key))
            .with("issued_at", self.issued_at)
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        self.scheme == signature.scheme
            && verify_signature(&self.scheme, &self.public_key, message, signature)
    }
}

/// An Ed25519 signing key.
#[derive(Clone)]
pub struct KeyPair {
    key: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", hex::encode(self.public_key()))
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair { key: SigningKey::from_bytes(&seed) }
    }

    pub fn from_hex(secret: &str) -> Result<Self, IdentityError> {
        let mut seed = [0u8; 32];
        hex::decode_to_slice(secret, &mut seed).map_err(|e| IdentityError::BadKey(e.to_string()))?;
        Ok(Self::from_seed(seed))
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.key.to_bytes())
    }

    pub fn public_key(&self) -> Vec<u8> {
        self.key.verifying_key().to_bytes().to_vec()
    }

    pub fn scheme(&self) -> &'static str {
        ED25519
    }

    /// Ed25519 signatures are deterministic: same key and message, same bytes.
    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature { scheme: ED25519.to_string(), bytes: self.key.sign(message).to_bytes().to_vec() }
    }

    pub fn identity(&self, participant_id: &str, issued_at: u64) -> Identity {
        Identity {
            participant_id: participant_id.to_string(),
            scheme: ED25519.to_string(),
            public_key: self.public_key(),
            issued_at,
            revoked: false,
        }
    }
}

pub fn verify_signature(scheme: &str, public_key: &[u8], message: &[u8], sig: &Signature) -> bool {
    if scheme != ED25519 || sig.scheme != ED25519 {
        return false;
    }
    let Ok(key) = VerifyingKey::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.bytes) else {
        return false;
    };
    key.verify_strict(message, &sig).is_ok()
}

/// Signs an unsigned envelope on behalf of `identity`, sealing its tx id.
pub fn sign_envelope(
    body: EnvelopeBody,
    key: &KeyPair,
    identity: &Identity,
) -> Result<TransactionEnvelope, IdentityError> {
    if identity.revoked {
        return Err(IdentityError::RevokedIdentity(identity.participant_id.clone()));
    }
    if identity.public_key != key.public_key() {
        return Err(IdentityError::BadKey("key does not belong to identity".into()));
    }
    let bytes = body.signing_bytes().map_err(|e| IdentityError::BadKey(e.to_string()))?;
    let signature = key.sign(&bytes);
    body.seal(signature).map_err(|e| IdentityError::BadKey(e.to_string()))
}

/// Key file contents: the participant (or node) id and hex secret key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub owner: String,
    pub scheme: String,
    pub secret_key: String,
}

impl KeyFile {
    pub fn new(owner: &str, key: &KeyPair) -> Self {
        KeyFile { owner: owner.to_string(), scheme: ED25519.into(), secret_key: key.secret_hex() }
    }

    pub fn key_pair(&self) -> Result<KeyPair, IdentityError> {
        if self.scheme != ED25519 {
            return Err(IdentityError::UnsupportedScheme(self.scheme.clone()));
        }
        KeyPair::from_hex(&self.secret_key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::Doc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn body() -> EnvelopeBody {
        EnvelopeBody {
            channel_id: "gebn-main".into(),
            contract_id: "grain".into(),
            operation: "DiscountsTransaction".into(),
            args: Doc::map().with("Invoice_Number", "NF-1001"),
            submitter: "p-qa-01".into(),
            nonce: 7,
            timestamp: 1_700_000_000_000,
        }
    }

    #[test]
    fn signatures_are_deterministic() {
        let key = KeyPair::from_seed([3; 32]);
        let id = key.identity("p-qa-01", 0);
        let a = sign_envelope(body(), &key, &id).unwrap();
        let b = sign_envelope(body(), &key, &id).unwrap();
        assert_eq!(a.signature, b.signature);
        assert_eq!(a.tx_id, b.tx_id);
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = KeyPair::from_seed([4; 32]);
        let id = key.identity("p-qa-01", 0);
        let env = sign_envelope(body(), &key, &id).unwrap();
        assert!(id.verify(&env.signing_bytes().unwrap(), &env.signature));
    }

    #[test]
    fn single_byte_mutations_fail_verification() {
        let key = KeyPair::from_seed([5; 32]);
        let id = key.identity("p-qa-01", 0);
        let env = sign_envelope(body(), &key, &id).unwrap();
        let msg = env.signing_bytes().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let mut m = msg.clone();
            let pos = rng.gen_range(0..m.len());
            m[pos] ^= rng.gen_range(1..=255u8);
            assert!(!id.verify(&m, &env.signature));
        }
    }

    #[test]
    fn revoked_identity_cannot_sign() {
        let key = KeyPair::from_seed([6; 32]);
        let mut id = key.identity("p-qa-01", 0);
        id.revoked = true;
        assert_eq!(
            sign_envelope(body(), &key, &id).unwrap_err(),
            IdentityError::RevokedIdentity("p-qa-01".into())
        );
    }

    #[test]
    fn wrong_scheme_rejected() {
        let key = KeyPair::from_seed([7; 32]);
        let mut sig = key.sign(b"msg");
        sig.scheme = "rsa".into();
        assert!(!verify_signature(ED25519, &key.public_key(), b"msg", &sig));
    }

    #[test]
    fn vocabularies_parse() {
        assert_eq!("qa_operator".parse::<Role>().unwrap(), Role::QaOperator);
        assert_eq!("food_processor".parse::<Org>().unwrap(), Org::FoodProcessor);
        assert!("miller".parse::<Role>().is_err());
        assert_eq!(Doc::from_serialize(&Role::BankAgent).unwrap().to_string(), "\"bank_agent\"");
    }

    #[test]
    fn key_file_round_trip() {
        let key = KeyPair::from_seed([8; 32]);
        let file = KeyFile::new("p-1", &key);
        assert_eq!(file.key_pair().unwrap().public_key(), key.public_key());
    }

    #[test]
    fn identity_file_shape() {
        let key = KeyPair::from_seed([9; 32]);
        let doc = key.identity("p-1", 42).file_document();
        let text = doc.to_string();
        assert!(text.starts_with(r#"{"issued_at":42,"participant_id":"p-1","public_key":""#));
        assert!(text.ends_with(r#"","scheme":"ed25519"}"#));
    }
}
