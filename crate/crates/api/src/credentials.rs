use std::path::Path;

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CREDENTIALS_FILE: &str = "credentials.json";

/// Login name and Argon2id PHC hash of one participant's password.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub username: String,
    pub participant_id: String,
    pub password_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialStore {
    pub credentials: Vec<Credential>,
}

#[derive(Debug, thiserror::Error)]
pub enum CredentialError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed credentials file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("password hashing failed: {0}")]
    Hash(String),
}

pub fn hash_password(password: &str) -> Result<String, CredentialError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| CredentialError::Hash(e.to_string()))
}

/// Reproducible demo password. Insecure by construction.
pub fn demo_password(seed: u64, participant_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"grainledger insecure demo password\0");
    h.update(seed.to_be_bytes());
    h.update(participant_id.as_bytes());
    hex::encode(&h.finalize()[..8])
}

impl CredentialStore {
    pub fn load(path: &Path) -> Result<Self, CredentialError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CredentialError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn add(&mut self, participant_id: &str, password: &str) -> Result<(), CredentialError> {
        self.credentials.push(Credential {
            username: participant_id.to_string(),
            participant_id: participant_id.to_string(),
            password_hash: hash_password(password)?,
        });
        Ok(())
    }

    /// The matching credential, if the password verifies.
    pub fn verify(&self, username: &str, password: &str) -> Option<&Credential> {
        let c = self.credentials.iter().find(|c| c.username == username)?;
        let parsed = PasswordHash::new(&c.password_hash).ok()?;
        Argon2::default().verify_password(password.as_bytes(), &parsed).ok().map(|_| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_verify_and_are_salted() {
        let mut store = CredentialStore::default();
        store.add("p-qa-01", "secret").unwrap();
        store.add("p-wh-01", "secret").unwrap();
        assert!(store.credentials[0].password_hash.starts_with("$argon2id$"));
        assert_ne!(store.credentials[0].password_hash, store.credentials[1].password_hash);
        assert_eq!(store.verify("p-qa-01", "secret").unwrap().participant_id, "p-qa-01");
        assert!(store.verify("p-qa-01", "Secret").is_none());
        assert!(store.verify("nobody", "secret").is_none());
    }

    #[test]
    fn demo_passwords_are_stable() {
        assert_eq!(demo_password(1, "a"), demo_password(1, "a"));
        assert_ne!(demo_password(1, "a"), demo_password(2, "a"));
        assert_eq!(demo_password(1, "a").len(), 16);
    }
}
