use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use sha1::Sha1;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PasswordError {
    #[error("unsupported hash algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("salt must be non-empty hex")]
    InvalidSalt,
    #[error("digest must be {expected} lowercase hex characters")]
    InvalidDigest { expected: usize },
    #[error("expected `algorithm:salt:digest`")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sha1,
    Sha256,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sha1 => "sha1",
            Algorithm::Sha256 => "sha256",
        }
    }

    /// Digest length in hex characters.
    pub fn hex_len(self) -> usize {
        match self {
            Algorithm::Sha1 => 40,
            Algorithm::Sha256 => 64,
        }
    }

    fn digest(self, parts: &[&[u8]]) -> Vec<u8> {
        fn run<D: Digest>(parts: &[&[u8]]) -> Vec<u8> {
            let mut h = D::new();
            for p in parts {
                h.update(p);
            }
            h.finalize().to_vec()
        }
        match self {
            Algorithm::Sha1 => run::<Sha1>(parts),
            Algorithm::Sha256 => run::<Sha256>(parts),
        }
    }
}

impl FromStr for Algorithm {
    type Err = PasswordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sha1" => Ok(Algorithm::Sha1),
            "sha256" => Ok(Algorithm::Sha256),
            other => Err(PasswordError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A salted password digest, stored as `algorithm:salt:digest` (the same
/// layout Jupyter uses for `NotebookApp.password`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordRecord {
    algorithm: Algorithm,
    salt: String,
    digest: String,
}

impl PasswordRecord {
    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn salt(&self) -> &str {
        &self.salt
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }
}

fn is_hex(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_hexdigit())
}

impl FromStr for PasswordRecord {
    type Err = PasswordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.trim().splitn(3, ':');
        let (Some(alg), Some(salt), Some(digest)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(PasswordError::Malformed);
        };
        let algorithm: Algorithm = alg.parse()?;
        if !is_hex(salt) {
            return Err(PasswordError::InvalidSalt);
        }
        let digest = digest.to_ascii_lowercase();
        if digest.len() != algorithm.hex_len() || !is_hex(&digest) {
            return Err(PasswordError::InvalidDigest {
                expected: algorithm.hex_len(),
            });
        }
        Ok(PasswordRecord {
            algorithm,
            salt: salt.to_string(),
            digest,
        })
    }
}

impl fmt::Display for PasswordRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.algorithm, self.salt, self.digest)
    }
}

/// `digest = hex(hash(password ++ salt))`, both taken as UTF-8 bytes.
pub fn hash_password(
    password: &str,
    salt: &str,
    algorithm: Algorithm,
) -> Result<PasswordRecord, PasswordError> {
    if !is_hex(salt) {
        return Err(PasswordError::InvalidSalt);
    }
    let digest = algorithm.digest(&[password.as_bytes(), salt.as_bytes()]);
    Ok(PasswordRecord {
        algorithm,
        salt: salt.to_string(),
        digest: hex::encode(digest),
    })
}

/// Recomputes the digest and compares in constant time.
pub fn verify_password(record: &PasswordRecord, supplied: &str) -> bool {
    let computed = record
        .algorithm
        .digest(&[supplied.as_bytes(), record.salt.as_bytes()]);
    let Ok(stored) = hex::decode(&record.digest) else {
        return false;
    };
    computed.ct_eq(&stored).into()
}

/// 12 random hex characters, the salt length Jupyter's `passwd()` uses.
pub fn fresh_salt() -> String {
    let mut bytes = [0u8; 6];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}
