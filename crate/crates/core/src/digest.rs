//! SHA-256 content hashes.

use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 digest (64 chars).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ContentHash(String);

/// SHA-256 of the empty input.
pub const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid SHA-256 hex digest {0:?}: expected 64 lowercase hex characters")]
pub struct InvalidHash(pub String);

impl ContentHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn of_reader<R: Read>(mut reader: R) -> io::Result<(Self, u64)> {
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        let mut total = 0u64;
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            total += n as u64;
        }
        Ok((ContentHash(hex::encode(hasher.finalize())), total))
    }

    /// Hash a file's raw bytes, returning the digest and the byte count.
    pub fn of_file(path: &Path) -> io::Result<(Self, u64)> {
        Self::of_reader(File::open(path)?)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First `n` hex characters, for display.
    pub fn short(&self, n: usize) -> &str {
        &self.0[..n.min(self.0.len())]
    }

    pub fn is_valid_hex(s: &str) -> bool {
        s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    }
}

impl FromStr for ContentHash {
    type Err = InvalidHash;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if Self::is_valid_hex(s) {
            Ok(ContentHash(s.to_owned()))
        } else {
            Err(InvalidHash(s.to_owned()))
        }
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_published_digest() {
        assert_eq!(ContentHash::of_bytes(b"").as_str(), EMPTY_SHA256);
    }

    #[test]
    fn known_vector() {
        // FIPS 180-2 "abc" test vector.
        assert_eq!(
            ContentHash::of_bytes(b"abc").as_str(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn rejects_uppercase_and_short() {
        assert!("ABC".parse::<ContentHash>().is_err());
        assert!(EMPTY_SHA256.to_uppercase().parse::<ContentHash>().is_err());
        assert!(EMPTY_SHA256.parse::<ContentHash>().is_ok());
    }

    #[test]
    fn deserialize_validates() {
        let bad: Result<ContentHash, _> = serde_json::from_str("\"xyz\"");
        assert!(bad.is_err());
    }
}
