//! Content hashing used for corpus, vocabulary, checkpoint and job ids.

use sha2::{Digest, Sha256};

/// Incremental SHA-256 with length-prefixed fields, so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
#[derive(Clone, Default)]
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = ContentHasher::default();
        h.str(domain);
        h
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.inner.update((b.len() as u64).to_le_bytes());
        self.inner.update(b);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.inner.update(v.to_bits().to_le_bytes());
        self
    }

    /// First 16 hex digits of the digest.
    pub fn finish(&self) -> String {
        let digest = self.inner.clone().finalize();
        hex::encode(&digest[..8])
    }
}
