//! Pluggable KEM and signature providers.
//!
//! Two reference schemes ship with the crate: [`ToyLweKem`], a ring-LWE KEM
//! whose parameters make decapsulation failure impossible, and
//! [`LamportSignature`], a SHA-256 one-time signature. Neither is meant for
//! production. Published schemes (Kyber, Dilithium, Falcon, ...) are reached
//! by registering an adapter that implements [`KemProvider`] or
//! [`SignatureProvider`]; their published sizes are available from
//! [`fixtures`] for validation.

mod bench;
pub mod fixtures;
mod lamport;
mod lwe;

use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

pub use bench::{bench_scheme, BenchOp, BenchRecord, WARMUP_ITERATIONS};
pub use lamport::LamportSignature;
pub use lwe::{ToyLweKem, ToyLweParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PqcError {
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("scheme {0:?} has published sizes but no linked provider")]
    NotRunnable(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("one-time signing key already used")]
    KeyReuse,
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("fixture checksum mismatch for {0}")]
    FixtureChecksum(&'static str),
    #[error("fixture parse error: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Kem,
    Signature,
}

/// Published or computed artifact sizes for a scheme, in bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeInfo {
    pub name: String,
    pub kind: SchemeKind,
    /// Claimed NIST level; 0 for the non-production reference schemes.
    pub nist_level: u8,
    pub pk_size: usize,
    pub sk_size: usize,
    /// Signature size for signature schemes, ciphertext size for KEMs.
    pub sig_or_ct_size: usize,
    /// Shared-secret size; `None` for signature schemes.
    pub ss_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemKeypair {
    pub scheme: String,
    pub ek: Vec<u8>,
    pub dk: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KemEncapsulation {
    pub ct: Vec<u8>,
    pub ss: Vec<u8>,
}

pub trait KemProvider: Send + Sync {
    fn info(&self) -> SchemeInfo;
    fn keygen(&self, rng: &mut dyn RngCore) -> KemKeypair;
    fn encaps(&self, ek: &[u8], rng: &mut dyn RngCore) -> Result<KemEncapsulation, PqcError>;
    /// Returns the shared secret, or an error when `ct` cannot be parsed.
    fn decaps(&self, dk: &[u8], ct: &[u8]) -> Result<Vec<u8>, PqcError>;
}

/// Secret signing key. One-time keys refuse a second signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigningKey {
    bytes: Vec<u8>,
    one_time: bool,
    used: bool,
}

impl SigningKey {
    pub fn new(bytes: Vec<u8>, one_time: bool) -> Self {
        Self {
            bytes,
            one_time,
            used: false,
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn is_used(&self) -> bool {
        self.used
    }

    fn begin_use(&mut self) -> Result<(), PqcError> {
        if self.one_time && self.used {
            return Err(PqcError::KeyReuse);
        }
        self.used = true;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigKeypair {
    pub scheme: String,
    pub pk: Vec<u8>,
    pub sk: SigningKey,
}

pub trait SignatureProvider: Send + Sync {
    fn info(&self) -> SchemeInfo;
    fn keygen(&self, rng: &mut dyn RngCore) -> SigKeypair;
    /// Signs with raw secret-key bytes. Callers go through [`Self::sign`],
    /// which enforces the one-time rule.
    fn sign_raw(&self, sk: &[u8], msg: &[u8]) -> Result<Vec<u8>, PqcError>;
    fn verify(&self, pk: &[u8], msg: &[u8], sig: &[u8]) -> bool;

    fn sign(&self, key: &mut SigningKey, msg: &[u8]) -> Result<Vec<u8>, PqcError> {
        key.begin_use()?;
        self.sign_raw(&key.bytes, msg)
    }
}

/// Name-indexed set of runnable providers.
#[derive(Clone, Default)]
pub struct SchemeRegistry {
    kems: Vec<Arc<dyn KemProvider>>,
    sigs: Vec<Arc<dyn SignatureProvider>>,
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the toy LWE KEM and the Lamport signature.
    pub fn with_reference_schemes() -> Self {
        let mut reg = Self::empty();
        reg.register_kem(Arc::new(ToyLweKem::default()));
        reg.register_signature(Arc::new(LamportSignature));
        reg
    }

    /// Later registrations shadow earlier ones with the same name.
    pub fn register_kem(&mut self, provider: Arc<dyn KemProvider>) {
        self.kems.insert(0, provider);
    }

    pub fn register_signature(&mut self, provider: Arc<dyn SignatureProvider>) {
        self.sigs.insert(0, provider);
    }

    pub fn kem(&self, name: &str) -> Result<Arc<dyn KemProvider>, PqcError> {
        self.kems
            .iter()
            .find(|p| p.info().name == name)
            .cloned()
            .ok_or_else(|| self.missing(name))
    }

    pub fn signature(&self, name: &str) -> Result<Arc<dyn SignatureProvider>, PqcError> {
        self.sigs
            .iter()
            .find(|p| p.info().name == name)
            .cloned()
            .ok_or_else(|| self.missing(name))
    }

    fn missing(&self, name: &str) -> PqcError {
        if fixtures::lookup(name).is_some() {
            PqcError::NotRunnable(name.to_string())
        } else {
            PqcError::UnknownScheme(name.to_string())
        }
    }

    pub fn kem_names(&self) -> Vec<String> {
        self.kems.iter().map(|p| p.info().name).collect()
    }

    pub fn signature_names(&self) -> Vec<String> {
        self.sigs.iter().map(|p| p.info().name).collect()
    }

    pub fn kind_of(&self, name: &str) -> Option<SchemeKind> {
        if self.kem(name).is_ok() {
            Some(SchemeKind::Kem)
        } else if self.signature(name).is_ok() {
            Some(SchemeKind::Signature)
        } else {
            None
        }
    }

    /// Sizes for `name`: a registered provider's own report first, then the
    /// published fixture tables.
    pub fn scheme_info(&self, name: &str) -> Result<SchemeInfo, PqcError> {
        if let Ok(p) = self.kem(name) {
            return Ok(p.info());
        }
        if let Ok(p) = self.signature(name) {
            return Ok(p.info());
        }
        fixtures::lookup(name).ok_or_else(|| PqcError::UnknownScheme(name.to_string()))
    }
}

/// [`SchemeRegistry::scheme_info`] on the reference registry.
pub fn scheme_info(name: &str) -> Result<SchemeInfo, PqcError> {
    SchemeRegistry::with_reference_schemes().scheme_info(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_registry_lookups() {
        let reg = SchemeRegistry::with_reference_schemes();
        assert_eq!(reg.kind_of(lwe::NAME), Some(SchemeKind::Kem));
        assert_eq!(reg.kind_of(lamport::NAME), Some(SchemeKind::Signature));
        assert_eq!(reg.kind_of("nope"), None);
        assert!(matches!(reg.kem("Kyber512"), Err(PqcError::NotRunnable(_))));
        assert!(matches!(
            reg.signature("nope"),
            Err(PqcError::UnknownScheme(_))
        ));
    }

    #[test]
    fn scheme_info_falls_back_to_fixtures() {
        let info = scheme_info("Dilithium2").unwrap();
        assert_eq!(
            (info.pk_size, info.sk_size, info.sig_or_ct_size),
            (1312, 2528, 2420)
        );
        assert_eq!(info.kind, SchemeKind::Signature);
        assert!(matches!(
            scheme_info("Dilithium9"),
            Err(PqcError::UnknownScheme(_))
        ));
    }
}
