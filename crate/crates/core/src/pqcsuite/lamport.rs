//! Lamport one-time signatures over SHA-256.
//!
//! The secret key is 256 pairs of 32-byte preimages, the public key their
//! hashes. A signature on `M` reveals, for each bit of `SHA-256(M)`, the
//! preimage selected by that bit.

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{PqcError, SchemeInfo, SchemeKind, SigKeypair, SignatureProvider, SigningKey};

pub(crate) const NAME: &str = "lamport";
const HASH_LEN: usize = 32;
const BITS: usize = 256;
pub const PK_SIZE: usize = 2 * BITS * HASH_LEN;
pub const SK_SIZE: usize = 2 * BITS * HASH_LEN;
pub const SIG_SIZE: usize = BITS * HASH_LEN;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LamportSignature;

fn digest_bit(digest: &[u8], i: usize) -> usize {
    ((digest[i / 8] >> (7 - i % 8)) & 1) as usize
}

impl SignatureProvider for LamportSignature {
    fn info(&self) -> SchemeInfo {
        SchemeInfo {
            name: NAME.to_string(),
            kind: SchemeKind::Signature,
            nist_level: 0,
            pk_size: PK_SIZE,
            sk_size: SK_SIZE,
            sig_or_ct_size: SIG_SIZE,
            ss_size: None,
        }
    }

    fn keygen(&self, rng: &mut dyn RngCore) -> SigKeypair {
        let mut sk = vec![0u8; SK_SIZE];
        rng.fill_bytes(&mut sk);
        let pk = sk
            .chunks_exact(HASH_LEN)
            .flat_map(Sha256::digest)
            .collect();
        SigKeypair {
            scheme: NAME.to_string(),
            pk,
            sk: SigningKey::new(sk, true),
        }
    }

    fn sign_raw(&self, sk: &[u8], msg: &[u8]) -> Result<Vec<u8>, PqcError> {
        if sk.len() != SK_SIZE {
            return Err(PqcError::Malformed {
                what: "signing key",
                detail: format!("expected {SK_SIZE} bytes, got {}", sk.len()),
            });
        }
        let digest = Sha256::digest(msg);
        let mut sig = Vec::with_capacity(SIG_SIZE);
        for i in 0..BITS {
            let slot = 2 * i + digest_bit(&digest, i);
            sig.extend_from_slice(&sk[slot * HASH_LEN..(slot + 1) * HASH_LEN]);
        }
        Ok(sig)
    }

    fn verify(&self, pk: &[u8], msg: &[u8], sig: &[u8]) -> bool {
        if pk.len() != PK_SIZE || sig.len() != SIG_SIZE {
            return false;
        }
        let digest = Sha256::digest(msg);
        sig.chunks_exact(HASH_LEN).enumerate().all(|(i, pre)| {
            let slot = 2 * i + digest_bit(&digest, i);
            Sha256::digest(pre).as_slice() == &pk[slot * HASH_LEN..(slot + 1) * HASH_LEN]
        })
    }
}
