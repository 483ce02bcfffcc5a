//! Byte layer for the symmetric channels: canonical weight text, the
//! character-shift one-time pad, AES-256-GCM envelopes, weight packing and
//! hashing, and HKDF-SHA256 key derivation.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use hkdf::Hkdf;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// kind(1) + nonce(12) + len(4)
const WIRE_HEADER_LEN: usize = 1 + NONCE_LEN + 4;

pub const MIN_DP: u32 = 1;
pub const MAX_DP: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
    #[error("decimal places {0} outside {MIN_DP}..={MAX_DP}")]
    DecimalPlaces(u32),
    #[error("malformed weight text: {0}")]
    Parse(String),
    #[error("otp key has {key} bytes, message needs {message}")]
    KeyTooShort { key: usize, message: usize },
    #[error("character {0:?} does not fit in one byte")]
    CodePoint(char),
    #[error("expected {expected}-byte {what}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("empty key-derivation secret")]
    EmptySecret,
    #[error("requested {0} bytes of derived key material")]
    DeriveLength(usize),
}

/// Decimal-array rendering of a weight vector, e.g. `[0.1235, -1.5000]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanonicalWeightText(pub String);

impl CanonicalWeightText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for CanonicalWeightText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn check_dp(dp: u32) -> Result<(), CryptoError> {
    if (MIN_DP..=MAX_DP).contains(&dp) {
        Ok(())
    } else {
        Err(CryptoError::DecimalPlaces(dp))
    }
}

/// Fixed-point text of `w` at `dp` places, rounding the exact binary value
/// half away from zero. Negative zero renders without a sign.
fn format_fixed(w: f64, dp: u32) -> String {
    let dp = dp as usize;
    // 1100 fractional digits hold every f64 exactly.
    let exact = format!("{:.1100}", w.abs());
    let (int_part, frac_part) = exact.split_once('.').expect("fixed format has a point");
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().take(dp))
        .map(|b| b - b'0')
        .collect();
    let round_up = frac_part.as_bytes()[dp] >= b'5';
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - dp;
    let mut out = String::with_capacity(digits.len() + 2);
    if w.is_sign_negative() && digits.iter().any(|&d| d != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|&d| (b'0' + d) as char));
    out.push('.');
    out.extend(digits[split..].iter().map(|&d| (b'0' + d) as char));
    out
}

/// Renders weights rounded half-away-from-zero at `dp` places, separated by
/// `", "` inside square brackets.
pub fn serialize_weights(weights: &[f64], dp: u32) -> Result<CanonicalWeightText, CryptoError> {
    check_dp(dp)?;
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(CryptoError::NonFinite(i));
    }
    let body: Vec<String> = weights.iter().map(|&w| format_fixed(w, dp)).collect();
    Ok(CanonicalWeightText(format!("[{}]", body.join(", "))))
}

/// Strict inverse of [`serialize_weights`].
pub fn parse_weights(text: &str) -> Result<Vec<f64>, CryptoError> {
    let inner = text
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| CryptoError::Parse("missing brackets".into()))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(", ")
        .map(|tok| {
            let valid = !tok.is_empty()
                && tok
                    .bytes()
                    .enumerate()
                    .all(|(i, b)| b.is_ascii_digit() || b == b'.' || (i == 0 && b == b'-'));
            if !valid {
                return Err(CryptoError::Parse(format!("bad token {tok:?}")));
            }
            tok.parse::<f64>()
                .map_err(|e| CryptoError::Parse(format!("{tok:?}: {e}")))
        })
        .collect()
}

/// The value [`serialize_weights`] transmits for `w` at `dp` places.
pub fn round_to_dp(w: f64, dp: u32) -> Result<f64, CryptoError> {
    check_dp(dp)?;
    if !w.is_finite() {
        return Err(CryptoError::NonFinite(0));
    }
    Ok(format_fixed(w, dp)
        .parse()
        .expect("fixed-point text parses"))
}

/// One-time-pad variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtpMode {
    /// `c = (m + 2k) mod 256`. A key byte of 128 leaves the character
    /// unchanged, and every key byte has the same effect as `k + 128`.
    #[default]
    DoubleShift,
    /// `c = m ^ k`, kept for comparison.
    Xor,
}

fn text_to_bytes(text: &str) -> Result<Vec<u8>, CryptoError> {
    text.chars()
        .map(|c| u8::try_from(u32::from(c)).map_err(|_| CryptoError::CodePoint(c)))
        .collect()
}

fn bytes_to_text(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

pub fn otp_encrypt_bytes(
    message: &[u8],
    key: &[u8],
    mode: OtpMode,
) -> Result<Vec<u8>, CryptoError> {
    if key.len() < message.len() {
        return Err(CryptoError::KeyTooShort {
            key: key.len(),
            message: message.len(),
        });
    }
    Ok(message
        .iter()
        .zip(key)
        .map(|(&m, &k)| match mode {
            OtpMode::DoubleShift => m.wrapping_add(k.wrapping_mul(2)),
            OtpMode::Xor => m ^ k,
        })
        .collect())
}

pub fn otp_decrypt_bytes(
    ciphertext: &[u8],
    key: &[u8],
    mode: OtpMode,
) -> Result<Vec<u8>, CryptoError> {
    if key.len() < ciphertext.len() {
        return Err(CryptoError::KeyTooShort {
            key: key.len(),
            message: ciphertext.len(),
        });
    }
    Ok(ciphertext
        .iter()
        .zip(key)
        .map(|(&c, &k)| match mode {
            OtpMode::DoubleShift => c.wrapping_sub(k.wrapping_mul(2)),
            OtpMode::Xor => c ^ k,
        })
        .collect())
}

/// Encrypts a text whose characters are all below U+0100, using the first
/// `message.len()` key bytes.
pub fn otp_encrypt(message: &str, key: &[u8]) -> Result<Vec<u8>, CryptoError> {
    otp_encrypt_bytes(&text_to_bytes(message)?, key, OtpMode::DoubleShift)
}

pub fn otp_decrypt(ciphertext: &[u8], key: &[u8]) -> Result<String, CryptoError> {
    otp_decrypt_bytes(ciphertext, key, OtpMode::DoubleShift).map(|b| bytes_to_text(&b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AeadEnvelope {
    /// Record type; authenticated as associated data.
    pub kind: u8,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl AeadEnvelope {
    pub fn from_parts(
        kind: u8,
        nonce: &[u8],
        ciphertext: Vec<u8>,
        tag: &[u8],
    ) -> Result<Self, CryptoError> {
        let nonce = nonce
            .try_into()
            .map_err(|_| CryptoError::Malformed("nonce must be 12 bytes"))?;
        let tag = tag
            .try_into()
            .map_err(|_| CryptoError::Malformed("tag must be 16 bytes"))?;
        Ok(Self {
            kind,
            nonce,
            ciphertext,
            tag,
        })
    }

    /// `kind(1) || nonce(12) || len(4, BE) || ciphertext || tag(16)`
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(WIRE_HEADER_LEN + self.ciphertext.len() + TAG_LEN);
        out.push(self.kind);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < WIRE_HEADER_LEN + TAG_LEN {
            return Err(CryptoError::Malformed("shorter than header and tag"));
        }
        let kind = bytes[0];
        let nonce = &bytes[1..1 + NONCE_LEN];
        let len_bytes: [u8; 4] = bytes[1 + NONCE_LEN..WIRE_HEADER_LEN]
            .try_into()
            .expect("four bytes");
        let len = u32::from_be_bytes(len_bytes) as usize;
        if bytes.len() != WIRE_HEADER_LEN + len + TAG_LEN {
            return Err(CryptoError::Malformed(
                "length field disagrees with record size",
            ));
        }
        let ct = bytes[WIRE_HEADER_LEN..WIRE_HEADER_LEN + len].to_vec();
        let tag = &bytes[WIRE_HEADER_LEN + len..];
        Self::from_parts(kind, nonce, ct, tag)
    }
}

fn cipher(key: &[u8]) -> Result<Aes256Gcm, CryptoError> {
    if key.len() != KEY_LEN {
        return Err(CryptoError::Length {
            what: "key",
            expected: KEY_LEN,
            got: key.len(),
        });
    }
    Ok(Aes256Gcm::new_from_slice(key).expect("32-byte key"))
}

/// AES-256-GCM encryption with a caller-supplied 12-byte nonce. The `kind`
/// byte is bound as associated data.
pub fn aead_encrypt(
    key: &[u8],
    kind: u8,
    nonce: &[u8],
    plaintext: &[u8],
) -> Result<AeadEnvelope, CryptoError> {
    let cipher = cipher(key)?;
    if nonce.len() != NONCE_LEN {
        return Err(CryptoError::Length {
            what: "nonce",
            expected: NONCE_LEN,
            got: nonce.len(),
        });
    }
    let mut buf = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(nonce), &[kind], &mut buf)
        .expect("plaintext within GCM limits");
    AeadEnvelope::from_parts(kind, nonce, buf, tag.as_slice())
}

pub fn aead_decrypt(key: &[u8], env: &AeadEnvelope) -> Result<Vec<u8>, CryptoError> {
    let cipher = cipher(key)?;
    let mut buf = env.ciphertext.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&env.nonce),
            &[env.kind],
            &mut buf,
            Tag::from_slice(&env.tag),
        )
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    Ok(buf)
}

/// Concatenated 8-byte big-endian IEEE-754 encodings.
pub fn pack_weights(weights: &[f64]) -> Vec<u8> {
    weights.iter().flat_map(|w| w.to_be_bytes()).collect()
}

pub fn unpack_weights(bytes: &[u8]) -> Result<Vec<f64>, CryptoError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(CryptoError::Malformed(
            "packed weights not a multiple of 8 bytes",
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().expect("eight bytes")))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightDigest(pub [u8; 32]);

/// SHA-256 over [`pack_weights`].
pub fn hash_weights(weights: &[f64]) -> WeightDigest {
    WeightDigest(Sha256::digest(pack_weights(weights)).into())
}

/// HKDF-SHA256 (extract then expand) with an optional salt.
pub fn hkdf_sha256(
    salt: Option<&[u8]>,
    secret: &[u8],
    info: &[u8],
    len: usize,
) -> Result<Vec<u8>, CryptoError> {
    if secret.is_empty() {
        return Err(CryptoError::EmptySecret);
    }
    let mut okm = vec![0u8; len];
    Hkdf::<Sha256>::new(salt, secret)
        .expand(info, &mut okm)
        .map_err(|_| CryptoError::DeriveLength(len))?;
    Ok(okm)
}

/// 32-byte key from `secret` bound to `info`, with no salt.
pub fn derive_key(secret: &[u8], info: &[u8]) -> Result<[u8; KEY_LEN], CryptoError> {
    let okm = hkdf_sha256(None, secret, info, KEY_LEN)?;
    Ok(okm.try_into().expect("32 bytes"))
}
