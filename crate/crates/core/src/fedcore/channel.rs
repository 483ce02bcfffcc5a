//! Uplink and downlink protection for each channel kind.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::pqcsuite::{KemKeypair, PqcError, SchemeRegistry, SigKeypair};
use crate::qkd::{expand_key, EveModel, QkdConfig, QkdError};
use crate::symcrypto::{
    aead_decrypt, aead_encrypt, derive_key, hash_weights, pack_weights, parse_weights,
    serialize_weights, unpack_weights, AeadEnvelope, CryptoError, OtpMode, NONCE_LEN,
};
use crate::symcrypto::{otp_decrypt_bytes, otp_encrypt_bytes};
use crate::tpchannel::{channel_transfer_with, TeleportError, TeleportMode};

/// Wire kind byte of a QKD-keyed AEAD token (the Fernet version byte).
pub const KIND_FERNET: u8 = 0x80;
/// Wire kind byte of a KEM-keyed AEAD record carrying a weight digest.
pub const KIND_KEM_DIGEST: u8 = 0x01;
/// Wire kind byte of a KEM-keyed AEAD record carrying the weights.
pub const KIND_KEM_WEIGHTS: u8 = 0x02;

const INFO_FERNET: &[u8] = b"qshield qkd_fernet";
const INFO_KEM_UP: &[u8] = b"qshield kem uplink";
const INFO_KEM_DOWN: &[u8] = b"qshield kem downlink";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Plain,
    QkdOtp,
    QkdFernet,
    Teleport,
    Kem,
    PqcSign,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 6] = [
        ChannelKind::Plain,
        ChannelKind::QkdOtp,
        ChannelKind::QkdFernet,
        ChannelKind::Teleport,
        ChannelKind::Kem,
        ChannelKind::PqcSign,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelKind::Plain => "plain",
            ChannelKind::QkdOtp => "qkd_otp",
            ChannelKind::QkdFernet => "qkd_fernet",
            ChannelKind::Teleport => "teleport",
            ChannelKind::Kem => "kem",
            ChannelKind::PqcSign => "pqc_sign",
        }
    }

    pub fn uses_qkd(&self) -> bool {
        matches!(self, ChannelKind::QkdOtp | ChannelKind::QkdFernet)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl serde::Serialize for ChannelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdversaryKind {
    #[default]
    None,
    /// Intercept-resend Eve on the QKD quantum channel.
    EveIntercept,
    /// Store-and-resend Eve that forwards substitute qubits.
    EveSwap,
    /// Corrupts uplink envelopes in transit.
    Tamper,
}

impl AdversaryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdversaryKind::None => "none",
            AdversaryKind::EveIntercept => "eve_intercept",
            AdversaryKind::EveSwap => "eve_swap",
            AdversaryKind::Tamper => "tamper",
        }
    }
}

impl FromStr for AdversaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            AdversaryKind::None,
            AdversaryKind::EveIntercept,
            AdversaryKind::EveSwap,
            AdversaryKind::Tamper,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown adversary {s:?}"))
    }
}

/// Eve models act on every QKD exchange, uplink and downlink, and are inert
/// on other channels. Tamper hits each uplink envelope independently with
/// probability `fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryConfig {
    pub kind: AdversaryKind,
    pub fraction: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            kind: AdversaryKind::None,
            fraction: 1.0,
        }
    }
}

impl AdversaryConfig {
    pub fn new(kind: AdversaryKind, fraction: f64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(format!("adversary fraction {fraction} outside [0, 1]"));
        }
        Ok(Self { kind, fraction })
    }

    pub fn eve(&self) -> EveModel {
        match self.kind {
            AdversaryKind::EveIntercept => {
                EveModel::intercept_resend(self.fraction).expect("validated fraction")
            }
            AdversaryKind::EveSwap => {
                EveModel::store_and_resend(self.fraction).expect("validated fraction")
            }
            _ => EveModel::NONE,
        }
    }
}

/// What the KEM channel protects with the AEAD key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KemMode {
    /// Weights travel in the clear next to an encrypted SHA-256 digest.
    #[default]
    Digest,
    /// Weights are encrypted themselves.
    EncryptWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// Decimal places of the QKD channels' text serialization.
    pub dp: u32,
    pub otp_mode: OtpMode,
    pub qkd: QkdConfig,
    pub teleport_mode: TeleportMode,
    /// First of the two teleported parameter indices.
    pub teleport_index: usize,
    pub kem_mode: KemMode,
    pub kem_scheme: String,
    pub sig_scheme: String,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Plain,
            dp: 6,
            otp_mode: OtpMode::DoubleShift,
            qkd: QkdConfig::default(),
            teleport_mode: TeleportMode::default(),
            teleport_index: 0,
            kem_mode: KemMode::Digest,
            kem_scheme: "toy-lwe".to_string(),
            sig_scheme: "lamport".to_string(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("QKD aborted: {0}")]
    Qkd(#[from] QkdError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Pqc(#[from] PqcError),
    #[error(transparent)]
    Teleport(#[from] TeleportError),
    #[error("integrity digest mismatch")]
    DigestMismatch,
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("public key does not match the registered key")]
    UnregisteredKey,
    #[error("wrong record kind {0:#04x}")]
    WrongKind(u8),
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("non-finite weight received")]
    NonFinite,
    #[error("missing channel context: {0}")]
    NoContext(&'static str),
}

/// Bytes on the wire for one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecureEnvelope {
    Plain {
        weights: Vec<u8>,
    },
    QkdOtp {
        ciphertext: Vec<u8>,
    },
    QkdFernet {
        token: Vec<u8>,
    },
    /// The classical share of a teleport transfer: the non-teleported
    /// weights plus two correction bits per teleportation.
    Teleport {
        weights: Vec<u8>,
        corrections: Vec<u8>,
    },
    Kem {
        ct: Vec<u8>,
        weights: Vec<u8>,
        sealed: Vec<u8>,
    },
    Signed {
        weights: Vec<u8>,
        sig: Vec<u8>,
        pk: Vec<u8>,
    },
}

impl SecureEnvelope {
    fn parts_mut(&mut self) -> Vec<&mut Vec<u8>> {
        match self {
            SecureEnvelope::Plain { weights } => vec![weights],
            SecureEnvelope::QkdOtp { ciphertext } => vec![ciphertext],
            SecureEnvelope::QkdFernet { token } => vec![token],
            SecureEnvelope::Teleport {
                weights,
                corrections,
            } => vec![weights, corrections],
            SecureEnvelope::Kem {
                ct,
                weights,
                sealed,
            } => vec![ct, weights, sealed],
            SecureEnvelope::Signed { weights, sig, pk } => vec![weights, sig, pk],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SecureEnvelope::Plain { weights } => weights.len(),
            SecureEnvelope::QkdOtp { ciphertext } => ciphertext.len(),
            SecureEnvelope::QkdFernet { token } => token.len(),
            SecureEnvelope::Teleport {
                weights,
                corrections,
            } => weights.len() + corrections.len(),
            SecureEnvelope::Kem {
                ct,
                weights,
                sealed,
            } => ct.len() + weights.len() + sealed.len(),
            SecureEnvelope::Signed { weights, sig, pk } => weights.len() + sig.len() + pk.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// XORs a nonzero value into byte `pos`, counting across all parts in
    /// order. Returns false when `pos` is out of range.
    pub fn corrupt_at(&mut self, mut pos: usize, mask: u8) -> bool {
        assert_ne!(mask, 0, "a zero mask changes nothing");
        for part in self.parts_mut() {
            if pos < part.len() {
                part[pos] ^= mask;
                return true;
            }
            pos -= part.len();
        }
        false
    }

    /// Corrupts one uniformly chosen byte with a random nonzero mask.
    pub fn corrupt<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let len = self.len();
        if len > 0 {
            let pos = rng.gen_range(0..len);
            let mask = rng.gen_range(1..=255u8);
            self.corrupt_at(pos, mask);
        }
    }
}

/// Traffic and QKD statistics for one transfer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkStats {
    pub messages: usize,
    pub bytes: usize,
    pub qubits: usize,
    /// One entry per QKD key exchange: mean QBER over its blocks.
    pub qber: Vec<f64>,
}

impl LinkStats {
    pub fn absorb(&mut self, other: &LinkStats) {
        self.messages += other.messages;
        self.bytes += other.bytes;
        self.qubits += other.qubits;
        self.qber.extend_from_slice(&other.qber);
    }
}

/// Deterministic cost model that turns traffic into seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub latency_s: f64,
    pub bytes_per_s: f64,
    pub qubits_per_s: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            latency_s: 1e-3,
            bytes_per_s: 1e6,
            qubits_per_s: 1e6,
        }
    }
}

impl LinkModel {
    pub fn seconds(&self, s: &LinkStats) -> f64 {
        s.messages as f64 * self.latency_s
            + s.bytes as f64 / self.bytes_per_s
            + s.qubits as f64 / self.qubits_per_s
    }
}

/// Key material the server holds for the current round.
#[derive(Debug, Clone, Default)]
pub struct ServerKeys {
    /// Server KEM keypair (kem channel).
    pub kem: Option<KemKeypair>,
    /// Shared secret per device, established on uplink and reused for the
    /// downlink under a different derivation label.
    pub kem_secrets: HashMap<usize, Vec<u8>>,
    /// Device signing keys registered for this round (pqc_sign channel).
    pub device_pks: HashMap<usize, Vec<u8>>,
    /// Server's own one-time key for signing the broadcast.
    pub server_sig: Option<SigKeypair>,
}

/// Per-device one-time signing keys, created fresh each round.
#[derive(Debug, Clone, Default)]
pub struct DeviceKeys {
    pub sig: Option<SigKeypair>,
}

/// Prepares round keys: a fresh server KEM pair, fresh device signing keys
/// registered with the server, and a fresh server signing key.
pub fn establish_round_keys<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    registry: &SchemeRegistry,
    server: &mut ServerKeys,
    devices: &mut [DeviceKeys],
    rng: &mut R,
) -> Result<LinkStats, ChannelError> {
    let mut stats = LinkStats::default();
    *server = ServerKeys::default();
    for d in devices.iter_mut() {
        d.sig = None;
    }
    match cfg.kind {
        ChannelKind::Kem => {
            let kem = registry.kem(&cfg.kem_scheme)?;
            let kp = kem.keygen(&mut RngAdapter(rng));
            // The encapsulation key is broadcast to every device.
            stats.messages += devices.len();
            stats.bytes += devices.len() * kp.ek.len();
            server.kem = Some(kp);
        }
        ChannelKind::PqcSign => {
            let sig = registry.signature(&cfg.sig_scheme)?;
            for (id, d) in devices.iter_mut().enumerate() {
                let kp = sig.keygen(&mut RngAdapter(rng));
                server.device_pks.insert(id, kp.pk.clone());
                d.sig = Some(kp);
            }
            let skp = sig.keygen(&mut RngAdapter(rng));
            stats.messages += devices.len();
            stats.bytes += devices.len() * skp.pk.len();
            server.server_sig = Some(skp);
        }
        _ => {}
    }
    Ok(stats)
}

/// `&mut R` as a `dyn RngCore` for the provider traits.
struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

fn check_weights(w: Vec<f64>, expected: usize) -> Result<Vec<f64>, ChannelError> {
    if w.len() != expected {
        return Err(ChannelError::WeightCount {
            expected,
            got: w.len(),
        });
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(ChannelError::NonFinite);
    }
    Ok(w)
}

fn qkd_keys<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    eve: &EveModel,
    needed: usize,
    stats: &mut LinkStats,
    rng: &mut R,
) -> Result<(Vec<u8>, Vec<u8>), ChannelError> {
    match expand_key(eve, needed, &cfg.qkd, rng) {
        Ok(pair) => {
            stats.qubits += pair.qubits;
            stats.qber.push(pair.mean_qber);
            Ok((pair.sender.bytes, pair.receiver.bytes))
        }
        Err(e) => {
            if let QkdError::Aborted { qber, .. } = e {
                stats.qber.push(qber);
            }
            Err(e.into())
        }
    }
}

fn nonce<R: Rng + ?Sized>(rng: &mut R) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut n);
    n
}

/// Result of one protected transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub received: Result<Vec<f64>, ChannelError>,
    pub stats: LinkStats,
}

/// Sender-side state needed to seal a message.
enum Seal<'a> {
    Qkd { key: Vec<u8> },
    Kem { ct: Vec<u8>, key: [u8; 32] },
    Sign { kp: &'a mut SigKeypair },
    None,
}

fn seal(
    cfg: &ChannelConfig,
    weights: &[f64],
    sealer: Seal<'_>,
    registry: &SchemeRegistry,
    nonce: [u8; NONCE_LEN],
) -> Result<SecureEnvelope, ChannelError> {
    Ok(match (cfg.kind, sealer) {
        (ChannelKind::QkdOtp, Seal::Qkd { key }) => {
            let text = serialize_weights(weights, cfg.dp)?;
            SecureEnvelope::QkdOtp {
                ciphertext: otp_encrypt_bytes(text.as_str().as_bytes(), &key, cfg.otp_mode)?,
            }
        }
        (ChannelKind::QkdFernet, Seal::Qkd { key }) => {
            let text = serialize_weights(weights, cfg.dp)?;
            let k = derive_key(&key, INFO_FERNET)?;
            SecureEnvelope::QkdFernet {
                token: aead_encrypt(&k, KIND_FERNET, &nonce, text.as_str().as_bytes())?.to_wire(),
            }
        }
        (ChannelKind::Kem, Seal::Kem { ct, key }) => {
            let (weights, sealed) = match cfg.kem_mode {
                KemMode::Digest => (
                    pack_weights(weights),
                    aead_encrypt(&key, KIND_KEM_DIGEST, &nonce, &hash_weights(weights).0)?
                        .to_wire(),
                ),
                KemMode::EncryptWeights => (
                    Vec::new(),
                    aead_encrypt(&key, KIND_KEM_WEIGHTS, &nonce, &pack_weights(weights))?.to_wire(),
                ),
            };
            SecureEnvelope::Kem {
                ct,
                weights,
                sealed,
            }
        }
        (ChannelKind::PqcSign, Seal::Sign { kp }) => {
            let payload = pack_weights(weights);
            let sig = registry
                .signature(&cfg.sig_scheme)?
                .sign(&mut kp.sk, &payload)?;
            SecureEnvelope::Signed {
                weights: payload,
                sig,
                pk: kp.pk.clone(),
            }
        }
        (ChannelKind::Plain, Seal::None) => SecureEnvelope::Plain {
            weights: pack_weights(weights),
        },
        _ => return Err(ChannelError::NoContext("sealer does not match channel")),
    })
}

type KeyLookup<'a> = dyn Fn(&[u8]) -> Result<[u8; 32], ChannelError> + 'a;

/// Receiver-side state needed to open a message.
enum Opener<'a> {
    Qkd {
        key: Vec<u8>,
    },
    Kem {
        key_for: &'a KeyLookup<'a>,
    },
    Verify {
        pk: &'a [u8],
    },
    None,
}

fn open(
    cfg: &ChannelConfig,
    env: &SecureEnvelope,
    opener: Opener<'_>,
    registry: &SchemeRegistry,
    expected_len: usize,
) -> Result<Vec<f64>, ChannelError> {
    let w = match (env, opener) {
        (SecureEnvelope::Plain { weights }, Opener::None) => unpack_weights(weights)?,
        (SecureEnvelope::QkdOtp { ciphertext }, Opener::Qkd { key }) => {
            let bytes = otp_decrypt_bytes(ciphertext, &key, cfg.otp_mode)?;
            let text: String = bytes.iter().map(|&b| char::from(b)).collect();
            parse_weights(&text)?
        }
        (SecureEnvelope::QkdFernet { token }, Opener::Qkd { key }) => {
            let sealed = AeadEnvelope::from_wire(token)?;
            if sealed.kind != KIND_FERNET {
                return Err(ChannelError::WrongKind(sealed.kind));
            }
            let k = derive_key(&key, INFO_FERNET)?;
            let plain = aead_decrypt(&k, &sealed)?;
            let text: String = plain.iter().map(|&b| char::from(b)).collect();
            parse_weights(&text)?
        }
        (
            SecureEnvelope::Kem {
                ct,
                weights,
                sealed,
            },
            Opener::Kem { key_for },
        ) => {
            let key = key_for(ct)?;
            let env = AeadEnvelope::from_wire(sealed)?;
            let expected_kind = match cfg.kem_mode {
                KemMode::Digest => KIND_KEM_DIGEST,
                KemMode::EncryptWeights => KIND_KEM_WEIGHTS,
            };
            if env.kind != expected_kind {
                return Err(ChannelError::WrongKind(env.kind));
            }
            let plain = aead_decrypt(&key, &env)?;
            match cfg.kem_mode {
                KemMode::Digest => {
                    let w = unpack_weights(weights)?;
                    if hash_weights(&w).0.as_slice() != plain.as_slice() {
                        return Err(ChannelError::DigestMismatch);
                    }
                    w
                }
                KemMode::EncryptWeights => {
                    if !weights.is_empty() {
                        return Err(ChannelError::DigestMismatch);
                    }
                    unpack_weights(&plain)?
                }
            }
        }
        (SecureEnvelope::Signed { weights, sig, pk }, Opener::Verify { pk: registered }) => {
            if pk.as_slice() != registered {
                return Err(ChannelError::UnregisteredKey);
            }
            if !registry
                .signature(&cfg.sig_scheme)?
                .verify(pk, weights, sig)
            {
                return Err(ChannelError::SignatureInvalid);
            }
            unpack_weights(weights)?
        }
        _ => return Err(ChannelError::NoContext("envelope does not match channel")),
    };
    check_weights(w, expected_len)
}

fn tamper_roll<R: Rng + ?Sized>(adversary: &AdversaryConfig, rng: &mut R) -> bool {
    adversary.kind == AdversaryKind::Tamper && rng.gen_bool(adversary.fraction)
}

/// Sends one device's weights to the server. `adv_rng` drives only the
/// adversary so that attacking does not shift the protocol's randomness.
#[allow(clippy::too_many_arguments)]
pub fn uplink<R: Rng + ?Sized, A: Rng + ?Sized>(
    device_id: usize,
    weights: &[f64],
    device_keys: &mut DeviceKeys,
    server: &mut ServerKeys,
    cfg: &ChannelConfig,
    registry: &SchemeRegistry,
    adversary: &AdversaryConfig,
    rng: &mut R,
    adv_rng: &mut A,
) -> Delivery {
    let mut stats = LinkStats::default();
    let received = uplink_inner(
        device_id,
        weights,
        device_keys,
        server,
        cfg,
        registry,
        adversary,
        &mut stats,
        rng,
        adv_rng,
    );
    Delivery { received, stats }
}

#[allow(clippy::too_many_arguments)]
fn uplink_inner<R: Rng + ?Sized, A: Rng + ?Sized>(
    device_id: usize,
    weights: &[f64],
    device_keys: &mut DeviceKeys,
    server: &mut ServerKeys,
    cfg: &ChannelConfig,
    registry: &SchemeRegistry,
    adversary: &AdversaryConfig,
    stats: &mut LinkStats,
    rng: &mut R,
    adv_rng: &mut A,
) -> Result<Vec<f64>, ChannelError> {
    let tamper = tamper_roll(adversary, adv_rng);
    stats.messages += 1;

    if cfg.kind == ChannelKind::Teleport {
        let t = channel_transfer_with(weights, cfg.teleport_index, cfg.teleport_mode, tamper, rng);
        // Classical share: remaining weights plus two correction bits per run.
        let classical = 8 * weights.len().saturating_sub(2);
        return match t {
            Ok(t) => {
                stats.qubits += t.qubits_used;
                stats.bytes += classical + (2 * t.teleportations).div_ceil(8);
                check_weights(t.received, weights.len())
            }
            Err(e) => {
                stats.bytes += classical;
                Err(e.into())
            }
        };
    }

    let (sealer, opener_key): (Seal<'_>, Option<Vec<u8>>) = match cfg.kind {
        ChannelKind::QkdOtp | ChannelKind::QkdFernet => {
            let needed = match cfg.kind {
                ChannelKind::QkdOtp => serialize_weights(weights, cfg.dp)?.len(),
                _ => 32,
            };
            let (dev, srv) = qkd_keys(cfg, &adversary.eve(), needed, stats, rng)?;
            (Seal::Qkd { key: dev }, Some(srv))
        }
        ChannelKind::Kem => {
            let kem = registry.kem(&cfg.kem_scheme)?;
            let kp = server
                .kem
                .as_ref()
                .ok_or(ChannelError::NoContext("server KEM keypair"))?;
            let enc = kem.encaps(&kp.ek, &mut RngAdapter(rng))?;
            let key = derive_key(&enc.ss, INFO_KEM_UP)?;
            (Seal::Kem { ct: enc.ct, key }, None)
        }
        ChannelKind::PqcSign => {
            let kp = device_keys
                .sig
                .as_mut()
                .ok_or(ChannelError::NoContext("device signing key"))?;
            (Seal::Sign { kp }, None)
        }
        ChannelKind::Plain => (Seal::None, None),
        ChannelKind::Teleport => unreachable!("handled above"),
    };

    let mut env = seal(cfg, weights, sealer, registry, nonce(rng))?;
    if tamper {
        env.corrupt(adv_rng);
    }
    stats.bytes += env.len();

    match cfg.kind {
        ChannelKind::QkdOtp | ChannelKind::QkdFernet => {
            let key = opener_key.expect("QKD receiver key");
            open(cfg, &env, Opener::Qkd { key }, registry, weights.len())
        }
        ChannelKind::Kem => {
            let kem = registry.kem(&cfg.kem_scheme)?;
            let dk = server
                .kem
                .as_ref()
                .ok_or(ChannelError::NoContext("server KEM keypair"))?
                .dk
                .clone();
            let secret = std::cell::RefCell::new(None);
            let key_for = |ct: &[u8]| -> Result<[u8; 32], ChannelError> {
                let ss = kem.decaps(&dk, ct)?;
                let key = derive_key(&ss, INFO_KEM_UP)?;
                *secret.borrow_mut() = Some(ss);
                Ok(key)
            };
            let out = open(
                cfg,
                &env,
                Opener::Kem { key_for: &key_for },
                registry,
                weights.len(),
            );
            if out.is_ok() {
                if let Some(ss) = secret.into_inner() {
                    server.kem_secrets.insert(device_id, ss);
                }
            }
            out
        }
        ChannelKind::PqcSign => {
            let pk = server
                .device_pks
                .get(&device_id)
                .ok_or(ChannelError::NoContext("registered device key"))?;
            open(cfg, &env, Opener::Verify { pk }, registry, weights.len())
        }
        _ => open(cfg, &env, Opener::None, registry, weights.len()),
    }
}

/// Delivers the global parameters to one device.
///
/// QKD channels run a fresh key exchange per device; the KEM channel reuses
/// the device's uplink shared secret under a separate derivation label; the
/// signature channel checks the server's one broadcast signature; plain and
/// teleport send the parameters in the clear.
#[allow(clippy::too_many_arguments)]
pub fn downlink<R: Rng + ?Sized>(
    device_id: usize,
    global: &[f64],
    broadcast_sig: Option<&SecureEnvelope>,
    server: &ServerKeys,
    cfg: &ChannelConfig,
    registry: &SchemeRegistry,
    adversary: &AdversaryConfig,
    rng: &mut R,
) -> Delivery {
    let mut stats = LinkStats {
        messages: 1,
        ..Default::default()
    };
    let received = (|| -> Result<Vec<f64>, ChannelError> {
        match cfg.kind {
            ChannelKind::Plain | ChannelKind::Teleport => {
                let env = seal(
                    &ChannelConfig {
                        kind: ChannelKind::Plain,
                        ..cfg.clone()
                    },
                    global,
                    Seal::None,
                    registry,
                    [0; NONCE_LEN],
                )?;
                stats.bytes += env.len();
                open(
                    &ChannelConfig {
                        kind: ChannelKind::Plain,
                        ..cfg.clone()
                    },
                    &env,
                    Opener::None,
                    registry,
                    global.len(),
                )
            }
            ChannelKind::QkdOtp | ChannelKind::QkdFernet => {
                let needed = match cfg.kind {
                    ChannelKind::QkdOtp => serialize_weights(global, cfg.dp)?.len(),
                    _ => 32,
                };
                let (srv, dev) = qkd_keys(cfg, &adversary.eve(), needed, &mut stats, rng)?;
                let env = seal(cfg, global, Seal::Qkd { key: srv }, registry, nonce(rng))?;
                stats.bytes += env.len();
                open(cfg, &env, Opener::Qkd { key: dev }, registry, global.len())
            }
            ChannelKind::Kem => {
                let ss = server
                    .kem_secrets
                    .get(&device_id)
                    .ok_or(ChannelError::NoContext("device shared secret"))?;
                let key = derive_key(ss, INFO_KEM_DOWN)?;
                let env = seal(
                    cfg,
                    global,
                    Seal::Kem {
                        ct: Vec::new(),
                        key,
                    },
                    registry,
                    nonce(rng),
                )?;
                stats.bytes += env.len();
                let key_for = |_: &[u8]| -> Result<[u8; 32], ChannelError> { Ok(key) };
                open(
                    cfg,
                    &env,
                    Opener::Kem { key_for: &key_for },
                    registry,
                    global.len(),
                )
            }
            ChannelKind::PqcSign => {
                let env = broadcast_sig.ok_or(ChannelError::NoContext("server broadcast"))?;
                let pk = &server
                    .server_sig
                    .as_ref()
                    .ok_or(ChannelError::NoContext("server signing key"))?
                    .pk;
                stats.bytes += env.len();
                open(cfg, env, Opener::Verify { pk }, registry, global.len())
            }
        }
    })();
    Delivery { received, stats }
}

/// Signs the global parameters once for the whole broadcast.
pub fn sign_broadcast(
    global: &[f64],
    server: &mut ServerKeys,
    cfg: &ChannelConfig,
    registry: &SchemeRegistry,
) -> Result<SecureEnvelope, ChannelError> {
    let kp = server
        .server_sig
        .as_mut()
        .ok_or(ChannelError::NoContext("server signing key"))?;
    seal(cfg, global, Seal::Sign { kp }, registry, [0; NONCE_LEN])
}
