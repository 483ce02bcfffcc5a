//! BB84 key distribution over the statevector simulator.
//!
//! Each qubit is simulated on its own one-qubit register. The sender prepares
//! `X^K[i] |0>` and applies `H^R_A[i]`; an optional eavesdropper acts on the
//! qubit in transit; the receiver applies `H^R_B[i]` and measures. Positions
//! where the two rotation bits agree form the sifted key.

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::qsim::{Gate, Statevector};

pub const DEFAULT_QBER_THRESHOLD: f64 = 0.11;
pub const DEFAULT_TEST_FRACTION: f64 = 0.25;
pub const MIN_TEST_BITS: usize = 8;
pub const MIN_SESSION_QUBITS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QkdError {
    #[error("session needs at least {MIN_SESSION_QUBITS} qubits, got {0}")]
    TooFewQubits(usize),
    #[error("eavesdropper fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("test fraction {0} outside (0, 1)")]
    BadTestFraction(f64),
    #[error("only {available} test bits available, need {MIN_TEST_BITS}")]
    TooFewTestBits { available: usize },
    #[error("session already aborted")]
    AlreadyAborted,
    #[error("qber has not been estimated")]
    QberMissing,
    #[error("requested key length must be at least one byte")]
    EmptyKeyRequest,
    #[error("session aborted: qber {qber:.4} exceeds threshold {threshold}")]
    Aborted { qber: f64, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EveKind {
    #[default]
    None,
    /// Measure in a random basis, resend the measured state in that basis.
    InterceptResend,
    /// Swap the qubit into quantum memory and forward a fresh random BB84
    /// state instead.
    StoreAndResend,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EveModel {
    pub kind: EveKind,
    /// Portion of qubits attacked.
    pub fraction: f64,
}

impl EveModel {
    pub const NONE: EveModel = EveModel {
        kind: EveKind::None,
        fraction: 0.0,
    };

    pub fn new(kind: EveKind, fraction: f64) -> Result<Self, QkdError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(QkdError::BadFraction(fraction));
        }
        Ok(Self { kind, fraction })
    }

    pub fn intercept_resend(fraction: f64) -> Result<Self, QkdError> {
        Self::new(EveKind::InterceptResend, fraction)
    }

    pub fn store_and_resend(fraction: f64) -> Result<Self, QkdError> {
        Self::new(EveKind::StoreAndResend, fraction)
    }

    fn is_active(&self) -> bool {
        self.kind != EveKind::None && self.fraction > 0.0
    }
}

/// Full record of one BB84 run.
#[derive(Debug, Clone, PartialEq)]
pub struct Bb84Session {
    pub n: usize,
    pub sender_bits: Vec<u8>,
    pub sender_bases: Vec<u8>,
    pub receiver_bases: Vec<u8>,
    pub receiver_bits: Vec<u8>,
    /// Qubit positions where `sender_bases[i] == receiver_bases[i]`.
    pub kept: Vec<usize>,
    pub sifted_sender: Vec<u8>,
    pub sifted_receiver: Vec<u8>,
    /// Qubit positions (a subset of `kept`) disclosed for error estimation.
    pub test_indices: Vec<usize>,
    pub qber: Option<f64>,
    pub aborted: bool,
}

impl Bb84Session {
    /// Sifted sender bits with the disclosed test positions removed.
    pub fn key_sender(&self) -> Vec<u8> {
        self.key_bits(&self.sifted_sender)
    }

    pub fn key_receiver(&self) -> Vec<u8> {
        self.key_bits(&self.sifted_receiver)
    }

    fn key_bits(&self, sifted: &[u8]) -> Vec<u8> {
        self.kept
            .iter()
            .zip(sifted)
            .filter(|(pos, _)| self.test_indices.binary_search(pos).is_err())
            .map(|(_, &b)| b)
            .collect()
    }
}

/// Produces `n` random bits by preparing `H|0>` and measuring, one qubit at a
/// time.
pub fn generate_raw_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n)
        .map(|_| {
            let mut q = Statevector::new(1).expect("one qubit");
            q.apply(Gate::H(0)).expect("valid gate");
            q.measure(0, rng).expect("valid qubit").bit
        })
        .collect()
}

fn prepare(bit: u8, basis: u8) -> Statevector {
    let mut q = Statevector::new(1).expect("one qubit");
    if bit == 1 {
        q.apply(Gate::X(0)).expect("valid gate");
    }
    if basis == 1 {
        q.apply(Gate::H(0)).expect("valid gate");
    }
    q
}

fn measure_in(q: &mut Statevector, basis: u8, rng: &mut (impl Rng + ?Sized)) -> u8 {
    if basis == 1 {
        q.apply(Gate::H(0)).expect("valid gate");
    }
    q.measure(0, rng).expect("valid qubit").bit
}

fn random_bit<R: Rng + ?Sized>(rng: &mut R) -> u8 {
    generate_raw_bits(1, rng)[0]
}

fn eavesdrop<R: Rng + ?Sized>(q: Statevector, eve: &EveModel, rng: &mut R) -> Statevector {
    match eve.kind {
        EveKind::None => q,
        EveKind::InterceptResend => {
            let mut q = q;
            let basis = random_bit(rng);
            let seen = measure_in(&mut q, basis, rng);
            prepare(seen, basis)
        }
        EveKind::StoreAndResend => {
            drop(q);
            let bit = random_bit(rng);
            let basis = random_bit(rng);
            prepare(bit, basis)
        }
    }
}

/// Runs one BB84 exchange of `n` qubits and sifts the result. QBER is not
/// estimated here; see [`estimate_qber`].
pub fn run_bb84<R: Rng + ?Sized>(
    n: usize,
    eve: &EveModel,
    rng: &mut R,
) -> Result<Bb84Session, QkdError> {
    if n < MIN_SESSION_QUBITS {
        return Err(QkdError::TooFewQubits(n));
    }
    if !(0.0..=1.0).contains(&eve.fraction) {
        return Err(QkdError::BadFraction(eve.fraction));
    }
    let sender_bits = generate_raw_bits(n, rng);
    let sender_bases = generate_raw_bits(n, rng);
    let receiver_bases = generate_raw_bits(n, rng);

    let mut receiver_bits = Vec::with_capacity(n);
    for i in 0..n {
        let mut q = prepare(sender_bits[i], sender_bases[i]);
        if eve.is_active() && rng.gen::<f64>() < eve.fraction {
            q = eavesdrop(q, eve, rng);
        }
        receiver_bits.push(measure_in(&mut q, receiver_bases[i], rng));
    }

    let kept: Vec<usize> = (0..n)
        .filter(|&i| sender_bases[i] == receiver_bases[i])
        .collect();
    let sifted_sender = kept.iter().map(|&i| sender_bits[i]).collect();
    let sifted_receiver = kept.iter().map(|&i| receiver_bits[i]).collect();

    Ok(Bb84Session {
        n,
        sender_bits,
        sender_bases,
        receiver_bases,
        receiver_bits,
        kept,
        sifted_sender,
        sifted_receiver,
        test_indices: Vec::new(),
        qber: None,
        aborted: false,
    })
}

/// Discloses a random `test_fraction` of the sifted positions, records the
/// mismatch rate over them, and drops them from the key.
pub fn estimate_qber<R: Rng + ?Sized>(
    session: &mut Bb84Session,
    test_fraction: f64,
    rng: &mut R,
) -> Result<f64, QkdError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(QkdError::BadTestFraction(test_fraction));
    }
    if session.aborted {
        return Err(QkdError::AlreadyAborted);
    }
    let available = session.kept.len();
    let n_test = (test_fraction * available as f64).round() as usize;
    if n_test < MIN_TEST_BITS {
        return Err(QkdError::TooFewTestBits { available: n_test });
    }
    let mut picks = sample(rng, available, n_test).into_vec();
    picks.sort_unstable();
    let errors = picks
        .iter()
        .filter(|&&k| session.sifted_sender[k] != session.sifted_receiver[k])
        .count();
    session.test_indices = picks.iter().map(|&k| session.kept[k]).collect();
    let qber = errors as f64 / n_test as f64;
    session.qber = Some(qber);
    Ok(qber)
}

/// Marks the session aborted when its QBER strictly exceeds `threshold`.
pub fn abort_decision(session: &mut Bb84Session, threshold: f64) -> Result<bool, QkdError> {
    let qber = session.qber.ok_or(QkdError::QberMissing)?;
    session.aborted = qber > threshold;
    Ok(session.aborted)
}

/// Key bits with their MSB-first byte packing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub bits: Vec<u8>,
    pub bytes: Vec<u8>,
}

impl KeyMaterial {
    /// Packs bits most-significant-bit first; a trailing partial byte is
    /// dropped.
    pub fn from_bits(bits: Vec<u8>) -> Self {
        let bytes = bits
            .chunks_exact(8)
            .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b))
            .collect();
        Self { bits, bytes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QkdConfig {
    /// Qubits per BB84 block.
    pub block_n: usize,
    pub test_fraction: f64,
    pub qber_threshold: f64,
}

impl Default for QkdConfig {
    fn default() -> Self {
        Self {
            block_n: 512,
            test_fraction: DEFAULT_TEST_FRACTION,
            qber_threshold: DEFAULT_QBER_THRESHOLD,
        }
    }
}

/// Matching sender/receiver key copies plus block accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdKeyPair {
    pub sender: KeyMaterial,
    pub receiver: KeyMaterial,
    pub blocks: usize,
    pub qubits: usize,
    pub mean_qber: f64,
}

/// Runs successive abort-checked BB84 blocks until `needed_bytes` of key are
/// available on both sides, then truncates to exactly that length.
pub fn expand_key<R: Rng + ?Sized>(
    eve: &EveModel,
    needed_bytes: usize,
    cfg: &QkdConfig,
    rng: &mut R,
) -> Result<QkdKeyPair, QkdError> {
    if needed_bytes == 0 {
        return Err(QkdError::EmptyKeyRequest);
    }
    let needed_bits = needed_bytes * 8;
    let mut sender = Vec::with_capacity(needed_bits);
    let mut receiver = Vec::with_capacity(needed_bits);
    let mut blocks = 0;
    let mut qber_sum = 0.0;
    while sender.len() < needed_bits {
        let mut session = run_bb84(cfg.block_n, eve, rng)?;
        let qber = estimate_qber(&mut session, cfg.test_fraction, rng)?;
        blocks += 1;
        qber_sum += qber;
        if abort_decision(&mut session, cfg.qber_threshold)? {
            return Err(QkdError::Aborted {
                qber,
                threshold: cfg.qber_threshold,
            });
        }
        sender.extend(session.key_sender());
        receiver.extend(session.key_receiver());
    }
    sender.truncate(needed_bits);
    receiver.truncate(needed_bits);
    Ok(QkdKeyPair {
        sender: KeyMaterial::from_bits(sender),
        receiver: KeyMaterial::from_bits(receiver),
        blocks,
        qubits: blocks * cfg.block_n,
        mean_qber: qber_sum / blocks as f64,
    })
}
