//! Teleportation of two parameters per device.
//!
//! Two consecutive weights are squashed into Bloch angles, prepared on
//! qubit Q (0) with `U3(theta, phi, 0)`, and teleported to B (2) through a
//! Bell pair on A (1) and B. Q is measured into `m1`, A into `m2`; Bob
//! applies X when `m2 = 1` and then Z when `m1 = 1`.
//!
//! The receiver can either check the transfer by undoing the rotation
//! ([`TeleportMode::Verify`], which assumes it already knows the angles) or
//! estimate the angles by tomography over many teleportations
//! ([`TeleportMode::Tomography`]).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::qsim::{fidelity, Gate, MeasurementRecord, QsimError, Statevector};

pub const Q: usize = 0;
pub const A: usize = 1;
pub const B: usize = 2;

pub const MIN_TOMOGRAPHY_SHOTS: usize = 100;
pub const DEFAULT_VERIFY_CHECKS: usize = 8;
pub const DEFAULT_TOMOGRAPHY_SHOTS: usize = 10_000;

/// Logit inputs are clamped to `[EPS, 1 - EPS]` so boundary estimates decode
/// to large finite weights instead of infinities.
const DECODE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleportError {
    #[error("index j = {j} needs two entries but the vector has {len}")]
    IndexOutOfBounds { j: usize, len: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("angles out of range: theta = {theta}, phi = {phi}")]
    AngleOutOfRange { theta: f64, phi: f64 },
    #[error("tomography needs at least {MIN_TOMOGRAPHY_SHOTS} shots, got {0}")]
    TooFewShots(usize),
    #[error("verification failed on {failures} of {checks} checks")]
    VerificationFailed { failures: usize, checks: usize },
    #[error(transparent)]
    Qsim(#[from] QsimError),
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(s: f64) -> f64 {
    let s = s.clamp(DECODE_EPS, 1.0 - DECODE_EPS);
    (s / (1.0 - s)).ln()
}

/// `theta = pi * sigmoid(w[j])`, `phi = 2 pi * sigmoid(w[j + 1])`.
pub fn encode_params_as_angles(w: &[f64], j: usize) -> Result<(f64, f64), TeleportError> {
    if j + 1 >= w.len() {
        return Err(TeleportError::IndexOutOfBounds { j, len: w.len() });
    }
    for k in [j, j + 1] {
        if !w[k].is_finite() {
            return Err(TeleportError::NonFinite(k));
        }
    }
    Ok((PI * sigmoid(w[j]), TAU * sigmoid(w[j + 1])))
}

/// Inverse of [`encode_params_as_angles`].
pub fn decode_angles(theta: f64, phi: f64) -> (f64, f64) {
    (logit(theta / PI), logit(phi / TAU))
}

fn check_angles(theta: f64, phi: f64) -> Result<(), TeleportError> {
    // phi = 2 pi is admitted: sigmoid saturates there in floating point and
    // U3 is 2 pi-periodic in phi.
    if !(0.0..=PI).contains(&theta) || !(0.0..=TAU).contains(&phi) {
        return Err(TeleportError::AngleOutOfRange { theta, phi });
    }
    Ok(())
}

/// `cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>`.
pub fn target_state(theta: f64, phi: f64) -> Statevector {
    let (s, c) = (theta / 2.0).sin_cos();
    Statevector::from_amplitudes(vec![Complex64::new(c, 0.0), Complex64::from_polar(s, phi)])
        .expect("normalized by construction")
}

/// Three-qubit state just before Q and A are measured.
pub fn pre_measurement_state(theta: f64, phi: f64) -> Result<Statevector, TeleportError> {
    check_angles(theta, phi)?;
    let mut sv = Statevector::new(3)?;
    sv.apply_all([
        Gate::u3(Q, theta, phi, 0.0),
        Gate::H(A),
        Gate::Cnot {
            control: A,
            target: B,
        },
        Gate::Cnot {
            control: Q,
            target: A,
        },
        Gate::H(Q),
    ])?;
    Ok(sv)
}

/// Bob's Pauli corrections: X if `m2`, then Z if `m1`.
pub fn correct(bob: &Statevector, m1: u8, m2: u8) -> Result<Statevector, TeleportError> {
    let mut out = bob.clone();
    if m2 == 1 {
        out.apply(Gate::X(0))?;
    }
    if m1 == 1 {
        out.apply(Gate::Z(0))?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TeleportOutcome {
    /// Measurement of Q (classical bit 0).
    pub m1: u8,
    /// Measurement of A (classical bit 1).
    pub m2: u8,
    /// Probability of this `(m1, m2)` branch.
    pub probability: f64,
    /// Full register after measurement, before corrections.
    pub register: Statevector,
    /// Bob's qubit before corrections.
    pub bob_raw: Statevector,
    /// Bob's qubit after corrections.
    pub bob_state: Statevector,
}

fn outcome_from_register(
    register: Statevector,
    m1: u8,
    m2: u8,
    probability: f64,
) -> Result<TeleportOutcome, TeleportError> {
    let bob_raw = register.extract_qubit(B)?;
    let bob_state = correct(&bob_raw, m1, m2)?;
    Ok(TeleportOutcome {
        m1,
        m2,
        probability,
        register,
        bob_raw,
        bob_state,
    })
}

/// One sampled run of the protocol.
pub fn teleport_once<R: Rng + ?Sized>(
    theta: f64,
    phi: f64,
    rng: &mut R,
) -> Result<TeleportOutcome, TeleportError> {
    let mut sv = pre_measurement_state(theta, phi)?;
    let r1 = sv.measure(Q, rng)?;
    let r2 = sv.measure(A, rng)?;
    outcome_from_register(sv, r1.bit, r2.bit, r1.pre_prob * r2.pre_prob)
}

/// All four `(m1, m2)` branches with exact probabilities, ordered
/// (0,0), (1,0), (0,1), (1,1).
pub fn teleport_branches(theta: f64, phi: f64) -> Result<Vec<TeleportOutcome>, TeleportError> {
    let sv = pre_measurement_state(theta, phi)?;
    sv.branch_outcomes(&[Q, A])?
        .into_iter()
        .map(|b| {
            let state = b.state.ok_or(QsimError::NotSeparable)?;
            outcome_from_register(state, b.bits[0], b.bits[1], b.probability)
        })
        .collect()
}

/// Fidelity of the corrected state with the intended one.
pub fn outcome_fidelity(outcome: &TeleportOutcome, theta: f64, phi: f64) -> f64 {
    fidelity(&outcome.bob_state, &target_state(theta, phi)).expect("single-qubit states")
}

/// Undoes `U3(theta, phi, 0)` on `state` and measures it. An exact
/// teleportation yields bit 0 with `pre_prob` 1.
pub fn verify_state<R: Rng + ?Sized>(
    state: &Statevector,
    theta: f64,
    phi: f64,
    rng: &mut R,
) -> Result<MeasurementRecord, TeleportError> {
    let mut s = state.clone();
    s.apply(Gate::u3(0, theta, phi, 0.0).inverse())?;
    Ok(s.measure(0, rng)?)
}

pub fn verify_inverse<R: Rng + ?Sized>(
    outcome: &TeleportOutcome,
    theta: f64,
    phi: f64,
    rng: &mut R,
) -> Result<MeasurementRecord, TeleportError> {
    verify_state(&outcome.bob_state, theta, phi, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub theta_hat: f64,
    pub phi_hat: f64,
    /// Teleportations per measurement basis.
    pub shots: usize,
    /// Standard error of `theta_hat`. The arcsine transform makes this
    /// exactly `1 / sqrt(shots)`.
    pub stderr: f64,
    /// Delta-method standard error of `phi_hat`; grows as `theta_hat`
    /// approaches a pole, where `phi` is undefined.
    pub phi_stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Basis {
    Z,
    X,
    Y,
}

/// Fraction of 1 outcomes over `shots` teleportations measured in `basis`.
fn basis_frequency<R: Rng + ?Sized>(
    theta: f64,
    phi: f64,
    basis: Basis,
    shots: usize,
    tamper: bool,
    rng: &mut R,
) -> Result<f64, TeleportError> {
    let mut ones = 0usize;
    for _ in 0..shots {
        let o = teleport_once(theta, phi, rng)?;
        let (m1, m2) = if tamper {
            (o.m1 ^ 1, o.m2 ^ 1)
        } else {
            (o.m1, o.m2)
        };
        let mut bob = correct(&o.bob_raw, m1, m2)?;
        match basis {
            Basis::Z => {}
            Basis::X => bob.apply(Gate::H(0))?,
            Basis::Y => bob.apply_all([Gate::phase(0, -FRAC_PI_2), Gate::H(0)])?,
        }
        ones += bob.measure(0, rng)?.bit as usize;
    }
    Ok(ones as f64 / shots as f64)
}

fn estimate_inner<R: Rng + ?Sized>(
    theta: f64,
    phi: f64,
    shots: usize,
    tamper: bool,
    rng: &mut R,
) -> Result<AngleEstimate, TeleportError> {
    if shots < MIN_TOMOGRAPHY_SHOTS {
        return Err(TeleportError::TooFewShots(shots));
    }
    check_angles(theta, phi)?;
    let p1_z = basis_frequency(theta, phi, Basis::Z, shots, tamper, rng)?;
    let p1_x = basis_frequency(theta, phi, Basis::X, shots, tamper, rng)?;
    let p1_y = basis_frequency(theta, phi, Basis::Y, shots, tamper, rng)?;

    // P(1) in Z is sin^2(theta/2); <X> = sin(theta) cos(phi), <Y> = sin(theta) sin(phi).
    let theta_hat = 2.0 * p1_z.sqrt().asin();
    let (ex, ey) = (1.0 - 2.0 * p1_x, 1.0 - 2.0 * p1_y);
    let phi_hat = ey.atan2(ex).rem_euclid(TAU);
    let root_n = (shots as f64).sqrt();
    Ok(AngleEstimate {
        theta_hat,
        phi_hat,
        shots,
        stderr: 1.0 / root_n,
        phi_stderr: 1.0 / (theta_hat.sin().max(1.0 / root_n) * root_n),
    })
}

/// Tomographic estimate from `shots` independent teleportations in each of
/// the Z, X and Y bases.
pub fn estimate_angles<R: Rng + ?Sized>(
    theta: f64,
    phi: f64,
    shots: usize,
    rng: &mut R,
) -> Result<AngleEstimate, TeleportError> {
    estimate_inner(theta, phi, shots, false, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleportMode {
    /// Teleport once, then run `checks` further teleportations checked by
    /// the inverse rotation; every check must return bit 0.
    Verify { checks: usize },
    /// Estimate the angles from `shots` teleportations per basis.
    Tomography { shots: usize },
}

impl Default for TeleportMode {
    fn default() -> Self {
        TeleportMode::Verify {
            checks: DEFAULT_VERIFY_CHECKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub received: Vec<f64>,
    /// Indices that travelled through the teleport path.
    pub teleported: [usize; 2],
    /// Qubits consumed, three per teleportation.
    pub qubits_used: usize,
    /// Teleportations whose classical bits were measured.
    pub teleportations: usize,
    /// Set in tomography mode.
    pub estimate: Option<AngleEstimate>,
}

/// Sends `w` with entries `j` and `j + 1` teleported and the rest copied.
pub fn channel_transfer<R: Rng + ?Sized>(
    w: &[f64],
    j: usize,
    mode: TeleportMode,
    rng: &mut R,
) -> Result<Transfer, TeleportError> {
    channel_transfer_with(w, j, mode, false, rng)
}

/// As [`channel_transfer`]; with `tamper` set, an adversary flips both
/// classical correction bits of every teleportation in flight.
pub fn channel_transfer_with<R: Rng + ?Sized>(
    w: &[f64],
    j: usize,
    mode: TeleportMode,
    tamper: bool,
    rng: &mut R,
) -> Result<Transfer, TeleportError> {
    let (theta, phi) = encode_params_as_angles(w, j)?;
    let mut received = w.to_vec();
    let (teleportations, estimate) = match mode {
        TeleportMode::Verify { checks } => {
            let mut failures = 0;
            for _ in 0..=checks {
                let o = teleport_once(theta, phi, rng)?;
                let (m1, m2) = if tamper {
                    (o.m1 ^ 1, o.m2 ^ 1)
                } else {
                    (o.m1, o.m2)
                };
                let bob = correct(&o.bob_raw, m1, m2)?;
                failures += verify_state(&bob, theta, phi, rng)?.bit as usize;
            }
            if failures > 0 {
                return Err(TeleportError::VerificationFailed {
                    failures,
                    checks: checks + 1,
                });
            }
            let (x0, x1) = decode_angles(theta, phi);
            received[j] = x0;
            received[j + 1] = x1;
            (checks + 1, None)
        }
        TeleportMode::Tomography { shots } => {
            let est = estimate_inner(theta, phi, shots, tamper, rng)?;
            let (x0, x1) = decode_angles(est.theta_hat, est.phi_hat);
            received[j] = x0;
            received[j + 1] = x1;
            (3 * shots, Some(est))
        }
    };
    Ok(Transfer {
        received,
        teleported: [j, j + 1],
        qubits_used: 3 * teleportations,
        teleportations,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_examples() {
        let (t, p) = encode_params_as_angles(&[0.0, 0.0], 0).unwrap();
        assert!((t - PI / 2.0).abs() < 1e-15 && (p - PI).abs() < 1e-15);
        let (t, _) = encode_params_as_angles(&[50.0, 0.0], 0).unwrap();
        assert!((PI - t).abs() < 1e-15);
        assert!(matches!(
            encode_params_as_angles(&[1.0, 2.0], 1),
            Err(TeleportError::IndexOutOfBounds { j: 1, len: 2 })
        ));
        assert_eq!(
            encode_params_as_angles(&[1.0, f64::NAN], 0),
            Err(TeleportError::NonFinite(1))
        );
    }

    #[test]
    fn decode_inverts_encode() {
        for i in -100..=100 {
            let x = i as f64 / 10.0;
            let (t, p) = encode_params_as_angles(&[x, -x], 0).unwrap();
            let (a, b) = decode_angles(t, p);
            assert!((a - x).abs() < 1e-9 && (b + x).abs() < 1e-9, "{x}: {a} {b}");
        }
    }

    #[test]
    fn poles_teleport_to_basis_states() {
        for o in teleport_branches(0.0, 0.3).unwrap() {
            assert!((o.bob_state.amplitudes()[0].norm() - 1.0).abs() < 1e-12);
        }
        for o in teleport_branches(PI, 1.1).unwrap() {
            assert!((o.bob_state.amplitudes()[1].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_one_one_before_and_after_correction() {
        let branches = teleport_branches(PI / 2.0, 0.0).unwrap();
        let o = branches.iter().find(|o| (o.m1, o.m2) == (1, 1)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // alpha|1> - beta|0> with alpha = beta = 1/sqrt 2
        let raw = o.bob_raw.amplitudes();
        assert!((raw[0] - Complex64::new(-h, 0.0)).norm() < 1e-12);
        assert!((raw[1] - Complex64::new(h, 0.0)).norm() < 1e-12);
        let fixed = o.bob_state.amplitudes();
        assert!((fixed[0] - Complex64::new(h, 0.0)).norm() < 1e-12);
        assert!((fixed[1] - Complex64::new(h, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn branches_uniform_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (t, p) = (rng.gen_range(0.0..=PI), rng.gen_range(0.0..TAU));
            let branches = teleport_branches(t, p).unwrap();
            assert_eq!(branches.len(), 4);
            for o in &branches {
                assert!((o.probability - 0.25).abs() < 1e-12);
                assert!(outcome_fidelity(o, t, p) > 1.0 - 1e-10);
                let v = verify_inverse(o, t, p, &mut rng).unwrap();
                assert_eq!(v.bit, 0);
                assert!((v.pre_prob - 1.0).abs() < 1e-10);
                // Q collapsed onto |m1>, A onto |m2>.
                for (i, a) in o.register.amplitudes().iter().enumerate() {
                    if (i & 1) as u8 != o.m1 || ((i >> 1) & 1) as u8 != o.m2 {
                        assert_eq!(a.norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn skipped_correction_is_visible_to_verification() {
        let (t, p) = (PI / 2.0, 0.7);
        let o = teleport_branches(t, p)
            .unwrap()
            .into_iter()
            .find(|o| (o.m1, o.m2) == (0, 1))
            .unwrap();
        let psi = target_state(t, p);
        let mut x_psi = psi.clone();
        x_psi.apply(Gate::X(0)).unwrap();
        let expected = fidelity(&psi, &x_psi).unwrap();
        assert!(expected < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut undo = o.bob_raw.clone();
        undo.apply(Gate::u3(0, t, p, 0.0).inverse()).unwrap();
        let p0 = 1.0 - undo.prob_one(0).unwrap();
        assert!((p0 - expected).abs() < 1e-12);
        let _ = verify_state(&o.bob_raw, t, p, &mut rng).unwrap();
    }

    #[test]
    fn sampled_teleport_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let o = teleport_once(1.0, 0.5, &mut rng).unwrap();
            assert!(outcome_fidelity(&o, 1.0, 0.5) > 1.0 - 1e-10);
        }
        assert!(teleport_once(-0.1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn tomography_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = estimate_angles(0.0, 0.0, 10_000, &mut rng).unwrap();
        assert!(est.theta_hat < 0.05);
        let est = estimate_angles(1.2, 4.0, 20_000, &mut rng).unwrap();
        assert!((est.theta_hat - 1.2).abs() < 0.05, "{est:?}");
        assert!((est.phi_hat - 4.0).abs() < 0.05, "{est:?}");
        assert_eq!(
            estimate_angles(1.0, 1.0, 99, &mut rng),
            Err(TeleportError::TooFewShots(99))
        );
    }

    #[test]
    fn verify_transfer_roundtrip_and_tamper() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = [0.3, -1.7, 2.5, 0.0];
        let t = channel_transfer(&w, 1, TeleportMode::default(), &mut rng).unwrap();
        assert_eq!(t.received[0], w[0]);
        assert_eq!(t.received[3], w[3]);
        assert!((t.received[1] - w[1]).abs() < 1e-9);
        assert!((t.received[2] - w[2]).abs() < 1e-9);
        assert_eq!(t.qubits_used, 3 * (DEFAULT_VERIFY_CHECKS + 1));

        let err = channel_transfer_with(&w, 1, TeleportMode::Verify { checks: 32 }, true, &mut rng);
        assert!(matches!(err, Err(TeleportError::VerificationFailed { .. })));
    }
}
