//! Dense statevector simulator.
//!
//! Qubit 0 is the least-significant bit of the amplitude index, so for a
//! three-qubit register the basis state `|q2 q1 q0>` lives at index
//! `q0 + 2*q1 + 4*q2`. Global phase is never normalized away; compare
//! states with [`fidelity`].

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

pub const MAX_QUBITS: usize = 10;

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("qubit count {0} outside 1..={MAX_QUBITS}")]
    QubitCount(usize),
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    InvalidQubit { index: usize, n_qubits: usize },
    #[error("control and target are both qubit {0}")]
    ControlIsTarget(usize),
    #[error("non-finite gate angle")]
    NonFiniteAngle,
    #[error("qubit list contains {0} twice")]
    DuplicateQubit(usize),
    #[error("remaining qubits are not in a single basis state")]
    NotSeparable,
    #[error("register sizes differ ({0} vs {1} qubits)")]
    SizeMismatch(usize, usize),
}

/// A single gate application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H(usize),
    X(usize),
    Z(usize),
    Cnot {
        control: usize,
        target: usize,
    },
    /// `U(theta, phi, lam)` in the usual three-angle convention:
    ///
    /// ```text
    /// [ cos(t/2)            -e^{i lam} sin(t/2)       ]
    /// [ e^{i phi} sin(t/2)   e^{i(phi+lam)} cos(t/2)  ]
    /// ```
    U3 {
        target: usize,
        theta: f64,
        phi: f64,
        lam: f64,
    },
}

impl Gate {
    pub fn u3(target: usize, theta: f64, phi: f64, lam: f64) -> Self {
        Gate::U3 {
            target,
            theta,
            phi,
            lam,
        }
    }

    /// Rotation about Y, expressed as `U3(theta, 0, 0)`.
    pub fn ry(target: usize, theta: f64) -> Self {
        Gate::u3(target, theta, 0.0, 0.0)
    }

    /// Phase gate `diag(1, e^{i lam})`, expressed as `U3(0, 0, lam)`.
    pub fn phase(target: usize, lam: f64) -> Self {
        Gate::u3(target, 0.0, 0.0, lam)
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Gate::U3 {
                target,
                theta,
                phi,
                lam,
            } => Gate::u3(target, -theta, -lam, -phi),
            g => g,
        }
    }

    fn validate(&self, n_qubits: usize) -> Result<(), QsimError> {
        let check = |q: usize| {
            if q < n_qubits {
                Ok(())
            } else {
                Err(QsimError::InvalidQubit { index: q, n_qubits })
            }
        };
        match *self {
            Gate::H(q) | Gate::X(q) | Gate::Z(q) => check(q),
            Gate::Cnot { control, target } => {
                check(control)?;
                check(target)?;
                if control == target {
                    return Err(QsimError::ControlIsTarget(target));
                }
                Ok(())
            }
            Gate::U3 {
                target,
                theta,
                phi,
                lam,
            } => {
                check(target)?;
                if !(theta.is_finite() && phi.is_finite() && lam.is_finite()) {
                    return Err(QsimError::NonFiniteAngle);
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub qubit: usize,
    pub bit: u8,
    /// Born probability of `bit` immediately before collapse.
    pub pre_prob: f64,
}

/// One exhaustive measurement branch from [`Statevector::branch_outcomes`].
#[derive(Debug, Clone)]
pub struct Branch {
    /// Outcome bits in the order the qubits were requested.
    pub bits: Vec<u8>,
    pub probability: f64,
    /// Collapsed and renormalized post-measurement state; `None` when the
    /// branch has zero probability.
    pub state: Option<Statevector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// The all-zeros state on `n_qubits` qubits.
    pub fn new(n_qubits: usize) -> Result<Self, QsimError> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(QsimError::QubitCount(n_qubits));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Builds a state from raw amplitudes. The length must be a power of two
    /// in range and the vector must be normalized.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, QsimError> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(QsimError::QubitCount(0));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(QsimError::QubitCount(n_qubits));
        }
        let sv = Self { n_qubits, amps };
        if (sv.norm_sqr() - 1.0).abs() > NORM_TOL {
            return Err(QsimError::NotSeparable);
        }
        Ok(sv)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_qubit(&self, q: usize) -> Result<(), QsimError> {
        if q < self.n_qubits {
            Ok(())
        } else {
            Err(QsimError::InvalidQubit {
                index: q,
                n_qubits: self.n_qubits,
            })
        }
    }

    pub fn apply(&mut self, gate: Gate) -> Result<(), QsimError> {
        gate.validate(self.n_qubits)?;
        match gate {
            Gate::H(q) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let m = [
                    [Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
                    [Complex64::new(s, 0.0), Complex64::new(-s, 0.0)],
                ];
                self.apply_single(q, m);
            }
            Gate::X(q) => {
                let bit = 1 << q;
                for i in 0..self.amps.len() {
                    if i & bit == 0 {
                        self.amps.swap(i, i | bit);
                    }
                }
            }
            Gate::Z(q) => {
                let bit = 1 << q;
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if i & bit != 0 {
                        *a = -*a;
                    }
                }
            }
            Gate::Cnot { control, target } => {
                let c = 1 << control;
                let t = 1 << target;
                for i in 0..self.amps.len() {
                    if i & c != 0 && i & t == 0 {
                        self.amps.swap(i, i | t);
                    }
                }
            }
            Gate::U3 {
                target,
                theta,
                phi,
                lam,
            } => {
                let (s, c) = (theta / 2.0).sin_cos();
                let m = [
                    [Complex64::new(c, 0.0), -Complex64::from_polar(s, lam)],
                    [
                        Complex64::from_polar(s, phi),
                        Complex64::from_polar(c, phi + lam),
                    ],
                ];
                self.apply_single(target, m);
            }
        }
        Ok(())
    }

    pub fn apply_all<I: IntoIterator<Item = Gate>>(&mut self, gates: I) -> Result<(), QsimError> {
        gates.into_iter().try_for_each(|g| self.apply(g))
    }

    /// Applies `U(theta, phi, 0)`, the rotation that prepares
    /// `cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>` from `|0>`.
    pub fn apply_u3(&mut self, target: usize, theta: f64, phi: f64) -> Result<(), QsimError> {
        self.apply(Gate::u3(target, theta, phi, 0.0))
    }

    fn apply_single(&mut self, q: usize, m: [[Complex64; 2]; 2]) {
        let bit = 1 << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let a0 = self.amps[i];
                let a1 = self.amps[i | bit];
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    /// Probability that `qubit` reads 1.
    pub fn prob_one(&self, qubit: usize) -> Result<f64, QsimError> {
        self.check_qubit(qubit)?;
        let bit = 1 << qubit;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects `qubit` onto `bit` and renormalizes. Returns the Born
    /// probability of the projection.
    fn collapse(&mut self, qubit: usize, bit: u8) -> f64 {
        let mask = 1 << qubit;
        let want = if bit == 1 { mask } else { 0 };
        let p: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let scale = if p > 0.0 { 1.0 / p.sqrt() } else { 0.0 };
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & mask == want {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        p
    }

    /// Born-rule measurement of one qubit in the computational basis. The
    /// state collapses in place.
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        qubit: usize,
        rng: &mut R,
    ) -> Result<MeasurementRecord, QsimError> {
        let p1 = self.prob_one(qubit)?;
        let draw: f64 = rng.gen();
        let bit = u8::from(draw < p1);
        let pre_prob = self.collapse(qubit, bit);
        assert!(pre_prob > 0.0, "selected a zero-probability branch");
        Ok(MeasurementRecord {
            qubit,
            bit,
            pre_prob,
        })
    }

    /// Enumerates every outcome of measuring `qubits` (in the given order)
    /// with its exact probability and post-measurement state.
    pub fn branch_outcomes(&self, qubits: &[usize]) -> Result<Vec<Branch>, QsimError> {
        for (k, &q) in qubits.iter().enumerate() {
            self.check_qubit(q)?;
            if qubits[..k].contains(&q) {
                return Err(QsimError::DuplicateQubit(q));
            }
        }
        let k = qubits.len();
        let mut out = Vec::with_capacity(1 << k);
        for outcome in 0..(1usize << k) {
            let bits: Vec<u8> = (0..k).map(|j| ((outcome >> j) & 1) as u8).collect();
            let mut post = self.clone();
            let mut probability = 1.0;
            for (&q, &b) in qubits.iter().zip(&bits) {
                probability *= post.collapse(q, b);
                if probability == 0.0 {
                    break;
                }
            }
            out.push(Branch {
                bits,
                probability,
                state: (probability > 0.0).then_some(post),
            });
        }
        Ok(out)
    }

    /// Draws `shots` full-register outcomes and returns a histogram indexed
    /// by basis state. The state is not disturbed.
    pub fn sample_counts<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Vec<u32> {
        sample_histogram(&self.probabilities(), shots, rng)
    }

    /// Returns the single-qubit state of `qubit` when every other qubit is in
    /// a definite computational basis state (as after measuring them).
    pub fn extract_qubit(&self, qubit: usize) -> Result<Statevector, QsimError> {
        self.check_qubit(qubit)?;
        let bit = 1 << qubit;
        let (rest, weight) = (0..self.amps.len())
            .filter(|i| i & bit == 0)
            .map(|i| (i, self.amps[i].norm_sqr() + self.amps[i | bit].norm_sqr()))
            .fold(
                (0, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if (weight - 1.0).abs() > NORM_TOL {
            return Err(QsimError::NotSeparable);
        }
        Ok(Statevector {
            n_qubits: 1,
            amps: vec![self.amps[rest], self.amps[rest | bit]],
        })
    }

    pub fn inner(&self, other: &Statevector) -> Result<Complex64, QsimError> {
        if self.n_qubits != other.n_qubits {
            return Err(QsimError::SizeMismatch(self.n_qubits, other.n_qubits));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// `|<a|b>|^2`, insensitive to global phase.
pub fn fidelity(a: &Statevector, b: &Statevector) -> Result<f64, QsimError> {
    Ok(a.inner(b)?.norm_sqr())
}

/// Multinomial histogram of `shots` draws from `probs` by inverse CDF.
pub(crate) fn sample_histogram<R: Rng + ?Sized>(
    probs: &[f64],
    shots: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..shots {
        let u = rng.gen::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        counts[idx] += 1;
    }
    counts
}
