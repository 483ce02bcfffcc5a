//! Four-qubit variational classifier.
//!
//! Feature map: H on every qubit, then a Z-phase of `2 x_q` on qubit `q`.
//! Ansatz: `reps` layers of per-qubit RY followed by a CNOT chain
//! 0→1→2→3, closed by one more RY layer. Classes are read out by bucketing
//! basis-state indices modulo the class count.

mod data;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::qsim::{Gate, QsimError, Statevector};

pub use data::{
    load_dataset_csv, load_iris, partition_iid, synth_genomic, train_server_split, Dataset,
    DeviceSplit, Standardizer, GENOMIC_RAW_DIM, IRIS_CSV,
};
pub use optim::{nelder_mead, spsa, OptimResult};

pub const N_FEATURES: usize = 4;
pub type Features = [f64; N_FEATURES];

/// Probability floor inside the log loss.
pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqcError {
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFiniteParam(usize),
    #[error("class count must be 2 or 3, got {0}")]
    ClassCount(usize),
    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },
    #[error("empty data split")]
    EmptySplit,
    #[error("max_iter must be at least 1")]
    ZeroIterations,
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("cannot split {samples} samples across {devices} devices")]
    TooManyDevices { devices: usize, samples: usize },
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Qsim(#[from] QsimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub reps: usize,
}

impl Default for CircuitSpec {
    fn default() -> Self {
        Self {
            n_qubits: N_FEATURES,
            reps: 3,
        }
    }
}

impl CircuitSpec {
    pub fn n_params(&self) -> usize {
        self.n_qubits * (self.reps + 1)
    }
}

/// Prepares the classifier state for input `x`.
pub fn run_circuit(x: &Features, params: &[f64]) -> Result<Statevector, VqcError> {
    let spec = CircuitSpec::default();
    if params.len() != spec.n_params() {
        return Err(VqcError::ParamCount {
            expected: spec.n_params(),
            got: params.len(),
        });
    }
    let n = spec.n_qubits;
    let mut sv = Statevector::new(n)?;
    for (q, &xq) in x.iter().enumerate().take(n) {
        sv.apply(Gate::H(q))?;
        sv.apply(Gate::phase(q, 2.0 * xq))?;
    }
    for layer in 0..=spec.reps {
        for q in 0..n {
            sv.apply(Gate::ry(q, params[layer * n + q]))?;
        }
        if layer < spec.reps {
            for q in 0..n - 1 {
                sv.apply(Gate::Cnot {
                    control: q,
                    target: q + 1,
                })?;
            }
        }
    }
    Ok(sv)
}

/// Sums basis-state probabilities into `n_classes` buckets by index mod
/// `n_classes`.
pub fn bucket(probs: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_classes];
    for (i, p) in probs.iter().enumerate() {
        out[i % n_classes] += p;
    }
    out
}

/// Multinomial counts drawn as a chain of conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(probs: &[f64], shots: usize, rng: &mut R) -> Vec<u64> {
    let mut remaining = shots as u64;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(remaining);
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = if remaining == 0 || q == 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .expect("q in [0, 1]")
                .sample(rng)
        };
        out.push(k);
        remaining -= k;
        mass -= p;
    }
    out
}

/// First index of the maximum.
fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `-ln(max(p, 1e-9))`.
pub fn nll(p_true: f64) -> f64 {
    -p_true.max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqcModel {
    pub params: Vec<f64>,
    pub n_classes: usize,
}

impl VqcModel {
    pub fn new(params: Vec<f64>, n_classes: usize) -> Result<Self, VqcError> {
        let model = Self { params, n_classes };
        model.validate()?;
        Ok(model)
    }

    /// Parameters drawn uniformly from `[-pi, pi)`.
    pub fn random<R: Rng + ?Sized>(n_classes: usize, rng: &mut R) -> Result<Self, VqcError> {
        let n = CircuitSpec::default().n_params();
        let pi = std::f64::consts::PI;
        Self::new((0..n).map(|_| rng.gen_range(-pi..pi)).collect(), n_classes)
    }

    pub fn validate(&self) -> Result<(), VqcError> {
        if !(2..=3).contains(&self.n_classes) {
            return Err(VqcError::ClassCount(self.n_classes));
        }
        let expected = CircuitSpec::default().n_params();
        if self.params.len() != expected {
            return Err(VqcError::ParamCount {
                expected,
                got: self.params.len(),
            });
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(VqcError::NonFiniteParam(i));
        }
        Ok(())
    }

    /// Exact class distribution for `x`.
    pub fn class_probabilities(&self, x: &Features) -> Result<Vec<f64>, VqcError> {
        Ok(bucket(
            &run_circuit(x, &self.params)?.probabilities(),
            self.n_classes,
        ))
    }

    /// Class frequencies from `shots` sampled outcomes.
    pub fn sampled_class_frequencies<R: Rng + ?Sized>(
        &self,
        x: &Features,
        shots: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>, VqcError> {
        if shots == 0 {
            return Err(VqcError::ZeroShots);
        }
        let probs = self.class_probabilities(x)?;
        Ok(sample_multinomial(&probs, shots, rng)
            .into_iter()
            .map(|c| c as f64 / shots as f64)
            .collect())
    }

    /// Argmax of sampled class counts; ties go to the lowest class id.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        x: &Features,
        shots: usize,
        rng: &mut R,
    ) -> Result<usize, VqcError> {
        Ok(argmax(&self.sampled_class_frequencies(x, shots, rng)?))
    }

    pub fn predict_exact(&self, x: &Features) -> Result<usize, VqcError> {
        Ok(argmax(&self.class_probabilities(x)?))
    }

    fn check_split(&self, data: &Dataset) -> Result<(), VqcError> {
        if data.is_empty() {
            return Err(VqcError::EmptySplit);
        }
        if let Some(&label) = data.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(VqcError::Label {
                label,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    /// Mean negative log of the sampled true-class frequency.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        shots: usize,
        rng: &mut R,
    ) -> Result<f64, VqcError> {
        self.check_split(data)?;
        let mut total = 0.0;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            total += nll(self.sampled_class_frequencies(x, shots, rng)?[y]);
        }
        Ok(total / data.len() as f64)
    }

    /// Mean negative log of the exact true-class probability.
    pub fn loss_exact(&self, data: &Dataset) -> Result<f64, VqcError> {
        self.check_split(data)?;
        let mut total = 0.0;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            total += nll(self.class_probabilities(x)?[y]);
        }
        Ok(total / data.len() as f64)
    }

    pub fn accuracy<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        shots: usize,
        rng: &mut R,
    ) -> Result<f64, VqcError> {
        self.check_split(data)?;
        let mut correct = 0usize;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            correct += usize::from(self.predict(x, shots, rng)? == y);
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    NelderMead,
    Spsa,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub shots: usize,
    pub optimizer: OptimizerKind,
    /// Initial simplex edge (Nelder-Mead) or perturbation size (SPSA), radians.
    pub step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            shots: 1024,
            optimizer: OptimizerKind::NelderMead,
            step: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VqcError> {
        if self.max_iter == 0 {
            return Err(VqcError::ZeroIterations);
        }
        if self.shots == 0 {
            return Err(VqcError::ZeroShots);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: VqcModel,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Best-so-far loss after each iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Trains on `data` starting from `model`, returning the best parameters
/// seen.
///
/// Every objective call reuses one shot-sampling seed drawn from `rng`, so
/// the optimizer sees a deterministic function of the parameters.
pub fn train_local<R: Rng + ?Sized>(
    model: &VqcModel,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport, VqcError> {
    cfg.validate()?;
    model.validate()?;
    model.check_split(data)?;
    let objective_seed: u64 = rng.gen();
    let n_classes = model.n_classes;
    let objective = |p: &[f64]| -> f64 {
        let m = VqcModel {
            params: p.to_vec(),
            n_classes,
        };
        let mut crn = ChaCha8Rng::seed_from_u64(objective_seed);
        m.loss(data, cfg.shots, &mut crn)
            .expect("validated model and split")
    };
    let result = match cfg.optimizer {
        OptimizerKind::NelderMead => nelder_mead(objective, &model.params, cfg.step, cfg.max_iter),
        OptimizerKind::Spsa => spsa(objective, &model.params, cfg.step, cfg.max_iter, rng),
    };
    Ok(TrainReport {
        model: VqcModel {
            params: result.best_x,
            n_classes,
        },
        initial_loss: result.initial_f,
        best_loss: result.best_f,
        history: result.history,
        evaluations: result.evaluations,
    })
}
