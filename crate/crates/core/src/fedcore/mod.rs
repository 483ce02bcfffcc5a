//! Federated rounds: local training, protected uplink, validity gate,
//! FedAvg, protected downlink, server evaluation.
//!
//! All randomness comes from per-purpose ChaCha streams keyed by
//! `(seed, purpose, round, device)`, so a run is a pure function of its
//! configuration and seed, and enabling an adversary does not perturb the
//! honest parties' draws.

mod channel;
mod metrics;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pqcsuite::SchemeRegistry;
use crate::vqc::{
    load_iris, partition_iid, synth_genomic, train_local, train_server_split, Dataset, DeviceSplit,
    Standardizer, TrainConfig, VqcError, VqcModel,
};

pub use channel::{
    downlink, establish_round_keys, sign_broadcast, uplink, AdversaryConfig, AdversaryKind,
    ChannelConfig, ChannelError, ChannelKind, Delivery, DeviceKeys, KemMode, LinkModel, LinkStats,
    SecureEnvelope, ServerKeys, KIND_FERNET, KIND_KEM_DIGEST, KIND_KEM_WEIGHTS,
};
pub use metrics::{
    metrics_csv_string, read_metrics_csv, write_metrics_csv, MetricsRow, RoundMetrics, Summary,
    CSV_HEADER, CSV_SCHEMA_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("cannot average an empty list")]
    Empty,
    #[error("vector {index} has length {got}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vqc(#[from] VqcError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Elementwise arithmetic mean.
pub fn fedavg(params: &[Vec<f64>]) -> Result<Vec<f64>, FedError> {
    let first = params.first().ok_or(FedError::Empty)?;
    let d = first.len();
    for (index, p) in params.iter().enumerate() {
        if p.len() != d {
            return Err(FedError::LengthMismatch {
                index,
                expected: d,
                got: p.len(),
            });
        }
    }
    let n = params.len() as f64;
    Ok((0..d)
        .map(|k| params.iter().map(|p| p[k]).sum::<f64>() / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetKind {
    #[default]
    Iris,
    SyntheticGenomic,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Iris => "iris",
            DatasetKind::SyntheticGenomic => "synthetic_genomic",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iris" => Ok(DatasetKind::Iris),
            "synthetic_genomic" | "genomic" => Ok(DatasetKind::SyntheticGenomic),
            _ => Err(format!("unknown dataset {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub devices: usize,
    pub rounds: usize,
    pub channel: ChannelConfig,
    pub adversary: AdversaryConfig,
    /// Training budget; `train.shots` is also used for server evaluation.
    pub train: TrainConfig,
    pub seed: u64,
    pub link: LinkModel,
    /// Fraction of IRIS held out for the server.
    pub server_fraction: f64,
    pub genomic_train: usize,
    pub genomic_server: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Iris,
            devices: 3,
            rounds: 10,
            channel: ChannelConfig::default(),
            adversary: AdversaryConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            link: LinkModel::default(),
            server_fraction: 0.2,
            genomic_train: 5000,
            genomic_server: 150,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |m: String| Err(FedError::Config(m));
        if self.devices == 0 || self.rounds == 0 {
            return bad("devices and rounds must be at least 1".into());
        }
        if !(crate::symcrypto::MIN_DP..=crate::symcrypto::MAX_DP).contains(&self.channel.dp) {
            return bad(format!("dp = {} outside 1..=12", self.channel.dp));
        }
        self.train.validate()?;
        let n_params = crate::vqc::CircuitSpec::default().n_params();
        if self.channel.teleport_index + 1 >= n_params {
            return bad(format!(
                "teleport index {} needs two of {n_params} parameters",
                self.channel.teleport_index
            ));
        }
        if let crate::tpchannel::TeleportMode::Tomography { shots } = self.channel.teleport_mode {
            if shots < crate::tpchannel::MIN_TOMOGRAPHY_SHOTS {
                return bad(format!("tomography shots {shots} below 100"));
            }
        }
        if !(0.0..=1.0).contains(&self.adversary.fraction) {
            return bad("adversary fraction outside [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.server_fraction) {
            return bad("server fraction outside [0, 1)".into());
        }
        if self.genomic_train == 0 || self.genomic_server == 0 {
            return bad("genomic sizes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Init = 1,
    Partition,
    Train,
    DeviceEval,
    Keys,
    Uplink,
    Adversary,
    Downlink,
    ServerEval,
    Data,
}

fn stream(seed: u64, purpose: Stream, round: usize, device: usize) -> ChaCha8Rng {
    let digest = Sha256::new()
        .chain_update(b"qshield stream")
        .chain_update(seed.to_le_bytes())
        .chain_update((purpose as u64).to_le_bytes())
        .chain_update((round as u64).to_le_bytes())
        .chain_update((device as u64).to_le_bytes())
        .finalize();
    ChaCha8Rng::from_seed(digest.into())
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    /// Parameters from the last successful downlink (the starting point of
    /// the next local training).
    pub model: VqcModel,
    pub split: DeviceSplit,
    pub keys: DeviceKeys,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: Vec<f64>,
    pub n_classes: usize,
    pub keys: ServerKeys,
    /// Held-out evaluation set, used for both validation loss/accuracy and
    /// test accuracy.
    pub eval: Dataset,
}

/// A running federation.
pub struct Federation {
    pub cfg: ExperimentConfig,
    pub registry: SchemeRegistry,
    pub devices: Vec<DeviceState>,
    pub server: ServerState,
    pub history: Vec<RoundMetrics>,
}

/// Server evaluation set and device pool for `cfg`, standardized on the pool.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), FedError> {
    let (pool, server) = match cfg.dataset {
        DatasetKind::Iris => {
            let iris = load_iris()?;
            train_server_split(&iris, cfg.server_fraction, data_seed(cfg.seed))?
        }
        DatasetKind::SyntheticGenomic => {
            synth_genomic(cfg.genomic_train, cfg.genomic_server, data_seed(cfg.seed))?
        }
    };
    let scaler = Standardizer::fit(&pool)?;
    Ok((scaler.transform(&pool), scaler.transform(&server)))
}

fn data_seed(seed: u64) -> u64 {
    use rand::Rng;
    stream(seed, Stream::Data, 0, 0).gen()
}

impl Federation {
    pub fn new(cfg: ExperimentConfig, registry: SchemeRegistry) -> Result<Self, FedError> {
        cfg.validate()?;
        match cfg.channel.kind {
            ChannelKind::Kem => drop(
                registry
                    .kem(&cfg.channel.kem_scheme)
                    .map_err(ChannelError::from)?,
            ),
            ChannelKind::PqcSign => drop(
                registry
                    .signature(&cfg.channel.sig_scheme)
                    .map_err(ChannelError::from)?,
            ),
            _ => {}
        }
        let (pool, eval) = prepare_data(&cfg)?;
        let splits = {
            use rand::Rng;
            let seed = stream(cfg.seed, Stream::Partition, 0, 0).gen();
            partition_iid(&pool, cfg.devices, seed)?
        };
        let n_classes = pool.n_classes;
        let init = VqcModel::random(n_classes, &mut stream(cfg.seed, Stream::Init, 0, 0))?;
        let devices = splits
            .into_iter()
            .enumerate()
            .map(|(id, split)| DeviceState {
                id,
                model: init.clone(),
                split,
                keys: DeviceKeys::default(),
            })
            .collect();
        Ok(Self {
            server: ServerState {
                global: init.params.clone(),
                n_classes,
                keys: ServerKeys::default(),
                eval,
            },
            cfg,
            registry,
            devices,
            history: Vec::new(),
        })
    }

    /// Runs the next round and appends its metrics to `history`.
    pub fn run_round(&mut self) -> Result<RoundMetrics, FedError> {
        let round = self.history.len() + 1;
        let seed = self.cfg.seed;
        let shots = self.cfg.train.shots;

        // Local training.
        let mut trained = Vec::with_capacity(self.devices.len());
        let mut device_losses = Vec::with_capacity(self.devices.len());
        for d in &self.devices {
            let report = train_local(
                &d.model,
                &d.split.train,
                &self.cfg.train,
                &mut stream(seed, Stream::Train, round, d.id),
            )?;
            let val = if d.split.val.is_empty() {
                &d.split.train
            } else {
                &d.split.val
            };
            device_losses.push(report.model.loss(
                val,
                shots,
                &mut stream(seed, Stream::DeviceEval, round, d.id),
            )?);
            trained.push(report.model.params);
        }

        // Channel phases.
        let wall = Instant::now();
        let mut stats = LinkStats::default();
        let mut device_keys: Vec<DeviceKeys> =
            self.devices.iter().map(|d| d.keys.clone()).collect();
        stats.absorb(&establish_round_keys(
            &self.cfg.channel,
            &self.registry,
            &mut self.server.keys,
            &mut device_keys,
            &mut stream(seed, Stream::Keys, round, 0),
        )?);

        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for (d, params) in self.devices.iter().zip(&trained) {
            let delivery = uplink(
                d.id,
                params,
                &mut device_keys[d.id],
                &mut self.server.keys,
                &self.cfg.channel,
                &self.registry,
                &self.cfg.adversary,
                &mut stream(seed, Stream::Uplink, round, d.id),
                &mut stream(seed, Stream::Adversary, round, d.id),
            );
            stats.absorb(&delivery.stats);
            match delivery.received {
                Ok(w) => accepted.push(w),
                Err(_) => rejected.push(d.id),
            }
        }

        // Signatures gate the whole round; other channels drop only the
        // offending devices.
        let aggregate = !accepted.is_empty()
            && !(self.cfg.channel.kind == ChannelKind::PqcSign && !rejected.is_empty());
        let mut failed_downlink = Vec::new();
        if aggregate {
            self.server.global = fedavg(&accepted)?;
            let broadcast = if self.cfg.channel.kind == ChannelKind::PqcSign {
                Some(sign_broadcast(
                    &self.server.global,
                    &mut self.server.keys,
                    &self.cfg.channel,
                    &self.registry,
                )?)
            } else {
                None
            };
            for d in &mut self.devices {
                let delivery = downlink(
                    d.id,
                    &self.server.global,
                    broadcast.as_ref(),
                    &self.server.keys,
                    &self.cfg.channel,
                    &self.registry,
                    &self.cfg.adversary,
                    &mut stream(seed, Stream::Downlink, round, d.id),
                );
                stats.absorb(&delivery.stats);
                match delivery.received {
                    Ok(w) => d.model.params = w,
                    Err(_) => failed_downlink.push(d.id),
                }
            }
        }
        for (d, k) in self.devices.iter_mut().zip(device_keys) {
            d.keys = k;
        }
        let channel_wall_us = wall.elapsed().as_micros() as u64;

        // Server evaluation.
        let global = VqcModel::new(self.server.global.clone(), self.server.n_classes)?;
        let mut eval_rng = stream(seed, Stream::ServerEval, round, 0);
        let server_val_loss = global.loss(&self.server.eval, shots, &mut eval_rng)?;
        let server_val_acc = global.accuracy(&self.server.eval, shots, &mut eval_rng)?;
        let server_test_acc = global.accuracy(&self.server.eval, shots, &mut eval_rng)?;

        let mut aborted_devices = rejected;
        aborted_devices.extend(failed_downlink);
        aborted_devices.sort_unstable();
        aborted_devices.dedup();

        let metrics = RoundMetrics {
            round,
            channel: self.cfg.channel.kind,
            server_test_acc,
            server_val_acc,
            server_val_loss,
            avg_device_loss: device_losses.iter().sum::<f64>() / device_losses.len() as f64,
            comm_time_s: self.cfg.link.seconds(&stats),
            qber: (!stats.qber.is_empty())
                .then(|| stats.qber.iter().sum::<f64>() / stats.qber.len() as f64),
            aborted_devices,
            aggregated: aggregate,
            channel_wall_us,
        };
        self.history.push(metrics.clone());
        Ok(metrics)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rounds: Vec<RoundMetrics>,
    pub summary: Summary,
    pub final_params: Vec<f64>,
}

impl ExperimentResult {
    pub fn csv(&self) -> String {
        metrics_csv_string(&self.rounds)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, FedError> {
    run_experiment_with(cfg, SchemeRegistry::with_reference_schemes())
}

/// As [`run_experiment`], resolving KEM and signature names in `registry`.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    registry: SchemeRegistry,
) -> Result<ExperimentResult, FedError> {
    let mut fed = Federation::new(cfg.clone(), registry)?;
    for _ in 0..cfg.rounds {
        fed.run_round()?;
    }
    Ok(ExperimentResult {
        summary: Summary::from_rounds(&fed.history),
        final_params: fed.server.global.clone(),
        rounds: fed.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fedavg_examples() {
        assert_eq!(
            fedavg(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
            [3.0, 4.0]
        );
        assert_eq!(fedavg(&[vec![0.5, -2.0]]).unwrap(), [0.5, -2.0]);
        assert_eq!(
            fedavg(&[vec![0.5, -2.0], vec![-0.5, 2.0]]).unwrap(),
            [0.0, 0.0]
        );
        assert_eq!(fedavg(&[]), Err(FedError::Empty));
        assert!(matches!(
            fedavg(&[vec![1.0], vec![1.0, 2.0]]),
            Err(FedError::LengthMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.channel.dp = 13;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            rounds: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.channel.teleport_index = 15;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_device_single_round_plain() {
        let cfg = ExperimentConfig {
            devices: 1,
            rounds: 1,
            ..Default::default()
        };
        let mut fed =
            Federation::new(cfg.clone(), SchemeRegistry::with_reference_schemes()).unwrap();
        let d = &fed.devices[0];
        let expected = train_local(
            &d.model,
            &d.split.train,
            &cfg.train,
            &mut stream(cfg.seed, Stream::Train, 1, 0),
        )
        .unwrap()
        .model
        .params;
        let m = fed.run_round().unwrap();
        assert!(m.aggregated && m.aborted_devices.is_empty() && m.qber.is_none());
        assert_eq!(fed.server.global, expected);
        assert_eq!(fed.devices[0].model.params, expected);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = stream(1, Stream::Train, 1, 0).gen();
        let b: u64 = stream(1, Stream::Train, 1, 1).gen();
        let c: u64 = stream(1, Stream::Train, 1, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
