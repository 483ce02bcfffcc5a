//! Quantum-secured federated learning simulator.
//!
//! Statevector simulation, BB84 key distribution, symmetric and
//! post-quantum channel cryptography, teleportation transport, a variational
//! quantum classifier and a FedAvg orchestrator, wired together by a CLI.

pub mod fedcore;
pub mod harness;
pub mod pqcsuite;
pub mod qkd;
pub mod qsim;
pub mod symcrypto;
pub mod tpchannel;
pub mod vqc;
