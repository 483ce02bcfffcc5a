//! Python bindings for `qshield`.
//!
//! Thin wrappers: experiment settings use the same `key -> value` strings
//! as the CLI config file, and results come back as CSV/JSON text or plain
//! Python containers.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qshield::fedcore::{self, FedError};
use qshield::harness::{self, ConfigError};
use qshield::pqcsuite::{self, SchemeKind, SchemeRegistry};
use qshield::qkd::{self, EveModel};
use qshield::symcrypto::{self, OtpMode};
use qshield::tpchannel;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn otp_mode(mode: &str) -> PyResult<OtpMode> {
    match mode {
        "double_shift" => Ok(OtpMode::DoubleShift),
        "xor" => Ok(OtpMode::Xor),
        other => Err(value_err(format!("unknown OTP mode {other:?}"))),
    }
}

fn eve_model(eve: &str, fraction: f64) -> PyResult<EveModel> {
    match eve {
        "none" => Ok(EveModel::NONE),
        "intercept" => EveModel::intercept_resend(fraction).map_err(value_err),
        "swap" => EveModel::store_and_resend(fraction).map_err(value_err),
        other => Err(value_err(format!("unknown eavesdropper {other:?}"))),
    }
}

/// Runs a federated experiment. `config` takes the CLI config keys
/// (`dataset` is required). Returns `(csv_text, summary_json)`; nothing is
/// written to disk.
#[pyfunction]
fn run_experiment(config: BTreeMap<String, String>) -> PyResult<(String, String)> {
    let settings = harness::resolve_run_settings(&config, None).map_err(value_err)?;
    let result = fedcore::run_experiment(&settings.experiment).map_err(|e| match e {
        FedError::Config(_) => value_err(ConfigError::Invalid(e)),
        other => PyRuntimeError::new_err(other.to_string()),
    })?;
    Ok((result.csv(), harness::summary_json(&settings, &result)))
}

/// One BB84 session. Returns a dict with `sifted_length`, `test_bits`,
/// `qber`, `aborted` and the sender's remaining `key` bits.
#[pyfunction]
#[pyo3(signature = (n, eve="none", fraction=1.0, test_fraction=0.25, threshold=0.11, seed=0))]
fn bb84(
    py: Python<'_>,
    n: usize,
    eve: &str,
    fraction: f64,
    test_fraction: f64,
    threshold: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let model = eve_model(eve, fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = qkd::run_bb84(n, &model, &mut rng).map_err(value_err)?;
    let qber = qkd::estimate_qber(&mut s, test_fraction, &mut rng).map_err(value_err)?;
    let aborted = qkd::abort_decision(&mut s, threshold).map_err(value_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("sifted_length", s.kept.len())?;
    out.set_item("test_bits", s.test_indices.len())?;
    out.set_item("qber", qber)?;
    out.set_item("aborted", aborted)?;
    out.set_item("key", if aborted { Vec::new() } else { s.key_sender() })?;
    Ok(out.into_any().unbind())
}

/// All four teleportation branches as `(m1, m2, probability, fidelity)`.
#[pyfunction]
fn teleport_branches(theta: f64, phi: f64) -> PyResult<Vec<(u8, u8, f64, f64)>> {
    let branches = tpchannel::teleport_branches(theta, phi).map_err(value_err)?;
    Ok(branches
        .iter()
        .map(|b| {
            (
                b.m1,
                b.m2,
                b.probability,
                tpchannel::outcome_fidelity(b, theta, phi),
            )
        })
        .collect())
}

#[pyfunction]
fn encode_angles(weights: Vec<f64>, j: usize) -> PyResult<(f64, f64)> {
    tpchannel::encode_params_as_angles(&weights, j).map_err(value_err)
}

#[pyfunction]
fn decode_angles(theta: f64, phi: f64) -> (f64, f64) {
    tpchannel::decode_angles(theta, phi)
}

#[pyfunction]
fn serialize_weights(weights: Vec<f64>, dp: u32) -> PyResult<String> {
    symcrypto::serialize_weights(&weights, dp)
        .map(|t| t.as_str().to_string())
        .map_err(value_err)
}

#[pyfunction]
fn parse_weights(text: &str) -> PyResult<Vec<f64>> {
    symcrypto::parse_weights(text).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (message, key, mode="double_shift"))]
fn otp_encrypt(message: Vec<u8>, key: Vec<u8>, mode: &str) -> PyResult<Vec<u8>> {
    symcrypto::otp_encrypt_bytes(&message, &key, otp_mode(mode)?).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (ciphertext, key, mode="double_shift"))]
fn otp_decrypt(ciphertext: Vec<u8>, key: Vec<u8>, mode: &str) -> PyResult<Vec<u8>> {
    symcrypto::otp_decrypt_bytes(&ciphertext, &key, otp_mode(mode)?).map_err(value_err)
}

#[pyfunction]
fn fedavg(params: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    fedcore::fedavg(&params).map_err(value_err)
}

/// Published or computed sizes: `(kind, pk, sk, sig_or_ct, ss)`.
#[pyfunction]
fn scheme_info(name: &str) -> PyResult<(String, usize, usize, usize, Option<usize>)> {
    let i = pqcsuite::scheme_info(name).map_err(value_err)?;
    let kind = match i.kind {
        SchemeKind::Kem => "kem",
        SchemeKind::Signature => "sig",
    };
    Ok((
        kind.into(),
        i.pk_size,
        i.sk_size,
        i.sig_or_ct_size,
        i.ss_size,
    ))
}

/// Benchmarks a runnable scheme and returns the CLI's CSV table.
#[pyfunction]
#[pyo3(name = "bench", signature = (name, trials=20, seed=0))]
fn bench_scheme(name: &str, trials: usize, seed: u64) -> PyResult<String> {
    let registry = SchemeRegistry::with_reference_schemes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = pqcsuite::bench_scheme(&registry, name, trials, &mut rng).map_err(value_err)?;
    Ok(harness::bench_csv(&rows))
}

#[pymodule]
fn pyqshield(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CSV_HEADER", fedcore::CSV_HEADER.to_vec())?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(bb84, m)?)?;
    m.add_function(wrap_pyfunction!(teleport_branches, m)?)?;
    m.add_function(wrap_pyfunction!(encode_angles, m)?)?;
    m.add_function(wrap_pyfunction!(decode_angles, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(parse_weights, m)?)?;
    m.add_function(wrap_pyfunction!(otp_encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(otp_decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(scheme_info, m)?)?;
    m.add_function(wrap_pyfunction!(bench_scheme, m)?)?;
    Ok(())
}
