//! An external provider plugged in under a published scheme name.
//!
//! `FakeDilithium2` is not a signature scheme: it tags messages with a keyed
//! hash, padded to the published artifact sizes. It stands in for a real
//! binding to check registry shadowing, fixture comparison and that the
//! channel code works with any provider.

use std::sync::Arc;

use rand::RngCore;
use sha2::{Digest, Sha256};

use qshield::fedcore::{run_experiment_with, ChannelKind, ExperimentConfig};
use qshield::harness::run_cli_with;
use qshield::pqcsuite::{
    bench_scheme, scheme_info, BenchOp, PqcError, SchemeInfo, SchemeKind, SchemeRegistry,
    SigKeypair, SignatureProvider, SigningKey,
};

const PK: usize = 1312;
const SK: usize = 2528;
const SIG: usize = 2420;

struct FakeDilithium2;

fn expand(pk: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SIG);
    let mut counter = 0u32;
    while out.len() < SIG {
        out.extend(
            Sha256::new()
                .chain_update(counter.to_be_bytes())
                .chain_update(pk)
                .chain_update(msg)
                .finalize(),
        );
        counter += 1;
    }
    out.truncate(SIG);
    out
}

impl SignatureProvider for FakeDilithium2 {
    fn info(&self) -> SchemeInfo {
        SchemeInfo {
            name: "Dilithium2".into(),
            kind: SchemeKind::Signature,
            nist_level: 2,
            pk_size: PK,
            sk_size: SK,
            sig_or_ct_size: SIG,
            ss_size: None,
        }
    }

    fn keygen(&self, rng: &mut dyn RngCore) -> SigKeypair {
        let mut pk = vec![0u8; PK];
        rng.fill_bytes(&mut pk);
        let mut sk = pk.clone();
        sk.resize(SK, 0);
        SigKeypair {
            scheme: "Dilithium2".into(),
            pk,
            sk: SigningKey::new(sk, false),
        }
    }

    fn sign_raw(&self, sk: &[u8], msg: &[u8]) -> Result<Vec<u8>, PqcError> {
        Ok(expand(&sk[..PK], msg))
    }

    fn verify(&self, pk: &[u8], msg: &[u8], sig: &[u8]) -> bool {
        sig == expand(pk, msg)
    }
}

fn registry() -> SchemeRegistry {
    let mut reg = SchemeRegistry::with_reference_schemes();
    reg.register_signature(Arc::new(FakeDilithium2));
    reg
}

#[test]
fn published_sizes_without_adapter() {
    let info = scheme_info("Dilithium2").unwrap();
    assert_eq!(
        (info.pk_size, info.sk_size, info.sig_or_ct_size),
        (PK, SK, SIG)
    );
    assert!(matches!(
        SchemeRegistry::with_reference_schemes().signature("Dilithium2"),
        Err(PqcError::NotRunnable(_))
    ));
}

#[test]
fn bench_rows_match_fixture_when_adapter_present() {
    let reg = registry();
    let rows = bench_scheme(&reg, "Dilithium2", 3, &mut rand::thread_rng()).unwrap();
    let ops: Vec<BenchOp> = rows.iter().map(|r| r.op).collect();
    assert_eq!(ops, [BenchOp::Keygen, BenchOp::Sign, BenchOp::Verify]);
    assert_eq!(
        rows.iter().map(|r| r.size_bytes).collect::<Vec<_>>(),
        [PK, SIG, SIG]
    );
    assert!(rows
        .iter()
        .all(|r| r.fixture_size_bytes == Some(r.size_bytes)));
}

#[test]
fn cli_bench_uses_supplied_registry() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli_with(
        [
            "qshield",
            "bench",
            "sig",
            "--schemes",
            "Dilithium2,lamport",
            "--trials",
            "2",
        ],
        None,
        registry(),
        &mut out,
        &mut err,
    );
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    let text = String::from_utf8(out).unwrap();
    let dilithium: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("Dilithium2,"))
        .collect();
    assert_eq!(dilithium.len(), 3);
    assert!(dilithium[0].ends_with(",1312,1312,yes"), "{}", dilithium[0]);
    assert!(dilithium[1].ends_with(",2420,2420,yes"), "{}", dilithium[1]);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("lamport,")).count(),
        3
    );
}

#[test]
fn signature_channel_runs_on_adapter() {
    let mut cfg = ExperimentConfig {
        rounds: 2,
        ..ExperimentConfig::default()
    };
    cfg.channel.kind = ChannelKind::PqcSign;
    cfg.channel.sig_scheme = "Dilithium2".into();
    let res = run_experiment_with(&cfg, registry()).unwrap();
    assert!(res
        .rounds
        .iter()
        .all(|r| r.aggregated && r.aborted_devices.is_empty()));

    let lamport = {
        let mut c = cfg.clone();
        c.channel.sig_scheme = "lamport".into();
        run_experiment_with(&c, registry()).unwrap()
    };
    // Same training randomness; only the signature bytes (and so the
    // modelled comm time) differ.
    assert_eq!(res.final_params, lamport.final_params);
    assert!(res.summary.avg_comm_time_s < lamport.summary.avg_comm_time_s);
}
