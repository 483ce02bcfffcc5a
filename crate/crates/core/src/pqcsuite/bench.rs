use std::fmt;
use std::time::Instant;

use rand::{Rng, RngCore};

use super::{fixtures, KemProvider, PqcError, SchemeKind, SchemeRegistry, SignatureProvider};

pub const WARMUP_ITERATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Keygen,
    Sign,
    Verify,
    Encaps,
    Decaps,
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchOp::Keygen => "keygen",
            BenchOp::Sign => "sign",
            BenchOp::Verify => "verify",
            BenchOp::Encaps => "encaps",
            BenchOp::Decaps => "decaps",
        })
    }
}

/// Median timing of one operation. `size_bytes` is the artifact that op
/// produces (public key for keygen, signature or ciphertext, shared secret
/// for decaps; verify reports the signature it consumed).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchRecord {
    pub scheme: String,
    pub op: BenchOp,
    pub trials: usize,
    pub median_seconds: f64,
    pub size_bytes: usize,
    /// Same artifact size from the published tables, when the scheme is listed.
    pub fixture_size_bytes: Option<usize>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Runs `WARMUP_ITERATIONS` untimed then `trials` timed calls of `f`.
fn time_op<T>(trials: usize, mut f: impl FnMut(usize) -> T) -> (f64, T) {
    for i in 0..WARMUP_ITERATIONS {
        std::hint::black_box(f(i));
    }
    let mut times = Vec::with_capacity(trials);
    let mut last = None;
    for i in 0..trials {
        let start = Instant::now();
        let out = std::hint::black_box(f(WARMUP_ITERATIONS + i));
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    (median(times), last.expect("trials >= 1"))
}

/// Times keygen/sign/verify or keygen/encaps/decaps for a runnable scheme.
pub fn bench_scheme(
    registry: &SchemeRegistry,
    name: &str,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<BenchRecord>, PqcError> {
    if trials == 0 {
        return Err(PqcError::ZeroTrials);
    }
    match registry.kind_of(name) {
        Some(SchemeKind::Signature) => bench_sig(&*registry.signature(name)?, trials, rng),
        Some(SchemeKind::Kem) => bench_kem(&*registry.kem(name)?, trials, rng),
        None => Err(registry.signature(name).err().expect("not registered")),
    }
}

fn record(
    scheme: &str,
    op: BenchOp,
    trials: usize,
    median_seconds: f64,
    size_bytes: usize,
    fixture: Option<usize>,
) -> BenchRecord {
    BenchRecord {
        scheme: scheme.to_string(),
        op,
        trials,
        median_seconds,
        size_bytes,
        fixture_size_bytes: fixture,
    }
}

fn bench_sig(
    p: &dyn SignatureProvider,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<BenchRecord>, PqcError> {
    let name = p.info().name;
    let fx = fixtures::lookup(&name);
    let total = WARMUP_ITERATIONS + trials;

    let (t_keygen, kp) = time_op(trials, |_| p.keygen(rng));
    let pk_size = kp.pk.len();

    // One-time keys: every signing call gets its own keypair.
    let mut keys: Vec<_> = (0..total).map(|_| p.keygen(rng)).collect();
    let msgs: Vec<[u8; 32]> = (0..total).map(|_| rng.gen()).collect();
    let mut sigs = vec![Vec::new(); total];
    let (t_sign, sig_size) = {
        for i in 0..WARMUP_ITERATIONS {
            sigs[i] = p.sign(&mut keys[i].sk, &msgs[i])?;
        }
        let mut times = Vec::with_capacity(trials);
        for i in WARMUP_ITERATIONS..total {
            let start = Instant::now();
            let sig = p.sign(&mut keys[i].sk, &msgs[i])?;
            times.push(start.elapsed().as_secs_f64());
            sigs[i] = sig;
        }
        (median(times), sigs[total - 1].len())
    };

    let (t_verify, ok) = time_op(trials, |i| p.verify(&keys[i].pk, &msgs[i], &sigs[i]));
    debug_assert!(ok);

    Ok(vec![
        record(
            &name,
            BenchOp::Keygen,
            trials,
            t_keygen,
            pk_size,
            fx.as_ref().map(|f| f.pk_size),
        ),
        record(
            &name,
            BenchOp::Sign,
            trials,
            t_sign,
            sig_size,
            fx.as_ref().map(|f| f.sig_or_ct_size),
        ),
        record(
            &name,
            BenchOp::Verify,
            trials,
            t_verify,
            sig_size,
            fx.as_ref().map(|f| f.sig_or_ct_size),
        ),
    ])
}

fn bench_kem(
    p: &dyn KemProvider,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<BenchRecord>, PqcError> {
    let name = p.info().name;
    let fx = fixtures::lookup(&name);

    let (t_keygen, kp) = time_op(trials, |_| p.keygen(rng));
    let (t_encaps, enc) = time_op(trials, |_| p.encaps(&kp.ek, rng));
    let enc = enc?;
    let (t_decaps, ss) = time_op(trials, |_| p.decaps(&kp.dk, &enc.ct));
    let ss = ss?;

    Ok(vec![
        record(
            &name,
            BenchOp::Keygen,
            trials,
            t_keygen,
            kp.ek.len(),
            fx.as_ref().map(|f| f.pk_size),
        ),
        record(
            &name,
            BenchOp::Encaps,
            trials,
            t_encaps,
            enc.ct.len(),
            fx.as_ref().map(|f| f.sig_or_ct_size),
        ),
        record(
            &name,
            BenchOp::Decaps,
            trials,
            t_decaps,
            ss.len(),
            fx.as_ref().and_then(|f| f.ss_size),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn row_counts_and_zero_trials() {
        let reg = SchemeRegistry::with_reference_schemes();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sig = bench_scheme(&reg, "lamport", 5, &mut rng).unwrap();
        let ops: Vec<_> = sig.iter().map(|r| r.op).collect();
        assert_eq!(ops, [BenchOp::Keygen, BenchOp::Sign, BenchOp::Verify]);
        assert!(sig.iter().all(|r| r.median_seconds >= 0.0 && r.trials == 5));
        assert_eq!(sig[1].size_bytes, 8192);

        let kem = bench_scheme(&reg, "toy-lwe", 3, &mut rng).unwrap();
        assert_eq!(kem.len(), 3);
        assert_eq!(kem[2].size_bytes, 32);

        assert_eq!(
            bench_scheme(&reg, "lamport", 0, &mut rng),
            Err(PqcError::ZeroTrials)
        );
        assert!(matches!(
            bench_scheme(&reg, "Kyber512", 1, &mut rng),
            Err(PqcError::NotRunnable(_))
        ));
        assert!(matches!(
            bench_scheme(&reg, "nope", 1, &mut rng),
            Err(PqcError::UnknownScheme(_))
        ));
    }
}
