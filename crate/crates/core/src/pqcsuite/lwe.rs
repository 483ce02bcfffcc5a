//! Ring-LWE KEM over `Z_q[x]/(x^n + 1)` with ternary secrets and errors.
//!
//! Keys: `b = a*s + e`, with `a` expanded from a public 32-byte seed.
//! Encapsulation: `u = a*r + e1`, `v = b*r + e2 + round(q/2)*m` for a random
//! n-bit message `m`; the shared secret is `SHA-256(label || m || ct)`.
//! Decapsulation recovers `m` from `v - u*s = m*round(q/2) + (e*r + e2 - e1*s)`.
//! The noise term is bounded by `2*n*eta^2 + eta`; parameters are rejected
//! unless that bound is strictly below `q/4`, so decoding never fails.

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{KemEncapsulation, KemKeypair, KemProvider, PqcError, SchemeInfo, SchemeKind};

pub(crate) const NAME: &str = "toy-lwe";
const SEED_LEN: usize = 32;
const SS_LABEL: &[u8] = b"qshield toy-lwe ss v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyLweParams {
    pub n: usize,
    pub q: u16,
    /// Secret and error coefficients are drawn uniformly from `[-eta, eta]`.
    pub eta: u16,
}

impl Default for ToyLweParams {
    fn default() -> Self {
        Self {
            n: 256,
            q: 3329,
            eta: 1,
        }
    }
}

impl ToyLweParams {
    pub fn noise_bound(&self) -> u64 {
        let (n, eta) = (self.n as u64, self.eta as u64);
        2 * n * eta * eta + eta
    }

    pub fn validate(&self) -> Result<(), PqcError> {
        if !self.n.is_power_of_two() || !(16..=1024).contains(&self.n) {
            return Err(PqcError::InvalidParams(format!(
                "n = {} must be a power of two in 16..=1024",
                self.n
            )));
        }
        if !(2..4096).contains(&self.q) {
            return Err(PqcError::InvalidParams(format!(
                "q = {} must fit in 12 bits",
                self.q
            )));
        }
        if self.eta == 0 {
            return Err(PqcError::InvalidParams("eta must be positive".into()));
        }
        // bound < q/4  <=>  4*bound < q
        if 4 * self.noise_bound() >= self.q as u64 {
            return Err(PqcError::InvalidParams(format!(
                "noise bound {} is not below q/4 = {}",
                self.noise_bound(),
                self.q as f64 / 4.0
            )));
        }
        Ok(())
    }

    fn poly_bytes(&self) -> usize {
        self.n * 3 / 2
    }

    pub fn ek_size(&self) -> usize {
        SEED_LEN + self.poly_bytes()
    }

    pub fn dk_size(&self) -> usize {
        self.poly_bytes()
    }

    pub fn ct_size(&self) -> usize {
        2 * self.poly_bytes()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ToyLweKem {
    params: ToyLweParams,
}

type Poly = Vec<u16>;

impl ToyLweKem {
    pub fn new(params: ToyLweParams) -> Result<Self, PqcError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> ToyLweParams {
        self.params
    }

    fn q(&self) -> i64 {
        self.params.q as i64
    }

    fn reduce(&self, x: i64) -> u16 {
        x.rem_euclid(self.q()) as u16
    }

    fn expand_a(&self, seed: &[u8]) -> Poly {
        let q = self.params.q;
        let mut out = Vec::with_capacity(self.params.n);
        let mut counter = 0u32;
        while out.len() < self.params.n {
            let block = Sha256::new()
                .chain_update(seed)
                .chain_update(counter.to_le_bytes())
                .finalize();
            counter += 1;
            for chunk in block.chunks_exact(3) {
                let v0 = u16::from(chunk[0]) | (u16::from(chunk[1] & 0x0f) << 8);
                let v1 = u16::from(chunk[1] >> 4) | (u16::from(chunk[2]) << 4);
                for v in [v0, v1] {
                    if v < q && out.len() < self.params.n {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// Small polynomial with coefficients uniform in `[-eta, eta]`.
    fn small(&self, rng: &mut dyn RngCore) -> Vec<i8> {
        let span = 2 * self.params.eta as u32 + 1;
        // Rejection sampling keeps the draw uniform.
        let limit = u32::MAX - u32::MAX % span;
        (0..self.params.n)
            .map(|_| loop {
                let x = rng.next_u32();
                if x < limit {
                    break (x % span) as i8 - self.params.eta as i8;
                }
            })
            .collect()
    }

    /// Negacyclic product of a full polynomial and a small one.
    fn mul_small(&self, a: &[u16], t: &[i8]) -> Vec<i64> {
        let n = self.params.n;
        let mut acc = vec![0i64; n];
        for (j, &tj) in t.iter().enumerate() {
            if tj == 0 {
                continue;
            }
            let tj = tj as i64;
            for (i, &ai) in a.iter().enumerate() {
                let prod = ai as i64 * tj;
                let k = i + j;
                if k < n {
                    acc[k] += prod;
                } else {
                    acc[k - n] -= prod;
                }
            }
        }
        acc
    }

    fn pack(&self, poly: &[u16]) -> Vec<u8> {
        poly.chunks_exact(2)
            .flat_map(|p| {
                let (x, y) = (p[0], p[1]);
                [x as u8, ((x >> 8) as u8) | ((y as u8) << 4), (y >> 4) as u8]
            })
            .collect()
    }

    fn unpack(&self, bytes: &[u8], what: &'static str) -> Result<Poly, PqcError> {
        if bytes.len() != self.params.poly_bytes() {
            return Err(PqcError::Malformed {
                what,
                detail: format!(
                    "expected {} bytes, got {}",
                    self.params.poly_bytes(),
                    bytes.len()
                ),
            });
        }
        let mut out = Vec::with_capacity(self.params.n);
        for c in bytes.chunks_exact(3) {
            out.push(u16::from(c[0]) | (u16::from(c[1] & 0x0f) << 8));
            out.push(u16::from(c[1] >> 4) | (u16::from(c[2]) << 4));
        }
        if let Some(v) = out.iter().find(|&&v| v >= self.params.q) {
            return Err(PqcError::Malformed {
                what,
                detail: format!("coefficient {v} not reduced mod q"),
            });
        }
        Ok(out)
    }

    fn half_q(&self) -> i64 {
        (self.q() + 1) / 2
    }

    fn shared_secret(&self, m: &[u8], ct: &[u8]) -> Vec<u8> {
        Sha256::new()
            .chain_update(SS_LABEL)
            .chain_update(m)
            .chain_update(ct)
            .finalize()
            .to_vec()
    }
}

impl KemProvider for ToyLweKem {
    fn info(&self) -> SchemeInfo {
        SchemeInfo {
            name: NAME.to_string(),
            kind: SchemeKind::Kem,
            nist_level: 0,
            pk_size: self.params.ek_size(),
            sk_size: self.params.dk_size(),
            sig_or_ct_size: self.params.ct_size(),
            ss_size: Some(32),
        }
    }

    fn keygen(&self, rng: &mut dyn RngCore) -> KemKeypair {
        let mut seed = [0u8; SEED_LEN];
        rng.fill_bytes(&mut seed);
        let a = self.expand_a(&seed);
        let s = self.small(rng);
        let e = self.small(rng);
        let b: Poly = self
            .mul_small(&a, &s)
            .into_iter()
            .zip(&e)
            .map(|(x, &ei)| self.reduce(x + ei as i64))
            .collect();
        let s_mod: Poly = s.iter().map(|&x| self.reduce(x as i64)).collect();

        let mut ek = seed.to_vec();
        ek.extend(self.pack(&b));
        KemKeypair {
            scheme: NAME.to_string(),
            ek,
            dk: self.pack(&s_mod),
        }
    }

    fn encaps(&self, ek: &[u8], rng: &mut dyn RngCore) -> Result<KemEncapsulation, PqcError> {
        if ek.len() != self.params.ek_size() {
            return Err(PqcError::Malformed {
                what: "encapsulation key",
                detail: format!("expected {} bytes, got {}", self.params.ek_size(), ek.len()),
            });
        }
        let (seed, b_bytes) = ek.split_at(SEED_LEN);
        let a = self.expand_a(seed);
        let b = self.unpack(b_bytes, "encapsulation key")?;

        let mut m = vec![0u8; self.params.n / 8];
        rng.fill_bytes(&mut m);
        let r = self.small(rng);
        let e1 = self.small(rng);
        let e2 = self.small(rng);

        let u: Poly = self
            .mul_small(&a, &r)
            .into_iter()
            .zip(&e1)
            .map(|(x, &e)| self.reduce(x + e as i64))
            .collect();
        let v: Poly = self
            .mul_small(&b, &r)
            .into_iter()
            .zip(&e2)
            .enumerate()
            .map(|(i, (x, &e))| {
                let bit = (m[i / 8] >> (7 - i % 8)) & 1;
                self.reduce(x + e as i64 + bit as i64 * self.half_q())
            })
            .collect();

        let mut ct = self.pack(&u);
        ct.extend(self.pack(&v));
        let ss = self.shared_secret(&m, &ct);
        Ok(KemEncapsulation { ct, ss })
    }

    fn decaps(&self, dk: &[u8], ct: &[u8]) -> Result<Vec<u8>, PqcError> {
        if ct.len() != self.params.ct_size() {
            return Err(PqcError::Malformed {
                what: "ciphertext",
                detail: format!("expected {} bytes, got {}", self.params.ct_size(), ct.len()),
            });
        }
        let s: Vec<i8> = self
            .unpack(dk, "decapsulation key")?
            .into_iter()
            .map(|x| {
                let x = x as i64;
                let centered = if x > self.q() / 2 { x - self.q() } else { x };
                centered as i8
            })
            .collect();
        let (u_bytes, v_bytes) = ct.split_at(self.params.poly_bytes());
        let u = self.unpack(u_bytes, "ciphertext")?;
        let v = self.unpack(v_bytes, "ciphertext")?;
        let us = self.mul_small(&u, &s);

        let q = self.q();
        let mut m = vec![0u8; self.params.n / 8];
        for (i, (&vi, usi)) in v.iter().zip(us).enumerate() {
            let w = (vi as i64 - usi).rem_euclid(q);
            // Closer to q/2 than to 0.
            if 4 * w > q && 4 * w < 3 * q {
                m[i / 8] |= 1 << (7 - i % 8);
            }
        }
        Ok(self.shared_secret(&m, ct))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_params_sizes() {
        let kem = ToyLweKem::default();
        let info = kem.info();
        // seed + 256 coefficients at 12 bits; ct carries two polynomials.
        assert_eq!(info.pk_size, 32 + 256 * 12 / 8);
        assert_eq!(info.sk_size, 256 * 12 / 8);
        assert_eq!(info.sig_or_ct_size, 2 * 256 * 12 / 8);
        assert_eq!(info.ss_size, Some(32));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kp = kem.keygen(&mut rng);
        let enc = kem.encaps(&kp.ek, &mut rng).unwrap();
        assert_eq!(kp.ek.len(), info.pk_size);
        assert_eq!(kp.dk.len(), info.sk_size);
        assert_eq!(enc.ct.len(), info.sig_or_ct_size);
        assert_eq!(enc.ss.len(), 32);
    }

    #[test]
    fn param_validation() {
        assert!(ToyLweParams::default().validate().is_ok());
        assert_eq!(ToyLweParams::default().noise_bound(), 513);
        let too_noisy = ToyLweParams {
            eta: 2,
            ..Default::default()
        };
        assert!(matches!(
            too_noisy.validate(),
            Err(PqcError::InvalidParams(_))
        ));
        let bad_n = ToyLweParams {
            n: 300,
            ..Default::default()
        };
        assert!(ToyLweKem::new(bad_n).is_err());
        let bad_q = ToyLweParams {
            q: 5000,
            ..Default::default()
        };
        assert!(bad_q.validate().is_err());
    }

    #[test]
    fn correctness_and_randomized_encapsulation() {
        let kem = ToyLweKem::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let kp = kem.keygen(&mut rng);
        let a = kem.encaps(&kp.ek, &mut rng).unwrap();
        let b = kem.encaps(&kp.ek, &mut rng).unwrap();
        assert_ne!(a.ct, b.ct);
        assert_ne!(a.ss, b.ss);
        for _ in 0..200 {
            let kp = kem.keygen(&mut rng);
            let enc = kem.encaps(&kp.ek, &mut rng).unwrap();
            assert_eq!(kem.decaps(&kp.dk, &enc.ct).unwrap(), enc.ss);
        }
    }

    #[test]
    fn pack_roundtrip_and_range_check() {
        let kem = ToyLweKem::default();
        let poly: Poly = (0..256).map(|i| (i * 13 % 3329) as u16).collect();
        assert_eq!(kem.unpack(&kem.pack(&poly), "p").unwrap(), poly);
        let mut bytes = kem.pack(&poly);
        bytes[0] = 0xff;
        bytes[1] |= 0x0f; // first coefficient becomes 4095 >= q
        assert!(matches!(
            kem.unpack(&bytes, "p"),
            Err(PqcError::Malformed { .. })
        ));
    }

    #[test]
    fn malformed_ciphertext_lengths() {
        let kem = ToyLweKem::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kp = kem.keygen(&mut rng);
        assert!(kem.decaps(&kp.dk, &[0u8; 10]).is_err());
        assert!(kem.encaps(&kp.ek[1..], &mut rng).is_err());
    }

    #[test]
    fn flipped_ciphertext_changes_secret() {
        let kem = ToyLweKem::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kp = kem.keygen(&mut rng);
        let enc = kem.encaps(&kp.ek, &mut rng).unwrap();
        for pos in (0..enc.ct.len()).step_by(37) {
            let mut ct = enc.ct.clone();
            ct[pos] ^= 0x01;
            match kem.decaps(&kp.dk, &ct) {
                Ok(ss) => assert_ne!(ss, enc.ss),
                Err(PqcError::Malformed { .. }) => {}
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }
}
