use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qshield::fedcore::fedavg;
use qshield::pqcsuite::SchemeRegistry;
use qshield::qsim::{Gate, Statevector};
use qshield::symcrypto::{
    aead_decrypt, aead_encrypt, otp_decrypt_bytes, otp_encrypt_bytes, pack_weights, parse_weights,
    round_to_dp, serialize_weights, unpack_weights, AeadEnvelope, OtpMode,
};
use qshield::tpchannel::{
    decode_angles, encode_params_as_angles, outcome_fidelity, teleport_branches,
};

fn gate(n: usize) -> impl Strategy<Value = Gate> {
    let q = 0..n;
    prop_oneof![
        q.clone().prop_map(Gate::H),
        q.clone().prop_map(Gate::X),
        q.clone().prop_map(Gate::Z),
        (q.clone(), q.clone())
            .prop_filter("distinct", |(c, t)| c != t)
            .prop_map(|(control, target)| Gate::Cnot { control, target }),
        (q, -7.0..7.0f64, -7.0..7.0f64, -7.0..7.0f64).prop_map(|(t, a, b, c)| Gate::u3(t, a, b, c)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_preserve_norm(gates in prop::collection::vec(gate(4), 0..40)) {
        let mut sv = Statevector::new(4).unwrap();
        sv.apply_all(gates.iter().copied()).unwrap();
        prop_assert!((sv.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gate_then_inverse_is_identity(gates in prop::collection::vec(gate(3), 1..20)) {
        let mut sv = Statevector::new(3).unwrap();
        sv.apply(Gate::H(0)).unwrap();
        sv.apply(Gate::u3(2, 0.3, 1.1, -0.4)).unwrap();
        let start = sv.clone();
        sv.apply_all(gates.iter().copied()).unwrap();
        sv.apply_all(gates.iter().rev().map(Gate::inverse)).unwrap();
        prop_assert!(start.inner(&sv).unwrap().norm_sqr() > 1.0 - 1e-10);
    }

    #[test]
    fn teleport_every_branch_exact(theta in 0.0..=std::f64::consts::PI, phi in 0.0..std::f64::consts::TAU) {
        let branches = teleport_branches(theta, phi).unwrap();
        prop_assert_eq!(branches.len(), 4);
        let total: f64 = branches.iter().map(|b| b.probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for b in &branches {
            prop_assert!(outcome_fidelity(b, theta, phi) > 1.0 - 1e-10);
        }
    }

    #[test]
    fn angle_encoding_inverts(a in -20.0..20.0f64, b in -20.0..20.0f64) {
        let (theta, phi) = encode_params_as_angles(&[a, b], 0).unwrap();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&theta));
        prop_assert!((0.0..=std::f64::consts::TAU).contains(&phi));
        let (x, y) = decode_angles(theta, phi);
        // logit near the clamp loses about exp(|x|) ulps of relative precision.
        let tol = |v: f64| 1e-15 * v.abs().exp().max(1.0) * 8.0;
        prop_assert!((x - a).abs() <= tol(a), "{} vs {}", x, a);
        prop_assert!((y - b).abs() <= tol(b), "{} vs {}", y, b);
    }

    #[test]
    fn serialization_roundtrips_at_dp(w in prop::collection::vec(-1e4..1e4f64, 0..30), dp in 1u32..=12) {
        let text = serialize_weights(&w, dp).unwrap();
        let back = parse_weights(text.as_str()).unwrap();
        let rounded: Vec<f64> = w.iter().map(|&x| round_to_dp(x, dp).unwrap()).collect();
        prop_assert_eq!(&back, &rounded);
        // Half a unit in the last decimal place, plus binary representation slack.
        let bound = |x: f64| 0.5 * 10f64.powi(-(dp as i32)) + 4.0 * f64::EPSILON * x.abs();
        prop_assert!(back.iter().zip(&w).all(|(r, x)| (r - x).abs() <= bound(*x)));
        // Serializing the rounded values is a fixed point.
        let again = serialize_weights(&back, dp).unwrap();
        prop_assert_eq!(again.as_str(), text.as_str());
    }

    #[test]
    fn otp_roundtrips(msg in prop::collection::vec(any::<u8>(), 0..200), extra in prop::collection::vec(any::<u8>(), 0..8), seed in any::<u64>()) {
        use rand::RngCore;
        let mut key = vec![0u8; msg.len()];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        key.extend(extra);
        for mode in [OtpMode::DoubleShift, OtpMode::Xor] {
            let ct = otp_encrypt_bytes(&msg, &key, mode).unwrap();
            prop_assert_eq!(ct.len(), msg.len());
            prop_assert_eq!(otp_decrypt_bytes(&ct, &key, mode).unwrap(), msg.clone());
        }
    }

    #[test]
    fn aead_wire_roundtrip_and_flip_rejection(
        msg in prop::collection::vec(any::<u8>(), 0..100),
        key in prop::array::uniform32(any::<u8>()),
        nonce in prop::array::uniform12(any::<u8>()),
        kind in any::<u8>(),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let wire = aead_encrypt(&key, kind, &nonce, &msg).unwrap().to_wire();
        prop_assert_eq!(wire.len(), 1 + 12 + 4 + msg.len() + 16);
        let env = AeadEnvelope::from_wire(&wire).unwrap();
        prop_assert_eq!(aead_decrypt(&key, &env).unwrap(), msg);
        let mut bad = wire.clone();
        bad[flip.index(wire.len())] ^= 1 << bit;
        let opened = AeadEnvelope::from_wire(&bad).ok().and_then(|e| aead_decrypt(&key, &e).ok());
        prop_assert!(opened.is_none());
    }

    #[test]
    fn packing_is_bit_exact(w in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..40)) {
        let bytes = pack_weights(&w);
        prop_assert_eq!(bytes.len(), 8 * w.len());
        let back = unpack_weights(&bytes).unwrap();
        prop_assert!(back.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn fedavg_is_bounded_and_order_free(
        params in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 6), 1..9),
        rot in 0usize..9,
    ) {
        let avg = fedavg(&params).unwrap();
        for k in 0..6 {
            let lo = params.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = params.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(avg[k] >= lo - 1e-12 && avg[k] <= hi + 1e-12);
        }
        let mut rotated = params.clone();
        rotated.rotate_left(rot % params.len());
        let other = fedavg(&rotated).unwrap();
        prop_assert!(avg.iter().zip(&other).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reference_kem_agrees(seed in any::<u64>()) {
        let reg = SchemeRegistry::with_reference_schemes();
        let kem = reg.kem("toy-lwe").unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let kp = kem.keygen(&mut r);
        let enc = kem.encaps(&kp.ek, &mut r).unwrap();
        prop_assert_eq!(enc.ss.len(), 32);
        prop_assert_eq!(kem.decaps(&kp.dk, &enc.ct).unwrap(), enc.ss);
    }

    #[test]
    fn lamport_signs_anything_once(seed in any::<u64>(), msg in prop::collection::vec(any::<u8>(), 0..64)) {
        let reg = SchemeRegistry::with_reference_schemes();
        let sig = reg.signature("lamport").unwrap();
        let mut kp = sig.keygen(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = sig.sign(&mut kp.sk, &msg).unwrap();
        prop_assert!(sig.verify(&kp.pk, &msg, &s));
        let mut other = msg.clone();
        other.push(0);
        prop_assert!(!sig.verify(&kp.pk, &other, &s));
        prop_assert!(sig.sign(&mut kp.sk, &msg).is_err());
    }
}
