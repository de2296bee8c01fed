//! Primitive outputs checked against vectors produced by an independent
//! implementation (see `fixtures/gen_vectors.py`).

use std::sync::OnceLock;

use num_bigint::BigUint;
use scramblesuit::crypto::{
    derive_session_keys, hmac_sha256, mac128, secure_random, stream_cipher, verify_mac128, Mac128, MasterKey,
    Role, StreamCipher,
};
use scramblesuit::handshake::uniformdh::{encode_element, modulus, GENERATOR};
use scramblesuit::handshake::UniformDhKeypair;
use serde_json::Value;

fn vectors() -> &'static Value {
    static V: OnceLock<Value> = OnceLock::new();
    V.get_or_init(|| {
        serde_json::from_str(include_str!("fixtures/oracle_vectors.json")).expect("fixture parses")
    })
}

fn hexfield(v: &Value, name: &str) -> Vec<u8> {
    hex::decode(v[name].as_str().unwrap()).unwrap()
}

fn chi_square_critical() -> f64 {
    vectors()["chi2_255_alpha_0_001"].as_f64().unwrap()
}

fn chi_square_bytes(data: &[u8]) -> f64 {
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let expected = data.len() as f64 / 256.0;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn hmac_sha256_truncation_matches_reference() {
    for v in vectors()["hmac_sha256"].as_array().unwrap() {
        let (key, msg, full) = (hexfield(v, "key"), hexfield(v, "msg"), hexfield(v, "tag"));
        assert_eq!(hmac_sha256(&key, &msg).to_vec(), full);
        let tag = mac128(&key, &msg);
        assert_eq!(&tag[..], &full[..16]);
        assert!(verify_mac128(&key, &msg, &full[..16]));

        let mut split = Mac128::new(&key);
        let mid = msg.len() / 3;
        split.update(&msg[..mid]);
        split.update(&msg[mid..]);
        assert_eq!(split.finalize(), tag);
    }
}

#[test]
fn mac128_known_answers() {
    let v = &vectors()["mac128_hi_there"];
    assert_eq!(mac128(&hexfield(v, "key"), &hexfield(v, "msg")).to_vec(), hexfield(v, "tag"));
    assert_eq!(hex::encode(mac128(&[0x0b; 32], b"Hi There")), "198a607eb44bfbc69903a0f1cf2bbdc5");
    let v = &vectors()["mac128_empty"];
    assert_eq!(mac128(&hexfield(v, "key"), b"").to_vec(), hexfield(v, "tag"));
}

#[test]
fn mac128_rejects_any_single_bit_flip() {
    let key = [7u8; 32];
    let msg = b"authenticated payload";
    let tag = mac128(&key, msg);
    for bit in 0..128 {
        let mut bad = tag;
        bad[bit / 8] ^= 1 << (bit % 8);
        assert!(!verify_mac128(&key, msg, &bad));
    }
    assert!(!verify_mac128(&key, msg, &tag[..15]));
}

#[test]
fn session_keys_partition_the_reference_okm() {
    for v in vectors()["hkdf_session_keys"].as_array().unwrap() {
        let master = MasterKey::from_slice(&hexfield(v, "ikm")).unwrap();
        let okm = hexfield(v, "okm");
        let c = derive_session_keys(&master, Role::Client);
        let s = derive_session_keys(&master, Role::Server);

        assert_eq!(c.send_enc_key[..], okm[0..32]);
        assert_eq!(c.send_ctr_nonce[..], okm[32..48]);
        assert_eq!(c.recv_enc_key[..], okm[48..80]);
        assert_eq!(c.recv_ctr_nonce[..], okm[80..96]);
        assert_eq!(c.send_mac_key[..], okm[96..128]);
        assert_eq!(c.recv_mac_key[..], okm[128..160]);

        assert_eq!(s.send_enc_key, c.recv_enc_key);
        assert_eq!(s.recv_enc_key, c.send_enc_key);
        assert_eq!(s.send_ctr_nonce, c.recv_ctr_nonce);
        assert_eq!(s.send_mac_key, c.recv_mac_key);
        assert_eq!(s.recv_mac_key, c.send_mac_key);
    }
}

#[test]
fn hkdf_backend_matches_rfc5869_case_3() {
    // Empty salt and empty info; confirms the backend treats a missing salt
    // the same way the reference does.
    let v = &vectors()["hkdf_rfc5869_case3"];
    let mut okm = [0u8; 42];
    hkdf::Hkdf::<sha2::Sha256>::new(None, &hexfield(v, "ikm")).expand(b"", &mut okm).unwrap();
    assert_eq!(okm.to_vec(), hexfield(v, "okm"));
    assert_eq!(
        hex::encode(okm),
        "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8"
    );

    let v = &vectors()["hkdf_empty_salt_label"];
    let mut okm = [0u8; 160];
    hkdf::Hkdf::<sha2::Sha256>::new(Some(&[]), &hexfield(v, "ikm"))
        .expand(b"ScrambleSuitKeys", &mut okm)
        .unwrap();
    assert_eq!(okm.to_vec(), hexfield(v, "okm"));
}

#[test]
fn aes256_ctr_matches_reference() {
    for v in vectors()["aes256_ctr"].as_array().unwrap() {
        let key: [u8; 32] = hexfield(v, "key").try_into().unwrap();
        let nonce: [u8; 16] = hexfield(v, "nonce").try_into().unwrap();
        let (pt, ct) = (hexfield(v, "plaintext"), hexfield(v, "ciphertext"));
        assert_eq!(stream_cipher(&key, &nonce, &pt), ct);

        // Same keystream when applied in uneven pieces.
        let mut cipher = StreamCipher::new(&key, &nonce);
        let mut buf = pt.clone();
        let mut at = 0;
        for step in [1usize, 15, 16, 17, 1000, 3047].iter().cycle() {
            if at >= buf.len() {
                break;
            }
            let end = (at + step).min(buf.len());
            cipher.apply(&mut buf[at..end]);
            at = end;
        }
        assert_eq!(buf, ct);
        assert_eq!(stream_cipher(&key, &nonce, &ct), pt);
    }
}

#[test]
fn aes256_single_block_known_answer() {
    // With a zero plaintext the first CTR block is the raw block cipher
    // applied to the counter block.
    let key: [u8; 32] = std::array::from_fn(|i| i as u8);
    let block: [u8; 16] = hex::decode("00112233445566778899aabbccddeeff").unwrap().try_into().unwrap();
    let out = stream_cipher(&key, &block, &[0u8; 16]);
    assert_eq!(hex::encode(out), "8ea2b7ca516745bfeafc49904b496089");
}

#[test]
fn ctr_counter_carries_across_the_full_block() {
    let key = [9u8; 32];
    let nonce = [0xff; 16];
    let two = stream_cipher(&key, &nonce, &[0u8; 32]);
    let wrapped = stream_cipher(&key, &[0u8; 16], &[0u8; 16]);
    assert_eq!(two[16..], wrapped[..]);
}

#[test]
fn uniformdh_tiny_exponents_match_reference() {
    let v = &vectors()["uniformdh_x2_y4"];
    let p = modulus();
    let g = BigUint::from(GENERATOR);
    let a = UniformDhKeypair::from_private(BigUint::from(2u32), false);
    let b_pub = encode_element(&g.modpow(&BigUint::from(4u32), p));
    let shared = a.shared_element(&b_pub).unwrap();
    assert_eq!(encode_element(&shared).to_vec(), hexfield(v, "shared"));
    assert_eq!(a.shared(&b_pub).unwrap().as_bytes().to_vec(), hexfield(v, "master"));

    // The complement p - X must yield the same secret.
    let b_complement = encode_element(&(p - g.modpow(&BigUint::from(4u32), p)));
    assert_eq!(a.shared(&b_complement).unwrap().as_bytes().to_vec(), hexfield(v, "master"));
}

#[test]
fn uniformdh_agreement_over_many_trials() {
    let mut rng = rand::rng();
    for i in 0..100 {
        let a = UniformDhKeypair::generate_with_choice(&mut rng, i % 2 == 0);
        let b = UniformDhKeypair::generate_with_choice(&mut rng, i % 3 == 0);
        assert!(!a.private_x().bit(0), "private exponent is even");
        let ka = a.shared(b.public_wire()).unwrap();
        let kb = b.shared(a.public_wire()).unwrap();
        assert_eq!(ka, kb);
    }
}

#[test]
fn uniformdh_public_first_byte_is_uniform() {
    let mut rng = rand::rng();
    let firsts: Vec<u8> =
        (0..1000).map(|_| UniformDhKeypair::generate(&mut rng).public_wire()[0]).collect();
    // 1000 samples over 256 bins is sparse; test high and low halves instead
    // and the byte histogram only loosely.
    let high = firsts.iter().filter(|&&b| b >= 0x80).count();
    assert!((400..=600).contains(&high), "high-bit count {high}");
    assert!(chi_square_bytes(&firsts) < chi_square_critical());
}

#[test]
fn random_bytes_pass_chi_square() {
    let data = secure_random(1_000_000);
    let stat = chi_square_bytes(&data);
    assert!(stat < chi_square_critical(), "chi-square {stat}");
}

#[test]
fn ciphertext_of_zeros_passes_chi_square() {
    let key: [u8; 32] = secure_random(32).try_into().unwrap();
    let nonce: [u8; 16] = secure_random(16).try_into().unwrap();
    let ct = stream_cipher(&key, &nonce, &[0u8; 10_240]);
    let stat = chi_square_bytes(&ct);
    assert!(stat < chi_square_critical(), "chi-square {stat}");
}
