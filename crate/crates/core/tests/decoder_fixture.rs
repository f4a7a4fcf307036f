//! Weights and reference outputs written by `fixtures/make_decoder.py`.

use pld_core::decoder::{load_weights, save_weights, Immersion};

const WEIGHTS: &[u8] = include_bytes!("fixtures/decoder.pldw");
const FORWARD: &str = include_str!("fixtures/decoder_forward.csv");

#[test]
fn numpy_forward_pass_agrees() {
    let net = load_weights(WEIGHTS).unwrap();
    assert_eq!((net.input_dim(), net.output_dim()), (2, 3));
    let mut rows = 0;
    for line in FORWARD.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let x = net.forward(&v[..2]).unwrap();
        for (a, b) in x.iter().zip(&v[2..]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b} at {:?}", &v[..2]);
        }
        rows += 1;
    }
    assert_eq!(rows, 100);
}

#[test]
fn fixture_re_encodes_byte_for_byte() {
    let net = load_weights(WEIGHTS).unwrap();
    assert_eq!(save_weights(&net), WEIGHTS);
}

#[test]
fn jacobian_matches_central_differences() {
    let net = load_weights(WEIGHTS).unwrap();
    let h = 1e-6;
    for z in [[0.3, -0.7], [-1.5, 1.2], [1.9, 0.05]] {
        let j = net.jacobian(&z).unwrap();
        for c in 0..2 {
            let (mut up, mut dn) = (z, z);
            up[c] += h;
            dn[c] -= h;
            let fd = (net.forward(&up).unwrap() - net.forward(&dn).unwrap()) / (2.0 * h);
            for r in 0..3 {
                assert!((j[(r, c)] - fd[r]).abs() < 1e-8);
            }
        }
    }
}
