//! Library results against slow, independent reimplementations.

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use hashemb::embedkit::{split_bits, AddParams, PoolParams, ProjParams};
use hashemb::hashing::{digest_to_index, Digest128};
use hashemb::{featurize, md5_digest, tokenize_whitespace, BitVector, NGramVocab};
use ndarray::{Array2, Array3};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bigint_mod(hex: &str, n: u32) -> u64 {
    let v = BigUint::parse_bytes(hex.as_bytes(), 16).unwrap() % BigUint::from(n);
    v.to_u64_digits().first().copied().unwrap_or(0)
}

#[test]
fn digest_mod_matches_bigint() {
    // printed digest of "play", and plain MD5 of "play"
    let printed = Digest128::from_hex("d077f244def8a70e5ea758bd8352fcd8").unwrap();
    assert_eq!(bigint_mod("d077f244def8a70e5ea758bd8352fcd8", 50_000), 10_632);
    assert_eq!(digest_to_index(printed, 50_000).unwrap(), 10_632);
    let plain = md5_digest("play", None);
    assert_eq!(bigint_mod(&plain.to_hex(), 50_000), 15_933);
    assert_eq!(digest_to_index(plain, 50_000).unwrap(), 15_933);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let d = Digest128(rng.random());
        let n: u32 = rng.random_range(1..=u32::MAX);
        assert_eq!(digest_to_index(d, n as u64).unwrap(), bigint_mod(&d.to_hex(), n));
    }
}

fn brute_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let mut out = Vec::new();
    for n in 1..=4 {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

#[test]
fn vocabulary_matches_brute_force_count() {
    let text = "play plays played playing naïve naïvely 日本語 日本 a ab abc abcd abcde";
    let tokens = tokenize_whitespace(text);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in &tokens {
        for g in brute_ngrams(t.as_str()) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    for cap in [1, 7, 40, 10_000] {
        let vocab = NGramVocab::build(&tokens, cap).unwrap();
        let want: Vec<(String, u32, u64)> = ranked
            .iter()
            .take(cap)
            .enumerate()
            .map(|(i, (g, c))| (g.clone(), i as u32, *c))
            .collect();
        let got: Vec<(String, u32, u64)> = vocab.iter().map(|(g, i, c)| (g.to_owned(), i, c)).collect();
        assert_eq!(got, want, "cap {cap}");

        for t in &tokens {
            let mut dense = vec![0.0; vocab.dim()];
            for g in brute_ngrams(t.as_str()) {
                if let Some(id) = vocab.id(&g) {
                    dense[id as usize] += 1.0;
                }
            }
            assert_eq!(featurize(t.as_str(), &vocab).to_dense(), dense, "{t}");
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> BitVector {
    BitVector::new((0..n).map(|_| rng.random()).collect())
}

#[test]
fn pool_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (t, k, d): (usize, usize, usize) = (rng.random_range(2..=24), rng.random_range(1..=5), rng.random_range(1..=6));
        let k = k.min(t);
        let m = t.div_ceil(k);
        let b = randn(&mut rng, (1 << k, d));
        let w = randn(&mut rng, (m, d));
        let pool = PoolParams::new(b.clone(), w.clone(), k, t).unwrap();
        let tau = random_bits(&mut rng, t);
        // codewords by reading each chunk as a binary number
        let codes: Vec<usize> = tau
            .to_string()
            .as_bytes()
            .chunks(k)
            .map(|c| usize::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap())
            .collect();
        assert_eq!(split_bits(&tau, k).unwrap(), codes);
        let e = pool.forward(&codes).unwrap();
        for i in 0..d {
            let z: f64 = (0..m).map(|j| w[[j, i]].exp()).sum();
            let want: f64 = (0..m).map(|j| b[[codes[j], i]] * w[[j, i]].exp() / z).sum();
            assert_relative_eq!(e[i], want, max_relative = 1e-12);
        }
    }
}

#[test]
fn add_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (t, d): (usize, usize) = (rng.random_range(1..=40), rng.random_range(1..=6));
        let cb = Array3::from_shape_simple_fn((t, 2, d), || rng.sample(StandardNormal));
        let add = AddParams::with_default_gamma(cb.clone()).unwrap();
        assert_eq!(add.gamma(), (t as f64).sqrt());
        let tau = random_bits(&mut rng, t);
        let e = add.forward(&tau).unwrap();
        for i in 0..d {
            let mut sum = 0.0;
            for j in 0..t {
                sum += cb[[j, tau.get(j) as usize, i]];
            }
            assert_relative_eq!(e[i], sum / (t as f64).sqrt(), max_relative = 1e-12, epsilon = 1e-15);
        }
    }
}

/// Pearson's r from raw sums, a different algebraic route from centering.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

#[test]
fn proj_matches_pearson_from_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (t, d): (usize, usize) = (rng.random_range(3..=40), rng.random_range(1..=6));
        let axes = randn(&mut rng, (d, t));
        let proj = ProjParams::new(axes.clone()).unwrap();
        let mut tau = random_bits(&mut rng, t);
        if tau.bits().iter().all(|&b| b == tau.get(0)) {
            let mut bits = tau.bits().to_vec();
            bits[0] = !bits[0];
            tau = BitVector::new(bits);
        }
        let e = proj.forward(&tau).unwrap();
        for i in 0..d {
            let want = pearson(&tau.to_f64(), axes.row(i).as_slice().unwrap());
            assert_relative_eq!(e[i], want, max_relative = 1e-9, epsilon = 1e-12);
            assert!(e[i].abs() <= 1.0);
        }
    }
    // a constant bit vector has no variance; the correlation is defined as 0
    let proj = ProjParams::new(randn(&mut rng, (2, 4))).unwrap();
    let e = proj.forward(&BitVector::parse("1111").unwrap()).unwrap();
    assert_eq!(e.to_vec(), vec![0.0, 0.0]);
}
