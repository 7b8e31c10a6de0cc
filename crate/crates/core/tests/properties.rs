use authentree::crypto::{det_rng, flip_bits, hamming_distance, sha256, Sha256};
use authentree::sharing::{aggregate_digest, reconstruct, split, SharingError, SharingPolicy};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use sha2::Digest;

proptest! {
    #[test]
    fn sha256_agrees_with_reference(data in proptest::collection::vec(any::<u8>(), 0..300)) {
        let expected: [u8; 32] = sha2::Sha256::digest(&data).into();
        prop_assert_eq!(*sha256(&data).as_bytes(), expected);
    }

    #[test]
    fn incremental_hashing_matches_one_shot(
        data in proptest::collection::vec(any::<u8>(), 0..400),
        cut in any::<prop::sample::Index>(),
    ) {
        let at = cut.index(data.len() + 1);
        let mut h = Sha256::new();
        h.update(&data[..at]);
        h.update(&data[at..]);
        prop_assert_eq!(h.finalize(), *sha256(&data).as_bytes());
    }

    #[test]
    fn flipping_twice_restores(
        data in proptest::collection::vec(any::<u8>(), 1..64),
        picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..8),
    ) {
        let len = data.len() * 8;
        let mut positions: Vec<usize> = picks.iter().map(|i| i.index(len)).collect();
        positions.sort_unstable();
        positions.dedup();
        let once = flip_bits(&data, &positions).unwrap();
        let ones: u32 = once.iter().zip(&data).map(|(a, b)| (a ^ b).count_ones()).sum();
        prop_assert_eq!(ones as usize, positions.len());
        prop_assert_eq!(flip_bits(&once, &positions).unwrap(), data);
    }

    #[test]
    fn any_threshold_subset_reconstructs(
        secret in proptest::collection::vec(any::<u8>(), 1..48),
        n in 2usize..12,
        t_pick in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let t = 2 + t_pick.index(n - 1);
        let policy = SharingPolicy::new(t, n).unwrap();
        let mut rng = det_rng(seed);
        let mut shares = split(&secret, policy, &mut rng).unwrap();
        shares.shuffle(&mut rng);
        prop_assert_eq!(reconstruct(&shares[..t], policy).unwrap(), secret.clone());
        prop_assert_eq!(reconstruct(&shares, policy).unwrap(), secret);
        let short = reconstruct(&shares[..t - 1], policy);
        prop_assert!(
            matches!(short, Err(SharingError::InsufficientShares { .. })),
            "expected insufficient shares, got {:?}",
            short
        );
    }

    #[test]
    fn tampered_payload_is_caught(
        secret in proptest::collection::vec(any::<u8>(), 1..32),
        seed in any::<u64>(),
        bit in any::<prop::sample::Index>(),
    ) {
        let policy = SharingPolicy::new(3, 5).unwrap();
        let mut shares = split(&secret, policy, &mut det_rng(seed)).unwrap();
        let b = bit.index(secret.len() * 8);
        shares[1].payload[b / 8] ^= 0x80 >> (b % 8);
        prop_assert_eq!(reconstruct(&shares, policy), Err(SharingError::CorruptedShare(2)));
    }
}

#[test]
fn avalanche_spread_is_binomial() {
    // single-bit input changes should give ~Binomial(256, 1/2): mean 128, std 8
    let mut rng = det_rng(0x5eed);
    let mut hds = Vec::new();
    for _ in 0..2000 {
        let mut data = [0u8; 64];
        rand::RngCore::fill_bytes(&mut rng, &mut data);
        let bit = (rand::Rng::gen_range(&mut rng, 0..512)) as usize;
        let flipped = flip_bits(&data, &[bit]).unwrap();
        hds.push(hamming_distance(&sha256(&data), &sha256(&flipped)) as f64);
    }
    let mean = hds.iter().sum::<f64>() / hds.len() as f64;
    let var = hds.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (hds.len() - 1) as f64;
    assert!((mean - 128.0).abs() < 1.0, "mean {mean}");
    assert!((5.0..=11.0).contains(&var.sqrt()), "std {}", var.sqrt());
}

#[test]
fn withheld_shares_change_the_aggregate() {
    let policy = SharingPolicy::new(3, 4).unwrap();
    let shares = split(b"aggregate", policy, &mut det_rng(8)).unwrap();
    let full = aggregate_digest(&shares, 4, &[]);
    let missing: Vec<_> = shares.iter().filter(|s| s.index != 2).cloned().collect();
    assert_eq!(
        aggregate_digest(&missing, 4, &[]),
        aggregate_digest(&shares, 4, &[2])
    );
    assert_ne!(full, aggregate_digest(&shares, 4, &[2]));
}
