//! Public randomness.
//!
//! The server publishes, for each round, a commitment to the next round's
//! seed; when the round opens the seed itself is revealed. Every random
//! decision is then a pure function of the revealed seed, so anyone can
//! re-derive it but no one could predict it beforehand.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::hash::{hash_parts, sha256, Digest};

/// Deterministic expansion of one round seed. Draw `i` of round `R` is
/// `H(round_seed || R || i)` with `R` and `i` as little-endian `u64`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomBeacon {
    pub round_seed: [u8; 32],
    pub derivation_counter: u64,
}

impl RandomBeacon {
    pub fn new(round_seed: [u8; 32]) -> Self {
        Self {
            round_seed,
            derivation_counter: 0,
        }
    }

    pub fn draw(&self, round: u64, index: u64) -> Digest {
        hash_parts(&[&self.round_seed, &round.to_le_bytes(), &index.to_le_bytes()])
    }

    /// Next draw in sequence; advances the derivation counter.
    pub fn next_draw(&mut self, round: u64) -> Digest {
        let d = self.draw(round, self.derivation_counter);
        self.derivation_counter += 1;
        d
    }

    /// Sub-beacon bound to `label`, independent of siblings with other labels.
    pub fn derive(&self, label: &[u8]) -> RandomBeacon {
        RandomBeacon::new(hash_parts(&[&self.round_seed, label]).0)
    }

    /// Uniform draw in `[0, 1)` from the top 53 bits of the next draw.
    pub fn next_unit(&mut self, round: u64) -> f64 {
        let d = self.next_draw(round);
        let x = u64::from_le_bytes(d.0[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection sampling. `n` must be nonzero.
    pub fn next_below(&mut self, round: u64, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let d = self.next_draw(round);
            for chunk in d.0.chunks_exact(8) {
                let x = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                if x < zone {
                    return x % n;
                }
            }
        }
    }
}

/// Source of per-round seeds held by the coordination server.
#[derive(Clone)]
pub struct BeaconSchedule {
    master: [u8; 32],
}

impl BeaconSchedule {
    pub fn new(master: [u8; 32]) -> Self {
        Self { master }
    }

    pub fn seed_for_round(&self, round: u64) -> [u8; 32] {
        hash_parts(&[b"beacon-seed", &self.master, &round.to_le_bytes()]).0
    }

    pub fn commitment_for_round(&self, round: u64) -> Digest {
        seed_commitment(&self.seed_for_round(round))
    }
}

impl std::fmt::Debug for BeaconSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BeaconSchedule(..)")
    }
}

pub fn seed_commitment(seed: &[u8; 32]) -> Digest {
    sha256(seed)
}

/// Number of items revealed for a given fraction: `ceil(fraction * n)`,
/// at least one when `n > 0`.
pub fn reveal_count(item_count: usize, fraction: f64) -> usize {
    if item_count == 0 {
        return 0;
    }
    let f = fraction.clamp(f64::MIN_POSITIVE, 1.0);
    // The epsilon absorbs products like 0.3 * 10 = 3.0000000000000004.
    let m = (f * item_count as f64 - 1e-9).ceil() as usize;
    m.clamp(1, item_count)
}

/// Selects `ceil(fraction * n)` distinct item indices, fully determined by
/// the beacon seed, the round and the suite id.
pub fn draw_reveal_subset(
    beacon: &RandomBeacon,
    round: u64,
    suite_id: &[u8],
    item_count: usize,
    fraction: f64,
) -> BTreeSet<usize> {
    let m = reveal_count(item_count, fraction);
    let mut sub = beacon.derive(suite_id);
    let mut indices: Vec<usize> = (0..item_count).collect();
    for i in 0..m {
        let j = i + sub.next_below(round, (item_count - i) as u64) as usize;
        indices.swap(i, j);
    }
    indices.truncate(m);
    indices.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beacon() -> RandomBeacon {
        RandomBeacon::new([9; 32])
    }

    #[test]
    fn draw_formula() {
        let b = beacon();
        let mut expect = Vec::new();
        expect.extend_from_slice(&[9u8; 32]);
        expect.extend_from_slice(&5u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        assert_eq!(b.draw(5, 2), sha256(&expect));
    }

    #[test]
    fn replay_yields_identical_sequences() {
        let mut a = beacon();
        let mut b = beacon();
        let xs: Vec<_> = (0..50).map(|_| a.next_draw(3)).collect();
        let ys: Vec<_> = (0..50).map(|_| b.next_draw(3)).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.derivation_counter, 50);
    }

    #[test]
    fn full_reveal() {
        let s = draw_reveal_subset(&beacon(), 1, b"suite", 5, 1.0);
        assert_eq!(s, (0..5).collect());
    }

    #[test]
    fn fifth_of_ten_is_two_and_stable() {
        let a = draw_reveal_subset(&beacon(), 4, b"suite", 10, 0.2);
        let b = draw_reveal_subset(&beacon(), 4, b"suite", 10, 0.2);
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert_eq!(reveal_count(10, 0.3), 3);
        assert_eq!(reveal_count(10, 0.25), 3);
        assert_eq!(reveal_count(3, 0.01), 1);
    }

    #[test]
    fn schedule_commitments_open() {
        let s = BeaconSchedule::new([1; 32]);
        assert_eq!(s.commitment_for_round(3), seed_commitment(&s.seed_for_round(3)));
        assert_ne!(s.seed_for_round(3), s.seed_for_round(4));
    }

    /// Chi-squared goodness of fit on index frequencies: 10,000 reveals of
    /// 2 of 10 items, spread over distinct suite ids. Under uniformity each
    /// index is expected 2,000 times; 9 degrees of freedom, the 0.999
    /// quantile is 27.877.
    #[test]
    fn reveal_indices_are_uniform_across_suites() {
        let b = beacon();
        let mut counts = [0u64; 10];
        let trials = 10_000u64;
        for t in 0..trials {
            let id = sha256(&t.to_le_bytes());
            for i in draw_reveal_subset(&b, 7, &id.0, 10, 0.2) {
                counts[i] += 1;
            }
        }
        let expected = (trials * 2) as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts = {counts:?}");

        // Pairwise independence between two suite ids on the same round:
        // overlap of 2-of-10 subsets has mean 0.4 under independence.
        let mut overlap = 0usize;
        for r in 0..trials {
            let a = draw_reveal_subset(&b, r, b"suite-a", 10, 0.2);
            let c = draw_reveal_subset(&b, r, b"suite-b", 10, 0.2);
            overlap += a.intersection(&c).count();
        }
        let mean = overlap as f64 / trials as f64;
        // sd of the per-trial overlap is about 0.57; 5 sigma of the mean.
        assert!((mean - 0.4).abs() < 5.0 * 0.57 / (trials as f64).sqrt(), "mean overlap {mean}");
    }
}
