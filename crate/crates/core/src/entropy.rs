//! Lempel-Ziv entropy-rate estimation for symbol sequences.
//!
//! For each position `i` (1-indexed), `Λ_i` is the length of the shortest
//! substring starting at `i` that does not occur as a contiguous substring
//! anywhere within positions `1..i-1`. When every substring starting at `i`
//! up to the end of the sequence has occurred before, the match-to-end
//! convention sets `Λ_i = (n - i + 1) + 1`. Both cases collapse to
//! `Λ_i = L_i + 1`, where `L_i` is the longest prefix of the suffix at `i`
//! occurring inside the preceding prefix (sets of occurring lengths are
//! downward closed).
//!
//! The entropy rate is estimated in bits per symbol:
//!
//! ```text
//! S = (n / Σ Λ_i) · log2(n)
//! ```
//!
//! `Λ` is computed by walking a suffix automaton that is grown incrementally
//! over the prefix, so total work is `O(Σ Λ_i)` transitions — subquadratic
//! for any sequence with positive entropy rate. The quadratic scan over all
//! prefixes exists only as a test oracle.

use thiserror::Error;

use crate::events::SymbolSequence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EntropyError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("entropy estimation needs at least 2 symbols, got {0}")]
    TooShort(usize),
}

/// The per-position shortest-unseen-substring lengths `Λ_1..Λ_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaProfile {
    lambdas: Vec<u32>,
}

impl LambdaProfile {
    pub fn lambdas(&self) -> &[u32] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn sum(&self) -> u64 {
        self.lambdas.iter().map(|&l| l as u64).sum()
    }
}

/// An entropy-rate estimate together with the quantities downstream solving needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Estimated entropy rate in bits per symbol.
    pub bits_per_symbol: f64,
    /// Sequence length n.
    pub length: usize,
    /// Distinct symbols M in the sequence.
    pub vocab_size: usize,
}

/// Computes the `Λ` profile of a sequence.
pub fn lz_lambdas(seq: &SymbolSequence) -> Result<LambdaProfile, EntropyError> {
    let symbols = seq.symbols();
    let n = symbols.len();
    if n == 0 {
        return Err(EntropyError::EmptySequence);
    }
    let mut automaton = automaton::SuffixAutomaton::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n);
    for i in 0..n {
        let matched = automaton.match_len(&symbols[i..]);
        lambdas.push(matched as u32 + 1);
        automaton.push(symbols[i]);
    }
    Ok(LambdaProfile { lambdas })
}

/// Estimates the entropy rate `S = (n / Σ Λ_i) · log2(n)` in bits per symbol.
pub fn lz_entropy_rate(seq: &SymbolSequence) -> Result<EntropyEstimate, EntropyError> {
    let n = seq.len();
    if n < 2 {
        return Err(if n == 0 {
            EntropyError::EmptySequence
        } else {
            EntropyError::TooShort(n)
        });
    }
    let profile = lz_lambdas(seq)?;
    let bits = (n as f64 / profile.sum() as f64) * (n as f64).log2();
    Ok(EntropyEstimate {
        bits_per_symbol: bits,
        length: n,
        vocab_size: seq.vocab_size(),
    })
}

mod automaton {
    //! Suffix automaton over `u32` symbols, grown one symbol at a time.
    //!
    //! The transition table per node starts as a small unsorted vector and
    //! escalates to a hash map once a node grows many outgoing edges (the
    //! root does, for large alphabets).

    use std::collections::HashMap;
    use std::hash::{BuildHasherDefault, Hasher};

    const NONE: u32 = u32::MAX;
    const ROOT: u32 = 0;
    const SPILL_THRESHOLD: usize = 16;

    /// Multiply-xor hasher for `u32` keys; quality is plenty for symbol codes.
    #[derive(Default)]
    pub struct MixHasher(u64);

    impl Hasher for MixHasher {
        fn write(&mut self, bytes: &[u8]) {
            for &b in bytes {
                self.write_u64(b as u64);
            }
        }

        fn write_u32(&mut self, n: u32) {
            self.write_u64(n as u64);
        }

        fn write_u64(&mut self, n: u64) {
            let mut x = self.0 ^ n;
            x = x.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            x ^= x >> 29;
            self.0 = x;
        }

        fn finish(&self) -> u64 {
            self.0
        }
    }

    type FastMap = HashMap<u32, u32, BuildHasherDefault<MixHasher>>;

    #[derive(Clone)]
    enum TransMap {
        Small(Vec<(u32, u32)>),
        Large(FastMap),
    }

    impl TransMap {
        fn new() -> TransMap {
            TransMap::Small(Vec::new())
        }

        #[inline]
        fn get(&self, sym: u32) -> Option<u32> {
            match self {
                TransMap::Small(entries) => {
                    entries.iter().find_map(|&(s, to)| (s == sym).then_some(to))
                }
                TransMap::Large(map) => map.get(&sym).copied(),
            }
        }

        fn set(&mut self, sym: u32, to: u32) {
            match self {
                TransMap::Small(entries) => {
                    if let Some(slot) = entries.iter_mut().find(|(s, _)| *s == sym) {
                        slot.1 = to;
                        return;
                    }
                    if entries.len() < SPILL_THRESHOLD {
                        entries.push((sym, to));
                        return;
                    }
                    let mut map = FastMap::default();
                    map.extend(entries.iter().copied());
                    map.insert(sym, to);
                    *self = TransMap::Large(map);
                }
                TransMap::Large(map) => {
                    map.insert(sym, to);
                }
            }
        }
    }

    pub struct SuffixAutomaton {
        len: Vec<u32>,
        link: Vec<u32>,
        trans: Vec<TransMap>,
        last: u32,
    }

    impl SuffixAutomaton {
        pub fn with_capacity(n: usize) -> SuffixAutomaton {
            let cap = 2 * n + 2;
            let mut sa = SuffixAutomaton {
                len: Vec::with_capacity(cap),
                link: Vec::with_capacity(cap),
                trans: Vec::with_capacity(cap),
                last: ROOT,
            };
            sa.new_node(0, NONE);
            sa
        }

        fn new_node(&mut self, len: u32, link: u32) -> u32 {
            let id = self.len.len() as u32;
            self.len.push(len);
            self.link.push(link);
            self.trans.push(TransMap::new());
            id
        }

        /// Longest prefix of `tail` that occurs as a substring of the text
        /// pushed so far.
        pub fn match_len(&self, tail: &[u32]) -> usize {
            let mut state = ROOT;
            let mut matched = 0;
            for &sym in tail {
                match self.trans[state as usize].get(sym) {
                    Some(next) => {
                        state = next;
                        matched += 1;
                    }
                    None => break,
                }
            }
            matched
        }

        pub fn push(&mut self, sym: u32) {
            let cur = self.new_node(self.len[self.last as usize] + 1, NONE);
            let mut p = self.last;
            self.last = cur;

            while p != NONE && self.trans[p as usize].get(sym).is_none() {
                self.trans[p as usize].set(sym, cur);
                p = self.link[p as usize];
            }
            if p == NONE {
                self.link[cur as usize] = ROOT;
                return;
            }
            let q = self.trans[p as usize].get(sym).expect("checked above");
            if self.len[p as usize] + 1 == self.len[q as usize] {
                self.link[cur as usize] = q;
                return;
            }
            let clone = self.new_node(self.len[p as usize] + 1, self.link[q as usize]);
            self.trans[clone as usize] = self.trans[q as usize].clone();
            self.link[q as usize] = clone;
            self.link[cur as usize] = clone;
            while p != NONE && self.trans[p as usize].get(sym) == Some(q) {
                self.trans[p as usize].set(sym, clone);
                p = self.link[p as usize];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SymbolSequence;
    use proptest::prelude::*;

    /// Quadratic reference implementation, straight from the definition.
    fn brute_force_lambdas(s: &[u32]) -> Vec<u32> {
        let n = s.len();
        (0..n)
            .map(|i| {
                let prefix = &s[..i];
                for k in 1..=(n - i) {
                    let target = &s[i..i + k];
                    if !prefix.windows(k).any(|w| w == target) {
                        return k as u32;
                    }
                }
                // every substring up to the end occurred before
                (n - i + 1) as u32
            })
            .collect()
    }

    fn seq(symbols: &[u32]) -> SymbolSequence {
        SymbolSequence::new(symbols.to_vec())
    }

    #[test]
    fn lambda_profile_of_constant_run() {
        let s = [0u32, 0, 0, 0];
        let expected = brute_force_lambdas(&s);
        assert_eq!(expected, vec![1, 2, 3, 2]);
        let profile = lz_lambdas(&seq(&s)).unwrap();
        assert_eq!(profile.lambdas(), expected.as_slice());
    }

    #[test]
    fn lambda_profile_of_all_distinct() {
        let s = [0u32, 1, 2, 3];
        let profile = lz_lambdas(&seq(&s)).unwrap();
        assert_eq!(profile.lambdas(), &[1, 1, 1, 1]);
        assert_eq!(brute_force_lambdas(&s), vec![1, 1, 1, 1]);
    }

    #[test]
    fn lambda_profile_of_alternating_run() {
        let s = [0u32, 1, 0, 1, 0];
        let expected = brute_force_lambdas(&s);
        assert_eq!(expected, vec![1, 1, 3, 3, 2]);
        let profile = lz_lambdas(&seq(&s)).unwrap();
        assert_eq!(profile.lambdas(), expected.as_slice());
    }

    #[test]
    fn lambda_bounds_hold() {
        let s = [3u32, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3];
        let profile = lz_lambdas(&seq(&s)).unwrap();
        let n = s.len();
        assert_eq!(profile.lambdas()[0], 1);
        for (i, &l) in profile.lambdas().iter().enumerate() {
            assert!(l >= 1);
            assert!(l as usize <= n - i + 1, "lambda {l} at {i} exceeds n-i+2");
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert_eq!(
            lz_lambdas(&seq(&[])).unwrap_err(),
            EntropyError::EmptySequence
        );
        assert_eq!(
            lz_entropy_rate(&seq(&[7])).unwrap_err(),
            EntropyError::TooShort(1)
        );
    }

    /// Closed form for the all-equal sequence: Λ_i = min(i-1, n-i+1) + 1.
    fn constant_lambda_sum(n: u64) -> u64 {
        (1..=n).map(|i| (i - 1).min(n - i + 1) + 1).sum()
    }

    #[test]
    fn constant_sequence_has_near_zero_entropy() {
        // validate the closed form against the brute force at small n,
        // then use it at n = 1024 where the brute force is impractical
        for n in [8usize, 64, 129] {
            let s = vec![5u32; n];
            let profile = lz_lambdas(&seq(&s)).unwrap();
            assert_eq!(profile.lambdas(), brute_force_lambdas(&s).as_slice());
            assert_eq!(profile.sum(), constant_lambda_sum(n as u64));
        }

        let s = vec![5u32; 1024];
        let profile = lz_lambdas(&seq(&s)).unwrap();
        assert_eq!(profile.sum(), constant_lambda_sum(1024));
        assert_eq!(profile.sum(), 263_168);
        let est = lz_entropy_rate(&seq(&s)).unwrap();
        let expected = 1024.0 / 263_168.0 * (1024.0f64).log2();
        assert!((est.bits_per_symbol - expected).abs() < 1e-12);
        assert!(est.bits_per_symbol < 0.05);
    }

    #[test]
    fn periodic_sequence_stays_below_fair_coin() {
        let s: Vec<u32> = (0..4096).map(|i| (i % 2) as u32).collect();
        let est = lz_entropy_rate(&seq(&s)).unwrap();
        assert!(est.bits_per_symbol < 1.0, "got {}", est.bits_per_symbol);
        assert!(est.bits_per_symbol >= 0.0);
    }

    #[test]
    fn extreme_symbol_codes_are_handled() {
        let s = [u32::MAX, 0, u32::MAX, u32::MAX - 1, 0, u32::MAX, 0, 7];
        let profile = lz_lambdas(&seq(&s)).unwrap();
        assert_eq!(profile.lambdas(), brute_force_lambdas(&s).as_slice());
    }

    #[test]
    fn automaton_matches_brute_force_on_larger_mixed_inputs() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;

        // heavier than the proptest cases: longer sequences, wider alphabet,
        // and runs of repeats that stress the clone path
        for seed in 0..3u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut s: Vec<u32> = Vec::new();
            while s.len() < 1500 {
                if rng.random::<f64>() < 0.3 {
                    let sym = rng.random_range(0..40u32);
                    let run = rng.random_range(1..12usize);
                    s.extend(std::iter::repeat_n(sym, run));
                } else {
                    s.push(rng.random_range(0..40u32));
                }
            }
            s.truncate(1500);
            let profile = lz_lambdas(&seq(&s)).unwrap();
            assert_eq!(profile.lambdas(), brute_force_lambdas(&s).as_slice());
        }
    }

    #[test]
    fn iid_uniform_estimate_near_three_bits() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;

        // M = 8 symbols, n = 2^15: the estimate should sit within 10% of
        // log2(8) = 3 bits. Checked across 20 seeds.
        for seed in 0..20u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let symbols: Vec<u32> = (0..1 << 15).map(|_| rng.random_range(0..8u32)).collect();
            let est = lz_entropy_rate(&seq(&symbols)).unwrap();
            let rel = (est.bits_per_symbol - 3.0).abs() / 3.0;
            assert!(
                rel < 0.10,
                "seed {seed}: estimate {} deviates {:.3} from 3 bits",
                est.bits_per_symbol,
                rel
            );
        }
    }

    #[test]
    fn iid_estimate_bounded_by_log_vocab() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;

        for (m, seed) in [(4u32, 1u64), (16, 2), (64, 3)] {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let symbols: Vec<u32> = (0..1 << 12).map(|_| rng.random_range(0..m)).collect();
            let est = lz_entropy_rate(&seq(&symbols)).unwrap();
            assert!(
                est.bits_per_symbol <= (m as f64).log2() + 0.5,
                "M={m}: {} exceeds log2(M)+0.5",
                est.bits_per_symbol
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn automaton_matches_brute_force(s in proptest::collection::vec(0u32..6, 1..160)) {
            let profile = lz_lambdas(&seq(&s)).unwrap();
            let expected = brute_force_lambdas(&s);
            prop_assert_eq!(profile.lambdas(), expected.as_slice());
        }

        #[test]
        fn relabeling_preserves_estimate(s in proptest::collection::vec(0u32..8, 2..200)) {
            // bijective recoding: x -> 7 - x over the 0..8 alphabet
            let relabeled: Vec<u32> = s.iter().map(|&x| 7 - x).collect();
            let a = lz_entropy_rate(&seq(&s)).unwrap();
            let b = lz_entropy_rate(&seq(&relabeled)).unwrap();
            prop_assert!((a.bits_per_symbol - b.bits_per_symbol).abs() < 1e-12);
        }

        #[test]
        fn fresh_symbol_appends_exactly_one(s in proptest::collection::vec(0u32..6, 1..120)) {
            let base = lz_lambdas(&seq(&s)).unwrap().sum();
            let mut extended = s.clone();
            extended.push(999); // never seen before
            let grown = lz_lambdas(&seq(&extended)).unwrap().sum();
            // match-to-end positions keep their value, the new position adds Λ = 1
            prop_assert_eq!(grown, base + 1);
        }
    }
}
