//! Sequence generators with known ground-truth predictability.
//!
//! Two Markov constructions produce sequences whose best achievable Top-k
//! accuracy is known, so estimator bias can be measured:
//!
//! * **first order** — six slots (five named states plus a remainder slot
//!   aggregating the other `M - 5` states) arranged in a circulant: from the
//!   current slot, slot-offset `k` is taken with probability `c_{k+1} p` for
//!   `k = 0..4`, and the leftover mass `1 - Σ c_i p` goes to the slot that
//!   completes the cycle. Entering the remainder slot draws a concrete state
//!   uniformly from its members.
//! * **second order** — the next state index is `wrap(i + j + x)` where `i`
//!   and `j` index the previous two states and `x` is chosen with
//!   probability `c_{x+1} p`; with the leftover mass the next state is
//!   uniform over all `M`. Its Top-1 truth is the closed form
//!   `c_1 p + (1 - Σ c_i p) / M`.
//!
//! Ground truth for the first-order chain is computed from the stationary
//! distribution of the 6x6 slot matrix rather than assumed to be `c_1 p`:
//! the remainder slot spreads its head mass over `M - 5` states, so the best
//! prediction differs by current slot. An omniscient-predictor Monte Carlo
//! oracle is provided to verify either ground truth empirically.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::events::SymbolSequence;

/// Name of the PRNG algorithm behind [`generate`], recorded in output
/// metadata so sequences stay reproducible across releases.
pub const RNG_ALGORITHM: &str = "chacha12";

/// Maximum number of coupled head ranks a generator supports.
pub const MAX_HEAD_RANKS: usize = 5;

const SLOTS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("state count must exceed {MAX_HEAD_RANKS}, got {0}")]
    TooFewStates(usize),
    #[error("sequence length must be at least 1")]
    EmptyLength,
    #[error("need between 1 and {MAX_HEAD_RANKS} coupling ratios, got {0}")]
    BadRatioCount(usize),
    #[error("first coupling ratio must be exactly 1, got {0}")]
    FirstRatioNotOne(f64),
    #[error("coupling ratio #{index} = {value} outside (0, 1]")]
    RatioOutOfRange { index: usize, value: f64 },
    #[error("coupling ratios must be non-increasing (violated at #{index})")]
    RatiosNotMonotone { index: usize },
    #[error("base probability {0} must lie in [0, 1)")]
    BadBaseProbability(f64),
    #[error("head mass sum(c_i * p) = {0} must stay below 1")]
    HeadMassTooLarge(f64),
    #[error("oracle horizon {top_n} outside 1..={candidates}")]
    BadHorizon { top_n: usize, candidates: usize },
    #[error("oracle needs at least 1000 steps, got {0}")]
    TooFewSteps(usize),
    #[error("spec describes a {actual} chain, expected {expected}")]
    MethodMismatch {
        expected: &'static str,
        actual: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMethod {
    FirstOrder,
    SecondOrder,
}

impl GeneratorMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorMethod::FirstOrder => "first-order",
            GeneratorMethod::SecondOrder => "second-order",
        }
    }
}

/// Where the first-order remainder slot sends its self-transition mass.
///
/// The circulant places `c_1 p` on the remainder-to-remainder transition;
/// whether that mass stays on the same concrete state or spreads uniformly
/// over the slot's members is underdetermined, so both are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemainderSelfTransition {
    #[default]
    UniformMember,
    SameState,
}

/// Full description of one generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub method: GeneratorMethod,
    /// State count M (> 5).
    pub states: usize,
    /// Base transition probability p.
    pub base_prob: f64,
    /// Coupling ratios `c_1..c_k`, `k <= 5`.
    pub c: Vec<f64>,
    pub length: usize,
    pub seed: u64,
    pub remainder_self: RemainderSelfTransition,
}

impl GeneratorSpec {
    pub fn new(
        method: GeneratorMethod,
        states: usize,
        base_prob: f64,
        c: Vec<f64>,
        length: usize,
        seed: u64,
    ) -> Result<GeneratorSpec, SynthError> {
        let spec = GeneratorSpec {
            method,
            states,
            base_prob,
            c,
            length,
            seed,
            remainder_self: RemainderSelfTransition::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with ratios synthesized as `c_i = i^-xi` over five ranks.
    pub fn with_zipf_ratios(
        method: GeneratorMethod,
        states: usize,
        base_prob: f64,
        xi: f64,
        length: usize,
        seed: u64,
    ) -> Result<GeneratorSpec, SynthError> {
        let c = (1..=MAX_HEAD_RANKS).map(|i| (i as f64).powf(-xi)).collect();
        GeneratorSpec::new(method, states, base_prob, c, length, seed)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.states <= MAX_HEAD_RANKS {
            return Err(SynthError::TooFewStates(self.states));
        }
        if self.length == 0 {
            return Err(SynthError::EmptyLength);
        }
        if self.c.is_empty() || self.c.len() > MAX_HEAD_RANKS {
            return Err(SynthError::BadRatioCount(self.c.len()));
        }
        if self.c[0] != 1.0 {
            return Err(SynthError::FirstRatioNotOne(self.c[0]));
        }
        for (i, &c) in self.c.iter().enumerate() {
            if !(c > 0.0 && c <= 1.0) || !c.is_finite() {
                return Err(SynthError::RatioOutOfRange { index: i, value: c });
            }
            if i > 0 && c > self.c[i - 1] {
                return Err(SynthError::RatiosNotMonotone { index: i });
            }
        }
        if !(0.0..1.0).contains(&self.base_prob) {
            return Err(SynthError::BadBaseProbability(self.base_prob));
        }
        let head = self.head_mass();
        if head >= 1.0 {
            return Err(SynthError::HeadMassTooLarge(head));
        }
        Ok(())
    }

    /// `Σ c_i p` — total probability routed through the coupled head.
    pub fn head_mass(&self) -> f64 {
        self.c.iter().map(|&c| c * self.base_prob).sum()
    }

    /// Head masses `c_{k+1} p` padded to the five circulant offsets.
    fn padded_head(&self) -> [f64; MAX_HEAD_RANKS] {
        let mut head = [0.0; MAX_HEAD_RANKS];
        for (slot, &c) in head.iter_mut().zip(&self.c) {
            *slot = c * self.base_prob;
        }
        head
    }
}

/// True per-rank and cumulative Top-k predictability of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `top_pi[k-1]` is the probability that the k-th best prediction hits.
    pub top_pi: Vec<f64>,
    /// Prefix sums of `top_pi`: true Top-1..Top-k accuracy ceilings.
    pub cumulative: Vec<f64>,
    pub source: TruthSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthSource {
    /// Closed form (second-order chain).
    Analytic,
    /// Stationary distribution of the slot matrix (first-order chain).
    StationaryOracle,
}

/// Empirical accuracy of the omniscient predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAccuracy {
    pub accuracy: f64,
    /// Binomial standard error `sqrt(acc (1-acc) / steps)`.
    pub std_error: f64,
    pub hits: u64,
    pub steps: u64,
}

/// Generates a sequence according to the spec; identical specs produce
/// identical sequences.
pub fn generate(spec: &GeneratorSpec) -> Result<SymbolSequence, SynthError> {
    spec.validate()?;
    let symbols = match spec.method {
        GeneratorMethod::FirstOrder => {
            let mut chain = FirstOrderChain::start(spec);
            let mut out = Vec::with_capacity(spec.length);
            out.push(chain.state);
            while out.len() < spec.length {
                out.push(chain.step());
            }
            out
        }
        GeneratorMethod::SecondOrder => {
            let mut chain = SecondOrderChain::start(spec);
            let mut out = Vec::with_capacity(spec.length);
            out.push(chain.prev);
            if spec.length > 1 {
                out.push(chain.cur);
            }
            while out.len() < spec.length {
                out.push(chain.step());
            }
            out
        }
    };
    Ok(SymbolSequence::new(symbols))
}

/// First-order generation; the spec's method must agree.
pub fn generate_first_order(spec: &GeneratorSpec) -> Result<SymbolSequence, SynthError> {
    expect_method(spec, GeneratorMethod::FirstOrder)?;
    generate(spec)
}

/// Second-order generation; the spec's method must agree.
pub fn generate_second_order(spec: &GeneratorSpec) -> Result<SymbolSequence, SynthError> {
    expect_method(spec, GeneratorMethod::SecondOrder)?;
    generate(spec)
}

fn expect_method(spec: &GeneratorSpec, expected: GeneratorMethod) -> Result<(), SynthError> {
    if spec.method != expected {
        return Err(SynthError::MethodMismatch {
            expected: expected.name(),
            actual: spec.method.name(),
        });
    }
    Ok(())
}

/// The per-rank M → ∞ limits `c_k p` of the second-order ground truth,
/// where the uniform tail share vanishes.
pub fn coupled_top_pi(spec: &GeneratorSpec) -> Vec<f64> {
    spec.c.iter().map(|&c| c * spec.base_prob).collect()
}

/// Computes the generator's true Top-k predictability.
pub fn true_predictability(spec: &GeneratorSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let (top_pi, source) = match spec.method {
        GeneratorMethod::SecondOrder => {
            let tail = (1.0 - spec.head_mass()) / spec.states as f64;
            let pi: Vec<f64> = spec.c.iter().map(|&c| c * spec.base_prob + tail).collect();
            (pi, TruthSource::Analytic)
        }
        GeneratorMethod::FirstOrder => {
            let matrix = slot_matrix(spec);
            let occupancy = stationary_distribution(&matrix);
            let ranks = spec.c.len();
            let mut pi = vec![0.0; ranks];
            for (slot, &weight) in occupancy.iter().enumerate() {
                let values = slot_top_values(spec, slot, ranks);
                for (k, &v) in values.iter().enumerate() {
                    pi[k] += weight * v;
                }
            }
            (pi, TruthSource::StationaryOracle)
        }
    };
    let mut cumulative = Vec::with_capacity(top_pi.len());
    let mut acc = 0.0;
    for &p in &top_pi {
        acc += p;
        cumulative.push(acc);
    }
    Ok(GroundTruth {
        top_pi,
        cumulative,
        source,
    })
}

/// Runs the generator while an omniscient predictor (knowing the spec and
/// the full current state) emits its `top_n` most probable next states;
/// returns the hit fraction with a binomial standard error.
pub fn oracle_accuracy(
    spec: &GeneratorSpec,
    top_n: usize,
    steps: usize,
) -> Result<OracleAccuracy, SynthError> {
    spec.validate()?;
    if top_n < 1 || top_n > spec.states {
        return Err(SynthError::BadHorizon {
            top_n,
            candidates: spec.states,
        });
    }
    if steps < 1000 {
        return Err(SynthError::TooFewSteps(steps));
    }

    let mut hits = 0u64;
    match spec.method {
        GeneratorMethod::FirstOrder => {
            let mut chain = FirstOrderChain::start(spec);
            for _ in 0..steps {
                let hit = if top_n >= spec.states {
                    chain.step();
                    true
                } else {
                    let predicted = chain.top_candidates(top_n);
                    let next = chain.step();
                    predicted.contains(&next)
                };
                hits += hit as u64;
            }
        }
        GeneratorMethod::SecondOrder => {
            let mut chain = SecondOrderChain::start(spec);
            for _ in 0..steps {
                let hit = if top_n >= spec.states {
                    chain.step();
                    true
                } else {
                    let predicted = chain.top_candidates(top_n);
                    let next = chain.step();
                    predicted.contains(&next)
                };
                hits += hit as u64;
            }
        }
    }

    let accuracy = hits as f64 / steps as f64;
    let std_error = (accuracy * (1.0 - accuracy) / steps as f64).sqrt();
    Ok(OracleAccuracy {
        accuracy,
        std_error,
        hits,
        steps: steps as u64,
    })
}

/// 6x6 slot transition matrix of the first-order construction.
fn slot_matrix(spec: &GeneratorSpec) -> [[f64; SLOTS]; SLOTS] {
    let head = spec.padded_head();
    let remainder = 1.0 - spec.head_mass();
    let mut matrix = [[0.0; SLOTS]; SLOTS];
    for (slot, row) in matrix.iter_mut().enumerate() {
        for (offset, &mass) in head.iter().enumerate() {
            row[(slot + offset) % SLOTS] += mass;
        }
        row[(slot + MAX_HEAD_RANKS) % SLOTS] += remainder;
    }
    matrix
}

/// Stationary distribution by power iteration. The circulant rows make the
/// matrix doubly stochastic, so this converges to uniform; iterating keeps
/// the computation honest rather than assumed.
fn stationary_distribution(matrix: &[[f64; SLOTS]; SLOTS]) -> [f64; SLOTS] {
    let mut pi = [1.0 / SLOTS as f64; SLOTS];
    for _ in 0..10_000 {
        let mut next = [0.0; SLOTS];
        for (from, row) in matrix.iter().enumerate() {
            for (to, &mass) in row.iter().enumerate() {
                next[to] += pi[from] * mass;
            }
        }
        let total: f64 = next.iter().sum();
        for x in &mut next {
            *x /= total;
        }
        let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

/// The `ranks` largest per-state transition probabilities out of a slot.
fn slot_top_values(spec: &GeneratorSpec, slot: usize, ranks: usize) -> Vec<f64> {
    let head = spec.padded_head();
    let remainder = 1.0 - spec.head_mass();
    let members = (spec.states - MAX_HEAD_RANKS) as f64;

    let mut values: Vec<f64> = Vec::with_capacity(SLOTS + ranks);
    let mut push_mass = |offset: usize, mass: f64| {
        if mass <= 0.0 {
            return;
        }
        let target = (slot + offset) % SLOTS;
        if target < MAX_HEAD_RANKS {
            values.push(mass);
        } else if spec.remainder_self == RemainderSelfTransition::SameState
            && slot == MAX_HEAD_RANKS
            && offset == 0
        {
            // the remainder self-mass stays on one concrete state
            values.push(mass);
        } else {
            let share = mass / members;
            let copies = (spec.states - MAX_HEAD_RANKS).min(ranks);
            values.extend(std::iter::repeat_n(share, copies));
        }
    };
    for (offset, &mass) in head.iter().enumerate() {
        push_mass(offset, mass);
    }
    push_mass(MAX_HEAD_RANKS, remainder);

    values.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite probabilities"));
    values.resize(ranks, 0.0);
    values
}

struct FirstOrderChain<'a> {
    spec: &'a GeneratorSpec,
    head: [f64; MAX_HEAD_RANKS],
    remainder: f64,
    rng: ChaCha12Rng,
    state: u32,
}

impl<'a> FirstOrderChain<'a> {
    fn start(spec: &'a GeneratorSpec) -> FirstOrderChain<'a> {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let state = rng.random_range(0..spec.states as u32);
        FirstOrderChain {
            spec,
            head: spec.padded_head(),
            remainder: 1.0 - spec.head_mass(),
            rng,
            state,
        }
    }

    fn slot(&self) -> usize {
        (self.state as usize).min(MAX_HEAD_RANKS)
    }

    fn step(&mut self) -> u32 {
        let slot = self.slot();
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut offset = MAX_HEAD_RANKS;
        for (k, &mass) in self.head.iter().enumerate() {
            acc += mass;
            if u < acc {
                offset = k;
                break;
            }
        }
        let target = (slot + offset) % SLOTS;
        self.state = if target < MAX_HEAD_RANKS {
            target as u32
        } else if self.spec.remainder_self == RemainderSelfTransition::SameState
            && slot == MAX_HEAD_RANKS
            && offset == 0
        {
            self.state
        } else {
            let members = (self.spec.states - MAX_HEAD_RANKS) as u32;
            MAX_HEAD_RANKS as u32 + self.rng.random_range(0..members)
        };
        self.state
    }

    /// Predicted next states, most probable first; ties break by state index.
    fn top_candidates(&self, top_n: usize) -> Vec<u32> {
        let slot = self.slot();
        let members = self.spec.states - MAX_HEAD_RANKS;
        // (probability, state); remainder-slot members enumerated lazily below
        let mut singletons: Vec<(f64, u32)> = Vec::with_capacity(SLOTS);
        let mut spread_share = 0.0;

        let mut route = |offset: usize, mass: f64| {
            if mass <= 0.0 {
                return;
            }
            let target = (slot + offset) % SLOTS;
            if target < MAX_HEAD_RANKS {
                singletons.push((mass, target as u32));
            } else if self.spec.remainder_self == RemainderSelfTransition::SameState
                && slot == MAX_HEAD_RANKS
                && offset == 0
            {
                singletons.push((mass, self.state));
            } else {
                spread_share = mass / members as f64;
            }
        };
        for (offset, &mass) in self.head.iter().enumerate() {
            route(offset, mass);
        }
        route(MAX_HEAD_RANKS, self.remainder);

        // slot targets and remainder members never collide, so no dedup needed
        let mut candidates = singletons;
        if spread_share > 0.0 {
            let needed = members.min(top_n);
            candidates.extend((0..needed).map(|i| (spread_share, (MAX_HEAD_RANKS + i) as u32)));
        }
        candidates.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite probabilities")
                .then(a.1.cmp(&b.1))
        });
        let mut picked: Vec<u32> = candidates.into_iter().take(top_n).map(|(_, s)| s).collect();
        // pad with zero-probability states, index order, if the horizon is wider
        let mut next_filler = 0u32;
        while picked.len() < top_n {
            if !picked.contains(&next_filler) {
                picked.push(next_filler);
            }
            next_filler += 1;
        }
        picked
    }
}

struct SecondOrderChain<'a> {
    spec: &'a GeneratorSpec,
    cum_head: Vec<f64>,
    head_total: f64,
    rng: ChaCha12Rng,
    prev: u32,
    cur: u32,
}

impl<'a> SecondOrderChain<'a> {
    fn start(spec: &'a GeneratorSpec) -> SecondOrderChain<'a> {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let prev = rng.random_range(0..spec.states as u32);
        let cur = rng.random_range(0..spec.states as u32);
        let mut cum_head = Vec::with_capacity(spec.c.len());
        let mut acc = 0.0;
        for &c in &spec.c {
            acc += c * spec.base_prob;
            cum_head.push(acc);
        }
        SecondOrderChain {
            spec,
            head_total: acc,
            cum_head,
            rng,
            prev,
            cur,
        }
    }

    /// `wrap(i + j + x)` as the residue `(i0 + j0 + x + 1) mod M` on
    /// zero-based state indices; valid for any overshoot, not just one lap.
    fn designated(&self, x: usize) -> u32 {
        let m = self.spec.states as u64;
        (((self.prev as u64) + (self.cur as u64) + x as u64 + 1) % m) as u32
    }

    fn step(&mut self) -> u32 {
        let u: f64 = self.rng.random();
        let next = if u >= self.head_total {
            self.rng.random_range(0..self.spec.states as u32)
        } else {
            let x = self
                .cum_head
                .iter()
                .position(|&threshold| u < threshold)
                .expect("u below head_total");
            self.designated(x)
        };
        self.prev = self.cur;
        self.cur = next;
        next
    }

    /// Predicted next states: the designated head states in coupling order,
    /// padded with the lowest-index non-designated states (all of which tie
    /// at the uniform tail share).
    fn top_candidates(&self, top_n: usize) -> Vec<u32> {
        let ranks = self.spec.c.len();
        let mut picked: Vec<u32> = (0..ranks.min(top_n)).map(|x| self.designated(x)).collect();
        let mut filler = 0u32;
        while picked.len() < top_n {
            if !picked.contains(&filler) {
                picked.push(filler);
            }
            filler += 1;
        }
        picked
    }
}
