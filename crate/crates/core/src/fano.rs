//! Scaled-entropy bounds on Top-N prediction accuracy.
//!
//! A user whose next action is one of `M` candidates, with measured entropy
//! rate `S`, cannot be predicted better than the ceiling obtained from the
//! surrogate distribution that keeps the top `r` probabilities — coupled as
//! `p_i = c_i p_1` — and flattens the remaining `M - r` to uniform. The
//! surrogate's entropy as a function of `p_1`,
//!
//! ```text
//! F(x) = -Σ_i c_i x log2(c_i x) - (1 - A x) log2(1 - A x) + (1 - A x) log2(M - r)
//! ```
//!
//! with `A = Σ c_i`, is strictly decreasing and concave on the feasible
//! interval where every coupled probability exceeds the uniform tail share.
//! Solving `F(x) = S` by bisection yields the Top-1 ceiling; multiplying by
//! the partial sums of `c` yields the Top-2..Top-r ceilings. `r = 1` with
//! `c = (1)` recovers the classic single-target bound.

use thiserror::Error;

/// Bisection stops when the bracketing interval is narrower than this.
const SOLVE_X_TOL: f64 = 1e-10;
const SOLVE_MAX_ITER: usize = 200;

/// Relative slack accepted on the feasible-interval endpoints, so that
/// boundary points computed independently by callers are not rejected over
/// a final-ulp disagreement.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FanoError {
    #[error("candidate count must be at least 2, got {0}")]
    TooFewCandidates(usize),
    #[error("rank must satisfy 1 <= r <= M - 1 (r = {rank}, M = {candidates})")]
    RankOutOfRange { rank: usize, candidates: usize },
    #[error("entropy must be finite and non-negative, got {0}")]
    InvalidEntropy(f64),
    #[error("first coupling ratio must be exactly 1, got {0}")]
    FirstRatioNotOne(f64),
    #[error("coupling ratio #{index} = {value} outside (0, 1]")]
    RatioOutOfRange { index: usize, value: f64 },
    #[error("coupling ratios must be non-increasing (violated at #{index})")]
    RatiosNotMonotone { index: usize },
    #[error("whole-set reduction needs M - N >= 1 (M = {candidates}, N = {top_n})")]
    ReductionTooLarge { candidates: usize, top_n: usize },
    #[error("pi1 = {pi1} outside the feasible domain: {violation}")]
    OutsideDomain {
        pi1: f64,
        violation: DomainViolation,
    },
}

/// Which feasibility constraint a probe point violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainViolation {
    /// `pi1` is not a positive probability.
    NonPositive,
    /// The coupled head mass `Σ c_i pi1` exceeds 1.
    HeadMassExceedsOne { head_mass: f64 },
    /// The smallest coupled probability `c_r pi1` falls below the uniform
    /// tail share `(1 - Σ c_i pi1) / (M - r)`.
    HeadBelowTail { head: f64, tail_share: f64 },
}

impl std::fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DomainViolation::NonPositive => write!(f, "pi1 must be positive"),
            DomainViolation::HeadMassExceedsOne { head_mass } => {
                write!(f, "coupled head mass {head_mass} exceeds 1")
            }
            DomainViolation::HeadBelowTail { head, tail_share } => {
                write!(
                    f,
                    "smallest coupled probability {head} below tail share {tail_share}"
                )
            }
        }
    }
}

/// One instance of the bound equation: entropy, candidate-set size and the
/// coupling ratios of the top `r` probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FanoProblem {
    entropy_bits: f64,
    candidates: usize,
    ratios: Vec<f64>,
    cum: Vec<f64>,
}

/// Solver output: the Top-1 ceiling and the cumulative Top-1..Top-r vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    /// Top-1 ceiling, in (0, 1].
    pub pi1: f64,
    /// Cumulative ceilings; entry `k-1` bounds Top-k accuracy, capped at 1.
    pub topn: Vec<f64>,
    /// Set when the measured entropy fell outside the representable range
    /// and the result sits on a feasible-domain boundary.
    pub clamped: bool,
    /// `|F(pi1) - S|`; at most the solver tolerance unless clamped.
    pub residual: f64,
    cum: Vec<f64>,
}

impl BoundResult {
    pub fn rank(&self) -> usize {
        self.topn.len()
    }

    /// Prefix sums of the coupling ratios, kept so corrections can rescale
    /// the cumulative vector from a revised `pi1`.
    pub fn cumulative_ratios(&self) -> &[f64] {
        &self.cum
    }

    /// Cumulative Top-1..Top-r vector for an alternative Top-1 value.
    pub fn topn_for(&self, pi1: f64) -> Vec<f64> {
        self.cum.iter().map(|&a| (pi1 * a).min(1.0)).collect()
    }
}

impl FanoProblem {
    /// Validates and builds a problem instance.
    pub fn new(entropy_bits: f64, candidates: usize, ratios: Vec<f64>) -> Result<Self, FanoError> {
        if candidates < 2 {
            return Err(FanoError::TooFewCandidates(candidates));
        }
        if ratios.is_empty() || ratios.len() > candidates - 1 {
            return Err(FanoError::RankOutOfRange {
                rank: ratios.len(),
                candidates,
            });
        }
        if !entropy_bits.is_finite() || entropy_bits < 0.0 {
            return Err(FanoError::InvalidEntropy(entropy_bits));
        }
        if ratios[0] != 1.0 {
            return Err(FanoError::FirstRatioNotOne(ratios[0]));
        }
        for (i, &c) in ratios.iter().enumerate() {
            if !(c > 0.0 && c <= 1.0) || !c.is_finite() {
                return Err(FanoError::RatioOutOfRange { index: i, value: c });
            }
            if i > 0 && c > ratios[i - 1] {
                return Err(FanoError::RatiosNotMonotone { index: i });
            }
        }
        let mut cum = Vec::with_capacity(ratios.len());
        let mut acc = 0.0;
        for &c in &ratios {
            acc += c;
            cum.push(acc);
        }
        Ok(FanoProblem {
            entropy_bits,
            candidates,
            ratios,
            cum,
        })
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy_bits
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn rank(&self) -> usize {
        self.ratios.len()
    }

    fn head_mass_ratio(&self) -> f64 {
        *self.cum.last().expect("ratios are non-empty")
    }

    /// The closed feasible interval `[x_lo, x_hi]` for `pi1`.
    ///
    /// At `x_lo` the smallest coupled probability equals the uniform tail
    /// share (the surrogate entropy peaks there); at `x_hi = 1 / Σ c_i` the
    /// tail mass vanishes.
    pub fn feasible_interval(&self) -> (f64, f64) {
        let m = self.candidates as f64;
        let r = self.rank() as f64;
        let a = self.head_mass_ratio();
        let c_r = *self.ratios.last().expect("ratios are non-empty");
        let x_lo = 1.0 / (c_r * (m - r) + a);
        let x_hi = 1.0 / a;
        (x_lo, x_hi)
    }

    fn check_domain(&self, pi1: f64) -> Result<(), FanoError> {
        if pi1 <= 0.0 || !pi1.is_finite() {
            return Err(FanoError::OutsideDomain {
                pi1,
                violation: DomainViolation::NonPositive,
            });
        }
        let (x_lo, x_hi) = self.feasible_interval();
        if pi1 > x_hi * (1.0 + DOMAIN_SLACK) {
            return Err(FanoError::OutsideDomain {
                pi1,
                violation: DomainViolation::HeadMassExceedsOne {
                    head_mass: self.head_mass_ratio() * pi1,
                },
            });
        }
        if pi1 < x_lo * (1.0 - DOMAIN_SLACK) {
            let m = self.candidates as f64;
            let r = self.rank() as f64;
            let c_r = *self.ratios.last().expect("non-empty");
            return Err(FanoError::OutsideDomain {
                pi1,
                violation: DomainViolation::HeadBelowTail {
                    head: c_r * pi1,
                    tail_share: (1.0 - self.head_mass_ratio() * pi1) / (m - r),
                },
            });
        }
        Ok(())
    }

    /// Evaluates the surrogate entropy `F(pi1)` in bits.
    ///
    /// `pi1` must lie in the feasible interval; `0 · log 0` terms evaluate
    /// to zero.
    pub fn scaled_entropy(&self, pi1: f64) -> Result<f64, FanoError> {
        self.check_domain(pi1)?;
        Ok(self.scaled_entropy_unchecked(pi1))
    }

    fn scaled_entropy_unchecked(&self, pi1: f64) -> f64 {
        let m = self.candidates as f64;
        let r = self.rank() as f64;
        let head: f64 = self.ratios.iter().map(|&c| -xlog2(c * pi1)).sum();
        // clamp tiny negative tails arising from x_hi rounding
        let tail = (1.0 - self.head_mass_ratio() * pi1).max(0.0);
        head - xlog2(tail) + tail * (m - r).log2()
    }

    /// Closed-form derivative `F'(pi1) = -Σ c_i log2(c_i pi1 (M-r) / (1 - A pi1))`.
    ///
    /// Negative throughout the feasible interior; diverges to `-inf` as the
    /// tail mass vanishes at `x_hi`.
    pub fn scaled_entropy_derivative(&self, pi1: f64) -> Result<f64, FanoError> {
        self.check_domain(pi1)?;
        let m = self.candidates as f64;
        let r = self.rank() as f64;
        let tail = 1.0 - self.head_mass_ratio() * pi1;
        Ok(self
            .ratios
            .iter()
            .map(|&c| -c * (c * pi1 * (m - r) / tail).log2())
            .sum())
    }

    /// Solves `F(pi1) = S` for the Top-1 ceiling and fills the cumulative
    /// Top-1..Top-r vector.
    ///
    /// When `S` exceeds the largest representable surrogate entropy the
    /// result clamps to `x_lo`; when `S` falls below the value at `x_hi`
    /// (zero for `r = 1`) it clamps to `x_hi`. Clamping is flagged, not an
    /// error, so estimator noise on degenerate sequences stays visible
    /// without aborting a run.
    pub fn solve(&self) -> BoundResult {
        let (x_lo, x_hi) = self.feasible_interval();
        let s = self.entropy_bits;
        let s_max = self.scaled_entropy_unchecked(x_lo);
        let s_min = self.scaled_entropy_unchecked(x_hi);

        if s >= s_max {
            return self.result_at(x_lo, true);
        }
        if s <= s_min {
            return self.result_at(x_hi, true);
        }

        // strict monotone decrease on [x_lo, x_hi] makes bisection exact
        let mut lo = x_lo;
        let mut hi = x_hi;
        for _ in 0..SOLVE_MAX_ITER {
            if hi - lo <= SOLVE_X_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.scaled_entropy_unchecked(mid) > s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.result_at(0.5 * (lo + hi), false)
    }

    fn result_at(&self, pi1: f64, clamped: bool) -> BoundResult {
        let residual = (self.scaled_entropy_unchecked(pi1) - self.entropy_bits).abs();
        let topn = self.cum.iter().map(|&a| (pi1 * a).min(1.0)).collect();
        BoundResult {
            pi1,
            topn,
            clamped,
            residual,
            cum: self.cum.clone(),
        }
    }
}

/// The classic single-target bound: rank 1, `c = (1)`.
pub fn solve_classic(entropy_bits: f64, candidates: usize) -> Result<BoundResult, FanoError> {
    Ok(FanoProblem::new(entropy_bits, candidates, vec![1.0])?.solve())
}

/// The whole-set Top-N variant that substitutes `M - N` for `M` in the
/// classic equation.
///
/// Kept for the comparison experiment showing why it fails: for large `M`
/// the bound barely moves with `N`. `N = 0` is the classic bound by
/// definition; `M - N = 1` leaves a single merged candidate, so the ceiling
/// is trivially 1.
pub fn solve_naive_topn(
    entropy_bits: f64,
    candidates: usize,
    top_n: usize,
) -> Result<BoundResult, FanoError> {
    let reduced = candidates
        .checked_sub(top_n)
        .filter(|&m| m >= 1)
        .ok_or(FanoError::ReductionTooLarge { candidates, top_n })?;
    if !entropy_bits.is_finite() || entropy_bits < 0.0 {
        return Err(FanoError::InvalidEntropy(entropy_bits));
    }
    if reduced == 1 {
        return Ok(BoundResult {
            pi1: 1.0,
            topn: vec![1.0],
            clamped: true,
            residual: entropy_bits,
            cum: vec![1.0],
        });
    }
    solve_classic(entropy_bits, reduced)
}

fn xlog2(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(s: f64, m: usize, c: &[f64]) -> FanoProblem {
        FanoProblem::new(s, m, c.to_vec()).unwrap()
    }

    /// Shannon entropy of the explicit surrogate distribution
    /// `(c_1 x, .., c_r x, tail/(M-r), ..)` — the independent oracle.
    fn explicit_distribution_entropy(m: usize, c: &[f64], pi1: f64) -> f64 {
        let mut probs: Vec<f64> = c.iter().map(|&ci| ci * pi1).collect();
        let head: f64 = probs.iter().sum();
        let share = (1.0 - head) / (m - c.len()) as f64;
        probs.extend(std::iter::repeat_n(share, m - c.len()));
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "not a distribution: {total}");
        -probs.iter().map(|&p| xlog2(p)).sum::<f64>()
    }

    #[test]
    fn uniform_case_evaluates_to_log_m() {
        let p = problem(0.0, 4, &[1.0]);
        let s = p.scaled_entropy(0.25).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_case_evaluates_to_zero() {
        for m in [2usize, 10, 1000] {
            let p = problem(0.0, m, &[1.0]);
            let s = p.scaled_entropy(1.0).unwrap();
            assert!(s.abs() < 1e-12, "M={m}: {s}");
        }
    }

    #[test]
    fn eval_matches_explicit_distribution() {
        let c = [1.0, 0.5];
        let p = problem(0.0, 10, &c);
        let got = p.scaled_entropy(0.4).unwrap();
        let want = explicit_distribution_entropy(10, &c, 0.4);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // spot value: entropy of (0.4, 0.2, 0.05 x 8)
        let direct = -(0.4f64 * 0.4f64.log2() + 0.2 * 0.2f64.log2() + 8.0 * 0.05 * 0.05f64.log2());
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn out_of_domain_probes_carry_the_violated_constraint() {
        let p = problem(1.0, 10, &[1.0, 0.5]);
        let (x_lo, x_hi) = p.feasible_interval();

        let err = p.scaled_entropy(x_hi * 1.01).unwrap_err();
        assert!(matches!(
            err,
            FanoError::OutsideDomain {
                violation: DomainViolation::HeadMassExceedsOne { .. },
                ..
            }
        ));

        let err = p.scaled_entropy(x_lo * 0.9).unwrap_err();
        assert!(matches!(
            err,
            FanoError::OutsideDomain {
                violation: DomainViolation::HeadBelowTail { .. },
                ..
            }
        ));

        let err = p.scaled_entropy(0.0).unwrap_err();
        assert!(matches!(
            err,
            FanoError::OutsideDomain {
                violation: DomainViolation::NonPositive,
                ..
            }
        ));
    }

    #[test]
    fn solve_inverts_uniform_case() {
        let p = problem(2.0, 4, &[1.0]);
        let bound = p.solve();
        assert!((bound.pi1 - 0.25).abs() < 1e-9);
    }

    #[test]
    fn solve_round_trips_through_eval() {
        let p0 = problem(0.0, 100, &[1.0]);
        let s = p0.scaled_entropy(0.8).unwrap();
        let bound = problem(s, 100, &[1.0]).solve();
        assert!((bound.pi1 - 0.8).abs() < 1e-9);
        assert!(!bound.clamped);
        assert!(bound.residual < 1e-8);
    }

    #[test]
    fn solve_matches_worked_ratio_example() {
        // c = (1, 0.7, 0.6, 0.5): per-rank ceilings 0.2 / 0.14 / 0.12 / 0.1,
        // cumulative (0.2, 0.34, 0.46, 0.56)
        let c = [1.0, 0.7, 0.6, 0.5];
        let s = problem(0.0, 1000, &c).scaled_entropy(0.2).unwrap();
        let bound = problem(s, 1000, &c).solve();
        assert!((bound.pi1 - 0.2).abs() < 1e-9);
        let expected = [0.2, 0.34, 0.46, 0.56];
        for (got, want) in bound.topn.iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn mobility_figure_round_trip() {
        let s = problem(0.0, 2651, &[1.0]).scaled_entropy(0.93).unwrap();
        let bound = problem(s, 2651, &[1.0]).solve();
        assert!((bound.pi1 - 0.93).abs() < 1e-9);
    }

    #[test]
    fn high_entropy_clamps_to_uniform_boundary() {
        // S = log2 M is the ceiling of the representable range at r = 1
        let bound = solve_classic(50f64.log2(), 50).unwrap();
        assert!((bound.pi1 - 0.02).abs() < 1e-12);
        assert!(bound.clamped);

        // anything above still clamps, with a visible residual
        let bound = solve_classic(50f64.log2() + 1.0, 50).unwrap();
        assert!((bound.pi1 - 0.02).abs() < 1e-12);
        assert!(bound.clamped);
        assert!(bound.residual > 0.5);
    }

    #[test]
    fn zero_entropy_clamps_to_upper_boundary() {
        let bound = solve_classic(0.0, 50).unwrap();
        assert!((bound.pi1 - 1.0).abs() < 1e-12);
        assert!(bound.clamped);
    }

    #[test]
    fn topn_is_cumulative_and_capped() {
        let c = [1.0, 0.9, 0.8];
        let p0 = problem(0.0, 5, &c);
        let s = p0.scaled_entropy(0.35).unwrap();
        let bound = problem(s, 5, &c).solve();
        assert!((bound.topn[0] - bound.pi1).abs() < 1e-12);
        for w in bound.topn.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(bound.topn.iter().all(|&t| t <= 1.0));
        // 0.35 * (1 + 0.9 + 0.8) = 0.945
        assert!((bound.topn[2] - 0.945).abs() < 1e-6);
    }

    #[test]
    fn naive_with_zero_n_is_the_classic_bound() {
        let classic = solve_classic(5.0, 10_000).unwrap();
        let naive = solve_naive_topn(5.0, 10_000, 0).unwrap();
        assert_eq!(classic.pi1, naive.pi1);
    }

    #[test]
    fn naive_zero_entropy_is_certain() {
        for n in [1usize, 10, 100] {
            let bound = solve_naive_topn(0.0, 10_000, n).unwrap();
            assert!((bound.pi1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_single_candidate_is_trivially_one() {
        let bound = solve_naive_topn(3.0, 11, 10).unwrap();
        assert_eq!(bound.pi1, 1.0);
        assert!(bound.clamped);
        let err = solve_naive_topn(3.0, 10, 10).unwrap_err();
        assert!(matches!(err, FanoError::ReductionTooLarge { .. }));
    }

    #[test]
    fn naive_barely_moves_for_large_m() {
        let a = solve_naive_topn(5.0, 10_000, 1).unwrap();
        let b = solve_naive_topn(5.0, 10_000, 10).unwrap();
        assert!((a.pi1 - b.pi1).abs() < 0.01);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        assert!(matches!(
            FanoProblem::new(1.0, 1, vec![1.0]).unwrap_err(),
            FanoError::TooFewCandidates(1)
        ));
        assert!(matches!(
            FanoProblem::new(1.0, 3, vec![1.0, 0.5, 0.4]).unwrap_err(),
            FanoError::RankOutOfRange { .. }
        ));
        assert!(matches!(
            FanoProblem::new(-0.5, 10, vec![1.0]).unwrap_err(),
            FanoError::InvalidEntropy(_)
        ));
        assert!(matches!(
            FanoProblem::new(1.0, 10, vec![0.9]).unwrap_err(),
            FanoError::FirstRatioNotOne(_)
        ));
        assert!(matches!(
            FanoProblem::new(1.0, 10, vec![1.0, 0.0]).unwrap_err(),
            FanoError::RatioOutOfRange { index: 1, .. }
        ));
        assert!(matches!(
            FanoProblem::new(1.0, 10, vec![1.0, 0.5, 0.7]).unwrap_err(),
            FanoError::RatiosNotMonotone { index: 2 }
        ));
    }

    #[test]
    fn derivative_is_negative_inside_the_domain() {
        let p = problem(1.0, 1000, &[1.0, 0.7, 0.6, 0.5]);
        let (x_lo, x_hi) = p.feasible_interval();
        for i in 1..20 {
            let x = x_lo + (x_hi - x_lo) * i as f64 / 20.0;
            let d = p.scaled_entropy_derivative(x).unwrap();
            assert!(d < 0.0, "derivative {d} at {x}");
        }
    }
}
