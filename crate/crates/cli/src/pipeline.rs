//! The analyze pipeline: parse → sequences → entropy → ratios → bounds →
//! optional correction → aggregate report.

use std::io::Read;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use predictability::calibration::{self, CalibrationError, CalibrationTable};
use predictability::entropy::{lz_entropy_rate, EntropyError};
use predictability::events::{self, EventLog, ParseConfig, SymbolSequence};
use predictability::fano::{FanoError, FanoProblem};
use predictability::popularity::{self, PopularityError};

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Events(#[from] events::EventError),
    #[error(transparent)]
    Popularity(#[from] PopularityError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("no user met the min_length threshold of {0}")]
    NoUsableUsers(usize),
    #[error("every user was skipped ({0} skipped)")]
    AllUsersSkipped(usize),
}

/// Pipeline settings; field defaults mirror the CLI flags.
#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    /// Users with fewer events are excluded.
    pub min_length: usize,
    /// Number of coupled ranks r in the bound.
    pub rank: usize,
    /// When set, coupling ratios are synthesized as `i^-xi` instead of
    /// being measured from the population, and the same value keys the
    /// calibration lookup.
    pub xi_override: Option<f64>,
    /// Top ranks used for the popularity exponent fit.
    pub fit_max_rank: usize,
    /// Use the global distinct-item count as every user's candidate-set
    /// size M instead of the user's own.
    pub global_m: bool,
    /// Weight the aggregate by per-user event counts instead of uniformly.
    pub event_weighted: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            min_length: 50,
            rank: popularity::DEFAULT_RANK,
            xi_override: None,
            fit_max_rank: popularity::DEFAULT_FIT_MAX_RANK,
            global_m: false,
            event_weighted: false,
        }
    }
}

/// One analyzed user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRow {
    pub user_id: String,
    /// Sequence length n.
    pub n: usize,
    /// Candidate-set size M used for this user.
    pub m: usize,
    /// Entropy-rate estimate in bits per symbol.
    pub entropy_bits: f64,
    /// Top-1 ceiling.
    pub pi1: f64,
    pub clamped: bool,
}

/// Aggregated analysis result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictabilityReport {
    /// Per-user rows, sorted by user id.
    pub users: Vec<UserRow>,
    /// Mean Top-1..Top-r ceilings across users (uncorrected).
    pub mean_topn: Vec<f64>,
    /// Mean corrected ceilings, when a calibration table was supplied.
    pub mean_topn_corrected: Option<Vec<f64>>,
    /// Exponent used for calibration keying: the override if given, the
    /// fitted value otherwise.
    pub xi: f64,
    /// Fitted exponent of the population rank-frequency line (absent when
    /// fewer than three ranks exist).
    pub xi_fitted: Option<f64>,
    pub rank: usize,
    /// Users excluded for being shorter than min_length.
    pub excluded_users: usize,
    /// Users meeting min_length that still could not be solved.
    pub skipped_users: usize,
    /// Malformed input rows (only populated by [`analyze_source`]).
    pub malformed_rows: u64,
    /// Hash of the effective configuration, for reproducibility checks.
    pub config_hash: String,
    /// Fingerprint of the calibration table, when one was used.
    pub table_id: Option<String>,
    /// Correction lookups that clamped outside the table grid.
    pub corrections_out_of_grid: usize,
}

/// Runs the pipeline over an already-parsed log.
pub fn analyze_log(
    log: &EventLog,
    config: &AnalyzeConfig,
    table: Option<&CalibrationTable>,
) -> Result<PredictabilityReport, AnalyzeError> {
    if config.rank == 0 {
        return Err(AnalyzeError::ZeroRank);
    }
    let built = events::build_sequences(log, config.min_length)?;
    if built.sequences.is_empty() {
        return Err(AnalyzeError::NoUsableUsers(config.min_length));
    }

    let profile = popularity::rank_frequencies(log)?;
    let xi_fitted = popularity::fit_zipf(&profile, config.fit_max_rank)
        .ok()
        .map(|fit| fit.xi);
    let xi = config.xi_override.or(xi_fitted).unwrap_or(0.0);

    // a population with fewer distinct items than the rank cannot supply
    // ratios; users that need them are skipped individually, while
    // single-item users still report their trivial ceiling
    let ratios: Option<Vec<f64>> = match config.xi_override {
        Some(xi) => Some(popularity::zipf_c_vector(xi, config.rank)),
        None if profile.freqs.len() >= config.rank => {
            Some(popularity::c_ratios(&profile, config.rank)?)
        }
        None => None,
    };
    let global_m = built.dictionary.len();

    // per-user stages run in parallel; the sequence map is already sorted
    // by user id, so collecting preserves a deterministic order
    let entries: Vec<(&String, &SymbolSequence)> = built.sequences.iter().collect();
    let solved: Vec<Result<UserOutcome, AnalyzeError>> = entries
        .par_iter()
        .map(|(user, seq)| solve_user(user, seq, config, ratios.as_deref(), global_m, table, xi))
        .collect();

    let mut users = Vec::new();
    let mut skipped = 0usize;
    let mut sum_topn = vec![0.0f64; config.rank];
    let mut sum_topn_corrected = vec![0.0f64; config.rank];
    let mut corrections_out_of_grid = 0usize;
    let mut weight_total = 0.0f64;
    for outcome in solved {
        match outcome {
            Ok(UserOutcome::Solved {
                row,
                topn,
                corrected,
            }) => {
                let weight = if config.event_weighted {
                    row.n as f64
                } else {
                    1.0
                };
                for (acc, v) in sum_topn.iter_mut().zip(&topn) {
                    *acc += weight * v;
                }
                if let Some((ctopn, out_of_grid)) = corrected {
                    for (acc, v) in sum_topn_corrected.iter_mut().zip(&ctopn) {
                        *acc += weight * v;
                    }
                    corrections_out_of_grid += out_of_grid as usize;
                }
                weight_total += weight;
                users.push(row);
            }
            Ok(UserOutcome::Skipped) => skipped += 1,
            Err(err) => return Err(err),
        }
    }
    if users.is_empty() {
        return Err(AnalyzeError::AllUsersSkipped(skipped));
    }

    let mean_topn: Vec<f64> = sum_topn.iter().map(|s| s / weight_total).collect();
    let mean_topn_corrected = table.map(|_| {
        sum_topn_corrected
            .iter()
            .map(|s| s / weight_total)
            .collect()
    });

    Ok(PredictabilityReport {
        config_hash: config_hash(config),
        table_id: table.map(|t| t.fingerprint()),
        users,
        mean_topn,
        mean_topn_corrected,
        xi,
        xi_fitted,
        rank: config.rank,
        excluded_users: built.excluded_users,
        skipped_users: skipped,
        malformed_rows: 0,
        corrections_out_of_grid,
    })
}

/// Parses a delimited stream and runs [`analyze_log`], filling the
/// malformed-row count.
pub fn analyze_source<R: Read>(
    reader: R,
    parse: &ParseConfig,
    config: &AnalyzeConfig,
    table: Option<&CalibrationTable>,
) -> Result<PredictabilityReport, AnalyzeError> {
    let parsed = events::parse_events(reader, parse)?;
    let mut report = analyze_log(&parsed.log, config, table)?;
    report.malformed_rows = parsed.malformed;
    Ok(report)
}

enum UserOutcome {
    Solved {
        row: UserRow,
        topn: Vec<f64>,
        corrected: Option<(Vec<f64>, bool)>,
    },
    Skipped,
}

/// Solves one user. Failures specific to the user (too short for the
/// estimator, vocabulary not exceeding the rank) skip the user; a
/// single-item history is the trivially certain case and reports a ceiling
/// of 1 at every rank.
fn solve_user(
    user: &str,
    seq: &SymbolSequence,
    config: &AnalyzeConfig,
    ratios: Option<&[f64]>,
    global_m: usize,
    table: Option<&CalibrationTable>,
    xi: f64,
) -> Result<UserOutcome, AnalyzeError> {
    let est = match lz_entropy_rate(seq) {
        Ok(est) => est,
        Err(EntropyError::EmptySequence | EntropyError::TooShort(_)) => {
            return Ok(UserOutcome::Skipped)
        }
    };
    let m = if config.global_m {
        global_m
    } else {
        est.vocab_size
    };

    if m == 1 {
        // a user who only ever touches one item is perfectly predictable
        let row = UserRow {
            user_id: user.to_string(),
            n: est.length,
            m,
            entropy_bits: est.bits_per_symbol,
            pi1: 1.0,
            clamped: true,
        };
        let topn = vec![1.0; config.rank];
        let corrected = table.map(|_| (topn.clone(), false));
        return Ok(UserOutcome::Solved {
            row,
            topn,
            corrected,
        });
    }
    if config.rank > m - 1 {
        return Ok(UserOutcome::Skipped);
    }
    let Some(ratios) = ratios else {
        return Ok(UserOutcome::Skipped);
    };

    let problem = match FanoProblem::new(est.bits_per_symbol, m, ratios.to_vec()) {
        Ok(p) => p,
        Err(FanoError::InvalidEntropy(_)) => return Ok(UserOutcome::Skipped),
        Err(_) => return Ok(UserOutcome::Skipped),
    };
    let bound = problem.solve();

    let corrected = match table {
        Some(table) => {
            let c = calibration::correct(&bound, table, xi)?;
            Some((c.topn, c.out_of_grid))
        }
        None => None,
    };

    Ok(UserOutcome::Solved {
        row: UserRow {
            user_id: user.to_string(),
            n: est.length,
            m,
            entropy_bits: est.bits_per_symbol,
            pi1: bound.pi1,
            clamped: bound.clamped,
        },
        topn: bound.topn,
        corrected,
    })
}

/// FNV-1a over the canonical rendering of the configuration.
fn config_hash(config: &AnalyzeConfig) -> String {
    let canonical = format!(
        "min_length={} rank={} xi_override={:?} fit_max_rank={} global_m={} event_weighted={}",
        config.min_length,
        config.rank,
        config.xi_override,
        config.fit_max_rank,
        config.global_m,
        config.event_weighted,
    );
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in canonical.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use predictability::events::EventRecord;

    fn log_from_sequences(seqs: &[(&str, Vec<&str>)]) -> EventLog {
        let mut records = Vec::new();
        for (user, items) in seqs {
            for (t, item) in items.iter().enumerate() {
                records.push(EventRecord {
                    user_id: user.to_string(),
                    item_id: item.to_string(),
                    timestamp: t as i64,
                });
            }
        }
        EventLog::from_records(records)
    }

    fn varied_log() -> EventLog {
        // two users cycling over enough distinct items to support rank 3
        let items: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let mut u1 = Vec::new();
        let mut u2 = Vec::new();
        for t in 0..64 {
            u1.push(refs[t % 8]);
            u2.push(refs[(t * 3 + 1) % 8]);
        }
        log_from_sequences(&[("u1", u1), ("u2", u2)])
    }

    #[test]
    fn constant_users_report_certainty() {
        let log = log_from_sequences(&[("a", vec!["x"; 64]), ("b", vec!["x"; 64])]);
        let config = AnalyzeConfig {
            min_length: 10,
            rank: 10,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&log, &config, None).unwrap();
        assert_eq!(report.users.len(), 2);
        for row in &report.users {
            assert_eq!(row.pi1, 1.0);
            assert!(row.clamped);
        }
        assert!(report.mean_topn.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn aggregate_is_monotone_and_bounded() {
        let config = AnalyzeConfig {
            min_length: 10,
            rank: 3,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&varied_log(), &config, None).unwrap();
        for w in report.mean_topn.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(report.mean_topn.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for row in &report.users {
            assert!(row.pi1 > 0.0 && row.pi1 <= 1.0);
        }
    }

    #[test]
    fn analyze_is_deterministic() {
        let config = AnalyzeConfig {
            min_length: 10,
            rank: 3,
            ..AnalyzeConfig::default()
        };
        let a = analyze_log(&varied_log(), &config, None).unwrap();
        let b = analyze_log(&varied_log(), &config, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_weighting_shifts_the_aggregate() {
        // one long low-ceiling user vs one short certain user: uniform
        // weighting averages them evenly, event weighting favors the long one
        let mut log = varied_log();
        for t in 0..16 {
            log.records.push(EventRecord {
                user_id: "tiny".into(),
                item_id: "only".into(),
                timestamp: t,
            });
        }
        let log = EventLog::from_records(log.records);
        let uniform = AnalyzeConfig {
            min_length: 10,
            rank: 3,
            ..AnalyzeConfig::default()
        };
        let weighted = AnalyzeConfig {
            event_weighted: true,
            ..uniform.clone()
        };
        let a = analyze_log(&log, &uniform, None).unwrap();
        let b = analyze_log(&log, &weighted, None).unwrap();
        // "tiny" is certain (M = 1) but short, so its weight drops under
        // event weighting and the aggregate moves down
        assert!(b.mean_topn[0] < a.mean_topn[0]);
    }

    #[test]
    fn global_m_uses_the_population_vocabulary() {
        // u1 touches all 8 items, "odd" only 4 of them
        let items: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let mut u1 = Vec::new();
        let mut odd = Vec::new();
        for t in 0..64 {
            u1.push(refs[t % 8]);
            odd.push(refs[(t * 2 + 1) % 8]);
        }
        let log = log_from_sequences(&[("u1", u1), ("odd", odd)]);

        let config = AnalyzeConfig {
            min_length: 10,
            rank: 3,
            global_m: true,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&log, &config, None).unwrap();
        for row in &report.users {
            assert_eq!(row.m, 8);
        }

        let per_user = AnalyzeConfig {
            global_m: false,
            ..config
        };
        let other = analyze_log(&log, &per_user, None).unwrap();
        let odd_row = other.users.iter().find(|r| r.user_id == "odd").unwrap();
        assert_eq!(odd_row.m, 4);
        // a wider candidate set raises the ceiling for the same entropy
        let odd_global = report.users.iter().find(|r| r.user_id == "odd").unwrap();
        assert!(odd_global.pi1 >= odd_row.pi1);
    }

    #[test]
    fn users_below_rank_vocabulary_are_skipped() {
        let log = log_from_sequences(&[
            (
                "tiny",
                vec!["a", "b", "a", "b", "a", "b", "a", "b", "a", "b"],
            ),
            (
                "wide",
                vec!["a", "b", "c", "d", "e", "f", "a", "b", "c", "d"],
            ),
        ]);
        let config = AnalyzeConfig {
            min_length: 5,
            rank: 4,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&log, &config, None).unwrap();
        assert_eq!(report.users.len(), 1);
        assert_eq!(report.users[0].user_id, "wide");
        assert_eq!(report.skipped_users, 1);
    }

    #[test]
    fn row_and_skip_counts_add_up() {
        let log = log_from_sequences(&[
            ("ok", vec!["a", "b", "c", "d", "e", "a", "b", "c", "d", "e"]),
            (
                "narrow",
                vec!["a", "a", "b", "a", "a", "b", "a", "a", "b", "a"],
            ),
            ("short", vec!["a", "b"]),
        ]);
        let config = AnalyzeConfig {
            min_length: 10,
            rank: 2,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&log, &config, None).unwrap();
        // "short" is excluded pre-pipeline; "narrow" has M = 2, which cannot
        // support rank 2, so it is skipped
        assert_eq!(report.excluded_users, 1);
        assert_eq!(report.users.len() + report.skipped_users, 2);
    }

    #[test]
    fn xi_override_controls_ratios_and_key() {
        let config = AnalyzeConfig {
            min_length: 10,
            rank: 3,
            xi_override: Some(0.6),
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&varied_log(), &config, None).unwrap();
        assert_eq!(report.xi, 0.6);
    }

    #[test]
    fn empty_rank_is_rejected() {
        let config = AnalyzeConfig {
            rank: 0,
            ..AnalyzeConfig::default()
        };
        assert!(matches!(
            analyze_log(&varied_log(), &config, None),
            Err(AnalyzeError::ZeroRank)
        ));
    }

    #[test]
    fn iid_uniform_users_stay_above_the_uniform_floor() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;

        // IID uniform users over 50 items: the true Top-1 accuracy is 1/50.
        // The aggregate ceiling must sit above that floor, and below the
        // value the entropy estimator's noise band implies (the estimator
        // reads low on a 50-symbol alphabet at this length, which inflates
        // the ceiling; see the entropy convergence tests).
        let items: Vec<String> = (0..50).map(|i| format!("i{i}")).collect();
        let mut records = Vec::new();
        for user in 0..10u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(3000 + user);
            for t in 0..4096 {
                records.push(EventRecord {
                    user_id: format!("u{user}"),
                    item_id: items[rng.random_range(0..50)].clone(),
                    timestamp: t,
                });
            }
        }
        let log = EventLog::from_records(records);
        let config = AnalyzeConfig {
            min_length: 50,
            rank: 3,
            ..AnalyzeConfig::default()
        };
        let report = analyze_log(&log, &config, None).unwrap();
        assert_eq!(report.users.len(), 10);
        let top1 = report.mean_topn[0];
        assert!(
            top1 >= 1.0 / 50.0,
            "ceiling {top1} fell below the 1/50 floor"
        );
        assert!(
            top1 < 0.15,
            "ceiling {top1} outside the estimator noise band"
        );
        for row in &report.users {
            assert_eq!(row.m, 50);
        }
    }

    #[test]
    fn no_users_meeting_threshold_is_an_error() {
        let log = log_from_sequences(&[("u", vec!["a", "b"])]);
        let config = AnalyzeConfig {
            min_length: 50,
            ..AnalyzeConfig::default()
        };
        assert!(matches!(
            analyze_log(&log, &config, None),
            Err(AnalyzeError::NoUsableUsers(50))
        ));
    }
}
