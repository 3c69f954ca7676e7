//! Population-level item popularity: rank-frequency profile, power-law
//! exponent fit and the coupling ratios `c_i = f_i / f_1`.
//!
//! The ratios couple the probabilities of the `r` most likely behaviors in
//! the bound equation (`p_i = c_i p_1`); the fitted exponent is only used as
//! a calibration-table key, never to synthesize the ratios from real data.

use std::collections::HashMap;

use thiserror::Error;

use crate::events::EventLog;

/// Default number of coupled ranks. Beyond ten, the ratio to the top item
/// collapses and the coupling becomes too noisy to be useful.
pub const DEFAULT_RANK: usize = 10;

/// Default number of top ranks used for the exponent fit.
pub const DEFAULT_FIT_MAX_RANK: usize = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PopularityError {
    #[error("event log is empty")]
    EmptyLog,
    #[error("need at least 3 ranks with positive frequency, found {0}")]
    NotEnoughRanks(usize),
    #[error("max_rank must be at least 3, got {0}")]
    InvalidMaxRank(usize),
    #[error("rank {rank} exceeds the {available} available ranks")]
    RankOutOfRange { rank: usize, available: usize },
}

/// Rank-ordered item interaction counts, plus the fitted exponent and
/// coupling ratios once computed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopularityProfile {
    /// Interaction counts, descending.
    pub freqs: Vec<u64>,
    /// Fitted rank-frequency exponent, when a fit has been attached.
    pub xi: Option<f64>,
    /// Coupling ratios `c_1..c_r`, when attached.
    pub c: Vec<f64>,
}

/// Least-squares fit of `f_k ~ k^-xi` on the log-log rank-frequency line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfFit {
    pub xi: f64,
    /// Set when the fitted slope runs the wrong way (frequencies increasing
    /// with rank); the value is still returned unclamped.
    pub negative: bool,
}

/// Counts interactions per item and sorts them descending.
///
/// Ties break by first appearance in the log, which coincides with the
/// global dictionary code order.
pub fn rank_frequencies(log: &EventLog) -> Result<PopularityProfile, PopularityError> {
    if log.records.is_empty() {
        return Err(PopularityError::EmptyLog);
    }
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    for (idx, rec) in log.records.iter().enumerate() {
        let entry = counts.entry(rec.item_id.as_str()).or_insert((0, idx));
        entry.0 += 1;
    }
    let mut ranked: Vec<(u64, usize)> = counts.into_values().collect();
    ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(PopularityProfile {
        freqs: ranked.into_iter().map(|(count, _)| count).collect(),
        xi: None,
        c: Vec::new(),
    })
}

/// Fits the exponent of `f_k ~ k^-xi` by least squares over
/// `(log k, log f_k)` for `k = 1..min(max_rank, available positive ranks)`.
pub fn fit_zipf(profile: &PopularityProfile, max_rank: usize) -> Result<ZipfFit, PopularityError> {
    if max_rank < 3 {
        return Err(PopularityError::InvalidMaxRank(max_rank));
    }
    // frequencies are sorted descending, so positive counts form a prefix
    let usable = profile
        .freqs
        .iter()
        .take(max_rank)
        .take_while(|&&f| f > 0)
        .count();
    if usable < 3 {
        return Err(PopularityError::NotEnoughRanks(usable));
    }

    let xs: Vec<f64> = (1..=usable).map(|k| (k as f64).ln()).collect();
    let ys: Vec<f64> = profile.freqs[..usable]
        .iter()
        .map(|&f| (f as f64).ln())
        .collect();
    let x_mean = xs.iter().sum::<f64>() / usable as f64;
    let y_mean = ys.iter().sum::<f64>() / usable as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - x_mean) * (y - y_mean);
        den += (x - x_mean) * (x - x_mean);
    }
    let slope = num / den;
    let xi = -slope;
    Ok(ZipfFit {
        xi,
        negative: xi < 0.0,
    })
}

/// Extracts the coupling ratios `c_i = f_i / f_1` for the top `r` ranks.
pub fn c_ratios(profile: &PopularityProfile, r: usize) -> Result<Vec<f64>, PopularityError> {
    if r < 1 || r > profile.freqs.len() {
        return Err(PopularityError::RankOutOfRange {
            rank: r,
            available: profile.freqs.len(),
        });
    }
    let top = profile.freqs[0] as f64;
    Ok(profile.freqs[..r].iter().map(|&f| f as f64 / top).collect())
}

/// Synthesizes coupling ratios from an exponent: `c_i = i^-xi`.
///
/// Used when a caller supplies `xi` instead of observed frequencies, and by
/// the calibration sweep where the exponent is a grid parameter.
pub fn zipf_c_vector(xi: f64, r: usize) -> Vec<f64> {
    (1..=r).map(|i| (i as f64).powf(-xi)).collect()
}
