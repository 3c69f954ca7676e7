//! Bias calibration of the predictability bound.
//!
//! The bound inherits bias from the entropy estimator: on generated
//! sequences of dialed predictability the solved ceiling overshoots the
//! dial, badly at rank 1 and mildly at rank 10. Sweeping the generator
//! across a `(p, xi)` grid and recording the relative deviation
//! `(estimate - truth) / truth` per rank yields a lookup table; real-data
//! estimates are then corrected by `pi1 / (1 + deviation)`.
//!
//! The reference "truth" per cell is configurable: the nominal coupled-head
//! value `c_1 p` the sequence was dialed to (the default — a dialed sweep is
//! naturally measured against its dial, and the dial is what a corrected
//! real-data estimate approximates), or the generator's exact ground
//! truth. The default generator is the first-order construction; its
//! slot structure is what produces the large rank-1 deviations the table
//! exists to remove.
//!
//! Cells whose generator head mass `Σ c_i p` would reach 1 are marked
//! infeasible, as are ranks whose coupled scaling cannot represent the
//! cell's truth (`truth ≥ (1 - margin) / Σ c_i`, margin because the bound
//! saturates at the representability edge and the deviation stops measuring
//! estimator bias there); both carry `NaN` in the persisted file.

use rayon::prelude::*;
use thiserror::Error;

use crate::entropy::lz_entropy_rate;
use crate::fano::{BoundResult, FanoProblem};
use crate::popularity::zipf_c_vector;
use crate::synth::{self, GeneratorMethod, GeneratorSpec};

/// File format version written by [`CalibrationTable::to_tsv`].
pub const FORMAT_VERSION: u32 = 1;

/// Cells with deviation below this fail table validation at build time when
/// the build length is at least 2^15: the bound is supposed to stay above
/// the truth up to estimator noise.
pub const NEGATIVE_DEVIATION_LIMIT: f64 = -0.05;

/// A rank is marked infeasible for a cell when the cell's truth exceeds
/// `(1 - margin) / Σ c_i`: within the margin the solver pins against its
/// upper boundary and the recorded deviation would reflect the boundary
/// distance, not estimator bias.
pub const REPRESENTABILITY_MARGIN: f64 = 0.07;

const VALIDATED_LENGTH: usize = 1 << 15;
const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration grid is empty")]
    EmptyGrid,
    #[error("generator setup failed: {0}")]
    Synth(#[from] synth::SynthError),
    #[error(
        "deviation at p={p}, xi={xi}, r={rank} is {deviation}, below {NEGATIVE_DEVIATION_LIMIT}"
    )]
    DeviationTooNegative {
        p: f64,
        xi: f64,
        rank: usize,
        deviation: f64,
    },
    #[error("deviation not monotone in rank at p={p}, xi={xi}, r={rank}")]
    NotMonotoneInRank { p: f64, xi: f64, rank: usize },
    #[error("no feasible cells for rank {0}")]
    NoFeasibleCells(usize),
    #[error("table parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("failed to read table: {0}")]
    Io(#[from] std::io::Error),
}

/// Which reference a cell's deviation is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationTruth {
    /// The coupled-head value `c_1 p` the generator was dialed to — the
    /// quantity a corrected real-data estimate approximates.
    Nominal,
    /// The generator's exact ground truth (stationary-oracle for the
    /// first-order chain, closed form for the second-order chain).
    Exact,
}

impl CalibrationTruth {
    pub fn name(&self) -> &'static str {
        match self {
            CalibrationTruth::Nominal => "nominal",
            CalibrationTruth::Exact => "exact",
        }
    }
}

/// Grid specification and generation parameters for a table build.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub p_values: Vec<f64>,
    pub xi_values: Vec<f64>,
    /// Deviations are recorded for ranks `1..=max_rank`.
    pub max_rank: usize,
    pub method: GeneratorMethod,
    pub truth: CalibrationTruth,
    pub states: usize,
    pub length: usize,
    pub seeds: u32,
    pub base_seed: u64,
}

impl Default for CalibrationConfig {
    /// The recommendation-domain grid: `p` from 0.01 to 0.30 and `xi` from
    /// 0.53 to 0.67, in steps of 0.01, ranks 1..=10, first-order sequences
    /// of length 2^15, 20 seeds, median aggregation, deviations against the
    /// nominal dial. Beyond p = 0.30 the generator sits against its own
    /// head-mass ceiling (`Σ c_i p < 1` caps p near 0.334 at these
    /// exponents), so larger dials cannot be built.
    fn default() -> Self {
        CalibrationConfig {
            p_values: grid(0.01, 0.30, 0.01),
            xi_values: grid(0.53, 0.67, 0.01),
            max_rank: 10,
            method: GeneratorMethod::FirstOrder,
            truth: CalibrationTruth::Nominal,
            states: 1000,
            length: 1 << 15,
            seeds: 20,
            base_seed: 42,
        }
    }
}

/// Inclusive float grid built by integer stepping, rounded to 1e-6 so the
/// values serialize cleanly.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step).round() as usize + 1;
    (0..count)
        .map(|i| round6(start + i as f64 * step))
        .collect()
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// One grid cell: the relative bias of the bound at `(p, xi, rank)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCell {
    pub p: f64,
    pub xi: f64,
    pub rank: usize,
    /// `(median estimate - truth) / truth`; `NaN` marks an infeasible cell.
    pub deviation: f64,
    pub n_seeds: u32,
    pub seq_length: usize,
}

impl CalibrationCell {
    pub fn is_feasible(&self) -> bool {
        !self.deviation.is_nan()
    }
}

/// Table metadata persisted in the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMetadata {
    pub version: u32,
    pub method: GeneratorMethod,
    pub truth: CalibrationTruth,
    pub states: usize,
    pub length: usize,
    pub seeds: u32,
    pub base_seed: u64,
    pub rng: String,
}

/// The persisted deviation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub metadata: TableMetadata,
    cells: Vec<CalibrationCell>,
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub deviation: f64,
    /// The cell that supplied the deviation.
    pub p_key: f64,
    pub xi_key: f64,
    pub rank: usize,
    /// The query fell outside the grid and was clamped to a boundary cell.
    pub out_of_grid: bool,
}

/// A bound with the calibration correction applied; the uncorrected values
/// stay available.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedBound {
    pub original: BoundResult,
    pub pi1: f64,
    pub topn: Vec<f64>,
    pub deviation: f64,
    pub out_of_grid: bool,
}

/// Builds the deviation table by sweeping the generator across the grid.
///
/// Per cell: `seeds` sequences are generated, each is run through the full
/// estimate pipeline (entropy rate, ratios `i^-xi`, bound solve per rank),
/// and the median Top-1 estimate is compared against the generator's ground
/// truth. Infeasible cells are marked, not fatal. The finished table is
/// validated: deviations must be monotone non-increasing in rank, and at
/// build lengths of 2^15 or more no feasible deviation may fall below
/// [`NEGATIVE_DEVIATION_LIMIT`].
pub fn build_table(config: &CalibrationConfig) -> Result<CalibrationTable, CalibrationError> {
    if config.p_values.is_empty() || config.xi_values.is_empty() || config.max_rank == 0 {
        return Err(CalibrationError::EmptyGrid);
    }

    let grid_points: Vec<(usize, f64, usize, f64)> = config
        .p_values
        .iter()
        .enumerate()
        .flat_map(|(pi, &p)| {
            config
                .xi_values
                .iter()
                .enumerate()
                .map(move |(xij, &xi)| (pi, p, xij, xi))
        })
        .collect();

    let per_point: Result<Vec<Vec<CalibrationCell>>, CalibrationError> = grid_points
        .par_iter()
        .map(|&(p_idx, p, xi_idx, xi)| build_point(config, p_idx, p, xi_idx, xi))
        .collect();

    let mut cells: Vec<CalibrationCell> = per_point?.into_iter().flatten().collect();
    cells.sort_by(|a, b| {
        a.p.partial_cmp(&b.p)
            .unwrap()
            .then(a.xi.partial_cmp(&b.xi).unwrap())
            .then(a.rank.cmp(&b.rank))
    });

    let table = CalibrationTable {
        metadata: TableMetadata {
            version: FORMAT_VERSION,
            method: config.method,
            truth: config.truth,
            states: config.states,
            length: config.length,
            seeds: config.seeds,
            base_seed: config.base_seed,
            rng: synth::RNG_ALGORITHM.to_string(),
        },
        cells,
    };
    table.validate(config.length >= VALIDATED_LENGTH)?;
    Ok(table)
}

/// All cells (every rank) for one `(p, xi)` grid point.
fn build_point(
    config: &CalibrationConfig,
    p_idx: usize,
    p: f64,
    xi_idx: usize,
    xi: f64,
) -> Result<Vec<CalibrationCell>, CalibrationError> {
    let infeasible = |rank: usize| CalibrationCell {
        p,
        xi,
        rank,
        deviation: f64::NAN,
        n_seeds: 0,
        seq_length: config.length,
    };

    let gen_c: Vec<f64> = zipf_c_vector(xi, synth::MAX_HEAD_RANKS);
    let head_mass: f64 = gen_c.iter().map(|c| c * p).sum();
    if head_mass >= 1.0 {
        // generator cannot realize this cell
        return Ok((1..=config.max_rank).map(infeasible).collect());
    }

    let point_index = (p_idx * 1009 + xi_idx) as u64;
    let mut estimates: Vec<(f64, usize)> = Vec::with_capacity(config.seeds as usize);
    let mut truth = 0.0;
    for s in 0..config.seeds {
        let spec = GeneratorSpec::new(
            config.method,
            config.states,
            p,
            gen_c.clone(),
            config.length,
            config
                .base_seed
                .wrapping_add(point_index * config.seeds as u64 + s as u64),
        )?;
        if s == 0 {
            truth = match config.truth {
                CalibrationTruth::Nominal => p,
                CalibrationTruth::Exact => synth::true_predictability(&spec)?.top_pi[0],
            };
        }
        let seq = synth::generate(&spec)?;
        let est = lz_entropy_rate(&seq).expect("generated sequences have length >= 2");
        estimates.push((est.bits_per_symbol, est.vocab_size));
    }

    let mut cells = Vec::with_capacity(config.max_rank);
    for rank in 1..=config.max_rank {
        let solve_c = zipf_c_vector(xi, rank);
        let ceiling = 1.0 / solve_c.iter().sum::<f64>();
        let representable = truth < ceiling * (1.0 - REPRESENTABILITY_MARGIN);
        if !representable {
            cells.push(infeasible(rank));
            continue;
        }
        let mut pi1s: Vec<f64> = estimates
            .iter()
            .map(|&(bits, vocab)| {
                FanoProblem::new(bits, vocab, solve_c.clone())
                    .expect("valid problem from pipeline values")
                    .solve()
                    .pi1
            })
            .collect();
        pi1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = median_of_sorted(&pi1s);
        cells.push(CalibrationCell {
            p,
            xi,
            rank,
            deviation: (median - truth) / truth,
            n_seeds: config.seeds,
            seq_length: config.length,
        });
    }
    Ok(cells)
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl CalibrationTable {
    pub fn cells(&self) -> &[CalibrationCell] {
        &self.cells
    }

    pub fn cell(&self, p: f64, xi: f64, rank: usize) -> Option<&CalibrationCell> {
        self.cells
            .iter()
            .find(|c| c.p == p && c.xi == xi && c.rank == rank)
    }

    /// Checks the structural invariants: deviations monotone non-increasing
    /// in rank per `(p, xi)`, and (when `strict_negative`) no feasible
    /// deviation below [`NEGATIVE_DEVIATION_LIMIT`].
    pub fn validate(&self, strict_negative: bool) -> Result<(), CalibrationError> {
        let mut prev: Option<(f64, f64, usize, f64)> = None;
        for cell in &self.cells {
            if !cell.is_feasible() {
                continue;
            }
            if strict_negative && cell.deviation < NEGATIVE_DEVIATION_LIMIT {
                return Err(CalibrationError::DeviationTooNegative {
                    p: cell.p,
                    xi: cell.xi,
                    rank: cell.rank,
                    deviation: cell.deviation,
                });
            }
            if let Some((p, xi, _rank, dev)) = prev {
                if p == cell.p && xi == cell.xi && cell.deviation > dev + MONOTONE_TOL {
                    return Err(CalibrationError::NotMonotoneInRank {
                        p: cell.p,
                        xi: cell.xi,
                        rank: cell.rank,
                    });
                }
            }
            prev = Some((cell.p, cell.xi, cell.rank, cell.deviation));
        }
        Ok(())
    }

    /// A short identifier derived from metadata and cells, for report
    /// provenance.
    pub fn fingerprint(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        };
        mix(self.metadata.method.name().as_bytes());
        mix(&self.metadata.length.to_le_bytes());
        mix(&self.metadata.seeds.to_le_bytes());
        mix(&self.metadata.base_seed.to_le_bytes());
        for cell in &self.cells {
            mix(&cell.p.to_bits().to_le_bytes());
            mix(&cell.xi.to_bits().to_le_bytes());
            mix(&cell.rank.to_le_bytes());
            mix(&cell.deviation.to_bits().to_le_bytes());
        }
        format!("{hash:016x}")
    }

    /// Nearest-cell deviation lookup with one fixed-point refinement.
    ///
    /// The first key is the raw estimate; the deviation it finds re-keys a
    /// corrected guess `estimate / (1 + d)` whose cell supplies the final
    /// deviation. Keys outside the grid clamp to the nearest boundary cell
    /// and set the warning flag.
    pub fn lookup(&self, estimate: f64, xi: f64, rank: usize) -> Result<Lookup, CalibrationError> {
        let first = self.nearest_cell(estimate, xi, rank)?;
        let refined_key = estimate / (1.0 + first.0.deviation);
        let (cell, clamped) = self.nearest_cell(refined_key, xi, rank)?;
        Ok(Lookup {
            deviation: cell.deviation,
            p_key: cell.p,
            xi_key: cell.xi,
            rank,
            out_of_grid: first.1 || clamped,
        })
    }

    fn nearest_cell(
        &self,
        p_key: f64,
        xi: f64,
        rank: usize,
    ) -> Result<(&CalibrationCell, bool), CalibrationError> {
        let feasible: Vec<&CalibrationCell> = self
            .cells
            .iter()
            .filter(|c| c.rank == rank && c.is_feasible())
            .collect();
        if feasible.is_empty() {
            return Err(CalibrationError::NoFeasibleCells(rank));
        }
        let xi_key = nearest_value(feasible.iter().map(|c| c.xi), xi);
        let on_xi: Vec<&&CalibrationCell> = feasible.iter().filter(|c| c.xi == xi_key).collect();
        let p_near = nearest_value(on_xi.iter().map(|c| c.p), p_key);
        let cell = on_xi
            .iter()
            .find(|c| c.p == p_near)
            .expect("nearest value came from this set");

        let (p_min, p_max) = min_max(on_xi.iter().map(|c| c.p));
        let (xi_min, xi_max) = min_max(feasible.iter().map(|c| c.xi));
        let out = p_key < p_min - 1e-12
            || p_key > p_max + 1e-12
            || xi < xi_min - 1e-12
            || xi > xi_max + 1e-12;
        Ok((cell, out))
    }

    /// Writes the table to a file in the versioned tab-separated format.
    pub fn save(&self, path: &std::path::Path) -> Result<(), CalibrationError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Reads a table previously written by [`Self::save`].
    pub fn load(path: &std::path::Path) -> Result<CalibrationTable, CalibrationError> {
        let text = std::fs::read_to_string(path)?;
        CalibrationTable::from_tsv(&text)
    }

    /// Serializes to the versioned tab-separated format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# calibration-table v{}\n", self.metadata.version));
        out.push_str(&format!(
            "# method={} truth={} states={} length={} seeds={} base_seed={} rng={}\n",
            self.metadata.method.name(),
            self.metadata.truth.name(),
            self.metadata.states,
            self.metadata.length,
            self.metadata.seeds,
            self.metadata.base_seed,
            self.metadata.rng,
        ));
        out.push_str("# columns: p\txi\tr\tdeviation\tn_seeds\n");
        for cell in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                cell.p, cell.xi, cell.rank, cell.deviation, cell.n_seeds
            ));
        }
        out
    }

    /// Parses a table previously written by [`Self::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<CalibrationTable, CalibrationError> {
        let mut version = None;
        let mut method = GeneratorMethod::FirstOrder;
        let mut truth = CalibrationTruth::Nominal;
        let mut states = 0usize;
        let mut length = 0usize;
        let mut seeds = 0u32;
        let mut base_seed = 0u64;
        let mut rng = String::new();
        let mut cells = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let parse_err = |reason: &str| CalibrationError::Parse {
                line: line_no,
                reason: reason.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("calibration-table v") {
                    version = Some(
                        v.trim()
                            .parse::<u32>()
                            .map_err(|_| parse_err("bad version"))?,
                    );
                } else if rest.starts_with("method=") {
                    for kv in rest.split_whitespace() {
                        let (key, value) = kv
                            .split_once('=')
                            .ok_or_else(|| parse_err("bad metadata"))?;
                        match key {
                            "method" => {
                                method = match value {
                                    "first-order" => GeneratorMethod::FirstOrder,
                                    "second-order" => GeneratorMethod::SecondOrder,
                                    _ => return Err(parse_err("unknown method")),
                                }
                            }
                            "truth" => {
                                truth = match value {
                                    "nominal" => CalibrationTruth::Nominal,
                                    "exact" => CalibrationTruth::Exact,
                                    _ => return Err(parse_err("unknown truth source")),
                                }
                            }
                            "states" => {
                                states = value.parse().map_err(|_| parse_err("bad states"))?
                            }
                            "length" => {
                                length = value.parse().map_err(|_| parse_err("bad length"))?
                            }
                            "seeds" => seeds = value.parse().map_err(|_| parse_err("bad seeds"))?,
                            "base_seed" => {
                                base_seed = value.parse().map_err(|_| parse_err("bad base_seed"))?
                            }
                            "rng" => rng = value.to_string(),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(parse_err("expected 5 tab-separated fields"));
            }
            let p: f64 = fields[0].parse().map_err(|_| parse_err("bad p"))?;
            let xi: f64 = fields[1].parse().map_err(|_| parse_err("bad xi"))?;
            let rank: usize = fields[2].parse().map_err(|_| parse_err("bad r"))?;
            let deviation: f64 = fields[3].parse().map_err(|_| parse_err("bad deviation"))?;
            let n_seeds: u32 = fields[4].parse().map_err(|_| parse_err("bad n_seeds"))?;
            cells.push(CalibrationCell {
                p,
                xi,
                rank,
                deviation,
                n_seeds,
                seq_length: length,
            });
        }

        let version = version.ok_or(CalibrationError::Parse {
            line: 1,
            reason: "missing version header".to_string(),
        })?;
        Ok(CalibrationTable {
            metadata: TableMetadata {
                version,
                method,
                truth,
                states,
                length,
                seeds,
                base_seed,
                rng,
            },
            cells,
        })
    }
}

/// Applies a table correction to a solved bound.
///
/// `pi1` is divided by `1 + deviation` and the cumulative Top-k vector is
/// recomputed from the corrected value with the same coupling ratios.
pub fn correct(
    bound: &BoundResult,
    table: &CalibrationTable,
    xi: f64,
) -> Result<CorrectedBound, CalibrationError> {
    let lookup = table.lookup(bound.pi1, xi, bound.rank())?;
    let pi1 = bound.pi1 / (1.0 + lookup.deviation);
    let topn = bound.topn_for(pi1);
    Ok(CorrectedBound {
        original: bound.clone(),
        pi1,
        topn,
        deviation: lookup.deviation,
        out_of_grid: lookup.out_of_grid,
    })
}

fn nearest_value(values: impl Iterator<Item = f64>, key: f64) -> f64 {
    let mut best = f64::NAN;
    let mut best_dist = f64::INFINITY;
    for v in values {
        let dist = (v - key).abs();
        if dist < best_dist || (dist == best_dist && v < best) {
            best = v;
            best_dist = dist;
        }
    }
    best
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}
