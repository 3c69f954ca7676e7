//! Ingestion of raw interaction logs and per-user symbol sequences.
//!
//! Input is delimited text with a user column, an item column and optionally
//! a timestamp column; when no timestamp is available the input order serves
//! as the order key. Items are encoded through a single global dictionary so
//! that codes are comparable across users — population-level popularity
//! ratios depend on that.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input stream: {0}")]
    Stream(#[from] csv::Error),
    #[error("no valid records in input ({malformed} malformed rows)")]
    EmptyLog { malformed: u64 },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("column index {index} out of range, header has {width} fields")]
    ColumnOutOfRange { index: usize, width: usize },
    #[error("named column mapping {0:?} requires a header row")]
    NamedColumnWithoutHeader(String),
    #[error("min_length must be at least 1")]
    InvalidMinLength,
}

/// A column reference, either positional or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSpec {
    Index(usize),
    Name(String),
}

impl ColumnSpec {
    /// Parses `"2"` as an index and anything else as a header name.
    pub fn parse(token: &str) -> ColumnSpec {
        match token.trim().parse::<usize>() {
            Ok(idx) => ColumnSpec::Index(idx),
            Err(_) => ColumnSpec::Name(token.trim().to_string()),
        }
    }
}

/// Layout of the delimited input.
#[derive(Debug, Clone)]
pub struct ParseConfig {
    pub delimiter: u8,
    pub has_header: bool,
    pub user_col: ColumnSpec,
    pub item_col: ColumnSpec,
    /// `None` means the source only provides order; the running row index is
    /// used as a monotone timestamp.
    pub time_col: Option<ColumnSpec>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            delimiter: b',',
            has_header: false,
            user_col: ColumnSpec::Index(0),
            item_col: ColumnSpec::Index(1),
            time_col: Some(ColumnSpec::Index(2)),
        }
    }
}

/// A single user/item interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub user_id: String,
    pub item_id: String,
    /// Epoch units, or the input row index when the source only provides order.
    pub timestamp: i64,
}

/// All valid interactions from one source, with distinct-entity counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
    pub user_count: usize,
    pub item_count: usize,
}

impl EventLog {
    pub fn from_records(records: Vec<EventRecord>) -> EventLog {
        let mut users = HashSet::new();
        let mut items = HashSet::new();
        for rec in &records {
            users.insert(rec.user_id.as_str());
            items.insert(rec.item_id.as_str());
        }
        let (user_count, item_count) = (users.len(), items.len());
        EventLog {
            records,
            user_count,
            item_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parse outcome: the log plus the bookkeeping needed for conservation checks.
#[derive(Debug)]
pub struct ParsedLog {
    pub log: EventLog,
    /// Rows rejected for missing fields, empty ids or unparseable timestamps.
    pub malformed: u64,
    /// Data rows seen, header excluded.
    pub rows_seen: u64,
}

/// Reads a delimited stream into an [`EventLog`].
///
/// Rows that lack a mapped field, carry empty user/item ids or a
/// non-integer timestamp are counted as malformed and skipped. An input
/// with zero valid rows is an error.
pub fn parse_events<R: Read>(reader: R, config: &ParseConfig) -> Result<ParsedLog, EventError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .has_headers(config.has_header)
        .flexible(true)
        .from_reader(reader);

    let columns = resolve_columns(&mut rdr, config)?;

    let mut records = Vec::new();
    let mut malformed = 0u64;
    let mut rows_seen = 0u64;
    let mut row = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut row)? {
        rows_seen += 1;
        match extract_record(&row, &columns, rows_seen - 1) {
            Some(rec) => records.push(rec),
            None => malformed += 1,
        }
    }

    if records.is_empty() {
        return Err(EventError::EmptyLog { malformed });
    }
    Ok(ParsedLog {
        log: EventLog::from_records(records),
        malformed,
        rows_seen,
    })
}

struct ColumnIndices {
    user: usize,
    item: usize,
    time: Option<usize>,
}

fn resolve_columns<R: Read>(
    rdr: &mut csv::Reader<R>,
    config: &ParseConfig,
) -> Result<ColumnIndices, EventError> {
    let header: Option<Vec<String>> = if config.has_header {
        let headers = rdr.headers()?.clone();
        Some(headers.iter().map(|h| h.trim().to_string()).collect())
    } else {
        None
    };

    let resolve = |spec: &ColumnSpec| -> Result<usize, EventError> {
        match spec {
            ColumnSpec::Index(idx) => {
                if let Some(names) = &header {
                    if *idx >= names.len() {
                        return Err(EventError::ColumnOutOfRange {
                            index: *idx,
                            width: names.len(),
                        });
                    }
                }
                Ok(*idx)
            }
            ColumnSpec::Name(name) => {
                let names = header
                    .as_ref()
                    .ok_or_else(|| EventError::NamedColumnWithoutHeader(name.clone()))?;
                names
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| EventError::MissingColumn(name.clone()))
            }
        }
    };

    Ok(ColumnIndices {
        user: resolve(&config.user_col)?,
        item: resolve(&config.item_col)?,
        time: config.time_col.as_ref().map(&resolve).transpose()?,
    })
}

fn extract_record(
    row: &csv::ByteRecord,
    cols: &ColumnIndices,
    row_idx: u64,
) -> Option<EventRecord> {
    let field = |idx: usize| -> Option<&str> {
        let raw = row.get(idx)?;
        let text = std::str::from_utf8(raw).ok()?.trim();
        if text.is_empty() {
            None
        } else {
            Some(text)
        }
    };

    let user_id = field(cols.user)?.to_string();
    let item_id = field(cols.item)?.to_string();
    let timestamp = match cols.time {
        Some(idx) => field(idx)?.parse::<i64>().ok()?,
        None => row_idx as i64,
    };
    Some(EventRecord {
        user_id,
        item_id,
        timestamp,
    })
}

/// Global item → integer code dictionary, frozen before sequences are built.
///
/// Codes are assigned in first-appearance order over the log, which makes
/// the assignment a pure function of the input bytes.
#[derive(Debug, Clone, Default)]
pub struct ItemDictionary {
    codes: HashMap<String, u32>,
    items: Vec<String>,
}

impl ItemDictionary {
    fn intern(&mut self, item: &str) -> u32 {
        if let Some(&code) = self.codes.get(item) {
            return code;
        }
        let code = self.items.len() as u32;
        self.codes.insert(item.to_string(), code);
        self.items.push(item.to_string());
        code
    }

    pub fn code(&self, item: &str) -> Option<u32> {
        self.codes.get(item).copied()
    }

    pub fn item(&self, code: u32) -> Option<&str> {
        self.items.get(code as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One user's time-ordered, integer-encoded behavior sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    symbols: Vec<u32>,
    vocab_size: usize,
}

impl SymbolSequence {
    /// Wraps a code sequence, computing its distinct-symbol count.
    pub fn new(symbols: Vec<u32>) -> SymbolSequence {
        let vocab_size = symbols.iter().collect::<HashSet<_>>().len();
        SymbolSequence {
            symbols,
            vocab_size,
        }
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of distinct symbols appearing in this sequence (the per-user
    /// candidate-set size M).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Maps the codes back to item ids; `None` if any code is unknown.
    pub fn decode<'a>(&self, dict: &'a ItemDictionary) -> Option<Vec<&'a str>> {
        self.symbols.iter().map(|&c| dict.item(c)).collect()
    }
}

/// Result of [`build_sequences`].
#[derive(Debug)]
pub struct SequenceSet {
    /// Per-user sequences, keyed and iterated in user-id order.
    pub sequences: BTreeMap<String, SymbolSequence>,
    pub dictionary: ItemDictionary,
    /// Users dropped for having fewer than `min_length` events.
    pub excluded_users: usize,
    /// Events belonging to the dropped users.
    pub excluded_events: u64,
}

/// Builds per-user sequences sorted by timestamp (input order breaks ties).
///
/// The item dictionary is global and frozen from the full log before any
/// user is processed. Users with fewer than `min_length` events are excluded
/// and counted. An empty log yields an empty map, not an error.
pub fn build_sequences(log: &EventLog, min_length: usize) -> Result<SequenceSet, EventError> {
    if min_length == 0 {
        return Err(EventError::InvalidMinLength);
    }

    let mut dictionary = ItemDictionary::default();
    for rec in &log.records {
        dictionary.intern(&rec.item_id);
    }

    let mut per_user: HashMap<&str, Vec<(i64, usize, u32)>> = HashMap::new();
    for (idx, rec) in log.records.iter().enumerate() {
        let code = dictionary
            .code(&rec.item_id)
            .expect("dictionary covers every log item");
        per_user
            .entry(rec.user_id.as_str())
            .or_default()
            .push((rec.timestamp, idx, code));
    }

    let mut sequences = BTreeMap::new();
    let mut excluded_users = 0usize;
    let mut excluded_events = 0u64;
    for (user, mut events) in per_user {
        if events.len() < min_length {
            excluded_users += 1;
            excluded_events += events.len() as u64;
            continue;
        }
        // (timestamp, input index) keys are unique, so unstable sort is deterministic.
        events.sort_unstable_by_key(|&(ts, idx, _)| (ts, idx));
        let symbols = events.into_iter().map(|(_, _, code)| code).collect();
        sequences.insert(user.to_string(), SymbolSequence::new(symbols));
    }

    Ok(SequenceSet {
        sequences,
        dictionary,
        excluded_users,
        excluded_events,
    })
}
