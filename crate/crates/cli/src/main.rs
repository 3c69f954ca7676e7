//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
//! error.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use predictability::calibration::{self, CalibrationConfig, CalibrationTable, CalibrationTruth};
use predictability::entropy::lz_entropy_rate;
use predictability::events::{self, ColumnSpec, ParseConfig};
use predictability::fano::FanoProblem;
use predictability::popularity;
use predictability::synth::{self, GeneratorMethod, GeneratorSpec, RemainderSelfTransition};
use predictability_cli::output::{render, sig6};
use predictability_cli::pipeline::{analyze_log, AnalyzeConfig, AnalyzeError};

#[derive(Parser)]
#[command(
    name = "predictability",
    version,
    about = "Top-N predictability ceilings from user behavior logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: parse a log, bound every user, aggregate a report.
    Analyze(AnalyzeArgs),
    /// Per-user entropy-rate estimates (user, n, M, S).
    Entropy(EntropyArgs),
    /// Population rank-frequency profile, fitted exponent and ratios.
    Popularity(PopularityArgs),
    /// Solve one bound instance from entropy, candidate count and ratios.
    Solve(SolveArgs),
    /// Generate a synthetic sequence with known predictability.
    Generate(GenerateArgs),
    /// Build a bias-calibration table over a (p, xi) grid.
    Calibrate(CalibrateArgs),
    /// Correct an estimate through a calibration table.
    Correct(CorrectArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input log file.
    #[arg(long)]
    input: PathBuf,
    /// Optional key=value file supplying any of format, delimiter, header,
    /// columns, min_length; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input format; sets the delimiter unless --delimiter is given.
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    /// Single-character field delimiter overriding the format default.
    #[arg(long)]
    delimiter: Option<char>,
    /// Treat the first row as a header.
    #[arg(long)]
    header: bool,
    /// user,item[,time] columns, each an index or header name.
    #[arg(long)]
    columns: Option<String>,
    /// Exclude users with fewer events than this.
    #[arg(long)]
    min_length: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Csv,
    Tsv,
}

/// Input settings read from a --config file.
#[derive(Default)]
struct FileSettings {
    format: Option<InputFormat>,
    delimiter: Option<char>,
    header: Option<bool>,
    columns: Option<String>,
    min_length: Option<usize>,
}

impl FileSettings {
    fn read(path: &Path) -> Result<FileSettings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut settings = FileSettings::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| {
                CliError::config(format!("{} line {}: {what}", path.display(), idx + 1))
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let value = value.trim();
            match key.trim() {
                "format" => {
                    settings.format = Some(match value {
                        "csv" => InputFormat::Csv,
                        "tsv" => InputFormat::Tsv,
                        _ => return Err(bad("format must be csv or tsv")),
                    })
                }
                "delimiter" => {
                    let mut chars = value.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => settings.delimiter = Some(c),
                        _ => return Err(bad("delimiter must be one character")),
                    }
                }
                "header" => {
                    settings.header = Some(
                        value
                            .parse()
                            .map_err(|_| bad("header must be true or false"))?,
                    )
                }
                "columns" => settings.columns = Some(value.to_string()),
                "min_length" => {
                    settings.min_length = Some(
                        value
                            .parse()
                            .map_err(|_| bad("min_length must be an integer"))?,
                    )
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        Ok(settings)
    }
}

impl InputArgs {
    /// Resolves flags over config-file values over defaults.
    fn resolve(&self) -> Result<(ParseConfig, usize), CliError> {
        let file = match &self.config {
            Some(path) => FileSettings::read(path)?,
            None => FileSettings::default(),
        };
        let format = self.format.or(file.format).unwrap_or(InputFormat::Csv);
        let delimiter = match self.delimiter.or(file.delimiter) {
            Some(c) => {
                if !c.is_ascii() {
                    return Err(CliError::config(
                        "delimiter must be a single ASCII character",
                    ));
                }
                c as u8
            }
            None => match format {
                InputFormat::Csv => b',',
                InputFormat::Tsv => b'\t',
            },
        };
        let header = self.header || file.header.unwrap_or(false);
        let columns = self
            .columns
            .clone()
            .or(file.columns)
            .unwrap_or_else(|| "0,1,2".to_string());
        let min_length = self.min_length.or(file.min_length).unwrap_or(50);

        let tokens: Vec<&str> = columns.split(',').collect();
        if tokens.len() != 2 && tokens.len() != 3 {
            return Err(CliError::config(
                "--columns expects user,item or user,item,time",
            ));
        }
        let parse = ParseConfig {
            delimiter,
            has_header: header,
            user_col: ColumnSpec::parse(tokens[0]),
            item_col: ColumnSpec::parse(tokens[1]),
            time_col: tokens.get(2).map(|t| ColumnSpec::parse(t)),
        };
        Ok((parse, min_length))
    }

    fn open(&self) -> Result<BufReader<File>, CliError> {
        File::open(&self.input)
            .map(BufReader::new)
            .map_err(|e| CliError::data(format!("cannot open {}: {e}", self.input.display())))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of coupled ranks r.
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Synthesize ratios as i^-xi instead of measuring them.
    #[arg(long)]
    xi_override: Option<f64>,
    /// Top ranks used for the exponent fit.
    #[arg(long, default_value_t = 1000)]
    fit_max_rank: usize,
    /// Use the global item count as every user's M.
    #[arg(long)]
    global_m: bool,
    /// Weight the aggregate by event counts instead of uniformly.
    #[arg(long)]
    event_weighted: bool,
    /// Calibration table to correct with.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit JSON instead of tab-separated text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct PopularityArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Ratios to print.
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Top ranks used for the exponent fit.
    #[arg(long, default_value_t = 1000)]
    fit_max_rank: usize,
}

#[derive(Args)]
struct SolveArgs {
    /// Entropy rate S in bits per symbol.
    #[arg(long)]
    entropy: f64,
    /// Candidate-set size M.
    #[arg(long)]
    candidates: usize,
    /// Number of coupled ranks (used with --xi).
    #[arg(long, default_value_t = 10)]
    rank: usize,
    /// Explicit comma-separated ratios c_1..c_r (overrides --xi).
    #[arg(long)]
    c: Option<String>,
    /// Synthesize ratios as i^-xi.
    #[arg(long)]
    xi: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator construction.
    #[arg(long, value_enum, default_value_t = MethodArg::SecondOrder)]
    method: MethodArg,
    /// State count M.
    #[arg(long, default_value_t = 1000)]
    states: usize,
    /// Base transition probability p.
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    /// Ratio exponent for c_i = i^-xi (ignored when --c is given).
    #[arg(long, default_value_t = 0.6)]
    xi: f64,
    /// Explicit comma-separated ratios c_1..c_5.
    #[arg(long)]
    c: Option<String>,
    /// Sequence length.
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the remainder slot's self-transition on the same concrete state.
    #[arg(long)]
    remainder_same_state: bool,
    /// Output file (one integer code per line); metadata goes to
    /// `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    FirstOrder,
    SecondOrder,
}

impl From<MethodArg> for GeneratorMethod {
    fn from(m: MethodArg) -> GeneratorMethod {
        match m {
            MethodArg::FirstOrder => GeneratorMethod::FirstOrder,
            MethodArg::SecondOrder => GeneratorMethod::SecondOrder,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 0.01)]
    p_min: f64,
    #[arg(long, default_value_t = 0.30)]
    p_max: f64,
    #[arg(long, default_value_t = 0.01)]
    p_step: f64,
    #[arg(long, default_value_t = 0.53)]
    xi_min: f64,
    #[arg(long, default_value_t = 0.67)]
    xi_max: f64,
    #[arg(long, default_value_t = 0.01)]
    xi_step: f64,
    #[arg(long, default_value_t = 10)]
    ranks: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::FirstOrder)]
    method: MethodArg,
    /// Reference the deviations are measured against.
    #[arg(long, value_enum, default_value_t = TruthArg::Nominal)]
    truth: TruthArg,
    #[arg(long, default_value_t = 1000)]
    states: usize,
    /// Generated sequence length per cell.
    #[arg(long, default_value_t = 32768)]
    length: usize,
    /// Sequences per cell; the median estimate is kept.
    #[arg(long, default_value_t = 20)]
    seeds: u32,
    #[arg(long, default_value_t = 42)]
    base_seed: u64,
    /// Table output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    /// The dialed coupled-head value c_1 * p.
    Nominal,
    /// The generator's exact ground truth.
    Exact,
}

impl From<TruthArg> for CalibrationTruth {
    fn from(t: TruthArg) -> CalibrationTruth {
        match t {
            TruthArg::Nominal => CalibrationTruth::Nominal,
            TruthArg::Exact => CalibrationTruth::Exact,
        }
    }
}

#[derive(Args)]
struct CorrectArgs {
    /// Calibration table path.
    #[arg(long)]
    table: PathBuf,
    /// Uncorrected Top-1 estimate.
    #[arg(long)]
    estimate: f64,
    /// Popularity exponent keying the lookup.
    #[arg(long)]
    xi: f64,
    /// Scaling rank the estimate was solved at.
    #[arg(long, default_value_t = 10)]
    rank: usize,
}

/// Error carrying the process exit code.
#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<events::EventError> for CliError {
    fn from(err: events::EventError) -> CliError {
        match err {
            events::EventError::MissingColumn(_)
            | events::EventError::ColumnOutOfRange { .. }
            | events::EventError::NamedColumnWithoutHeader(_)
            | events::EventError::InvalidMinLength => CliError::Config(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<AnalyzeError> for CliError {
    fn from(err: AnalyzeError) -> CliError {
        match err {
            AnalyzeError::Events(e) => e.into(),
            AnalyzeError::ZeroRank => CliError::Config(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Entropy(args) => cmd_entropy(args),
        Command::Popularity(args) => cmd_popularity(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Correct(args) => cmd_correct(args),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let (parse, min_length) = args.input.resolve()?;
    let table = args.table.as_deref().map(load_table).transpose()?;
    let config = AnalyzeConfig {
        min_length,
        rank: args.rank,
        xi_override: args.xi_override,
        fit_max_rank: args.fit_max_rank,
        global_m: args.global_m,
        event_weighted: args.event_weighted,
    };
    let parsed = events::parse_events(args.input.open()?, &parse)?;
    let mut report = analyze_log(&parsed.log, &config, table.as_ref())?;
    report.malformed_rows = parsed.malformed;
    let text = render(&report, args.json);
    write_output(args.out.as_deref(), &text)
}

fn cmd_entropy(args: EntropyArgs) -> Result<(), CliError> {
    let (parse, min_length) = args.input.resolve()?;
    let parsed = events::parse_events(args.input.open()?, &parse)?;
    let built = events::build_sequences(&parsed.log, min_length)?;
    let mut out = stdout_writer();
    writeln!(out, "# user\tn\tM\tS_bits").map_err(io_internal)?;
    for (user, seq) in &built.sequences {
        match lz_entropy_rate(seq) {
            Ok(est) => writeln!(
                out,
                "{user}\t{}\t{}\t{}",
                est.length,
                est.vocab_size,
                sig6(est.bits_per_symbol)
            )
            .map_err(io_internal)?,
            Err(_) => continue,
        }
    }
    Ok(())
}

fn cmd_popularity(args: PopularityArgs) -> Result<(), CliError> {
    let (parse, _min_length) = args.input.resolve()?;
    let parsed = events::parse_events(args.input.open()?, &parse)?;
    let profile =
        popularity::rank_frequencies(&parsed.log).map_err(|e| CliError::data(e.to_string()))?;
    let fit = popularity::fit_zipf(&profile, args.fit_max_rank)
        .map_err(|e| CliError::data(e.to_string()))?;
    let rank = args.rank.min(profile.freqs.len());
    let c = popularity::c_ratios(&profile, rank).map_err(|e| CliError::data(e.to_string()))?;
    let mut out = stdout_writer();
    writeln!(
        out,
        "# xi={}{}",
        sig6(fit.xi),
        if fit.negative {
            " (negative-slope warning)"
        } else {
            ""
        }
    )
    .map_err(io_internal)?;
    writeln!(out, "# rank\tfreq\tc").map_err(io_internal)?;
    for (i, (&f, &ci)) in profile.freqs[..rank].iter().zip(&c).enumerate() {
        writeln!(out, "{}\t{}\t{}", i + 1, f, sig6(ci)).map_err(io_internal)?;
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let ratios = match (&args.c, args.xi) {
        (Some(list), _) => parse_ratio_list(list)?,
        (None, Some(xi)) => popularity::zipf_c_vector(xi, args.rank),
        (None, None) => {
            return Err(CliError::config("provide either --c or --xi"));
        }
    };
    let problem = FanoProblem::new(args.entropy, args.candidates, ratios)
        .map_err(|e| CliError::config(e.to_string()))?;
    let bound = problem.solve();
    let mut out = stdout_writer();
    writeln!(
        out,
        "# pi1={} clamped={} residual={}",
        sig6(bound.pi1),
        bound.clamped,
        sig6(bound.residual)
    )
    .map_err(io_internal)?;
    writeln!(out, "# k\ttopk").map_err(io_internal)?;
    for (i, t) in bound.topn.iter().enumerate() {
        writeln!(out, "{}\t{}", i + 1, sig6(*t)).map_err(io_internal)?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let c = match &args.c {
        Some(list) => parse_ratio_list(list)?,
        None => (1..=synth::MAX_HEAD_RANKS)
            .map(|i| (i as f64).powf(-args.xi))
            .collect(),
    };
    let mut spec = GeneratorSpec::new(
        args.method.into(),
        args.states,
        args.p,
        c,
        args.length,
        args.seed,
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    if args.remainder_same_state {
        spec.remainder_self = RemainderSelfTransition::SameState;
    }

    let seq = synth::generate(&spec).map_err(|e| CliError::config(e.to_string()))?;
    let truth = synth::true_predictability(&spec).map_err(|e| CliError::config(e.to_string()))?;

    let mut file = BufWriter::new(
        File::create(&args.out)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", args.out.display())))?,
    );
    for &s in seq.symbols() {
        writeln!(file, "{s}").map_err(io_internal)?;
    }
    file.flush().map_err(io_internal)?;

    let meta = serde_json::json!({
        "method": spec.method.name(),
        "states": spec.states,
        "p": spec.base_prob,
        "c": spec.c,
        "length": spec.length,
        "seed": spec.seed,
        "rng": synth::RNG_ALGORITHM,
        "remainder_self": match spec.remainder_self {
            RemainderSelfTransition::UniformMember => "uniform-member",
            RemainderSelfTransition::SameState => "same-state",
        },
        "ground_truth": {
            "top_pi": truth.top_pi,
            "cumulative": truth.cumulative,
            "source": match truth.source {
                synth::TruthSource::Analytic => "analytic",
                synth::TruthSource::StationaryOracle => "stationary-oracle",
            },
        },
    });
    let meta_path = sidecar_path(&args.out);
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("json") + "\n",
    )
    .map_err(|e| CliError::data(format!("cannot write {}: {e}", meta_path.display())))?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let config = CalibrationConfig {
        p_values: calibration::grid(args.p_min, args.p_max, args.p_step),
        xi_values: calibration::grid(args.xi_min, args.xi_max, args.xi_step),
        max_rank: args.ranks,
        method: args.method.into(),
        truth: args.truth.into(),
        states: args.states,
        length: args.length,
        seeds: args.seeds,
        base_seed: args.base_seed,
    };
    let table = calibration::build_table(&config).map_err(|e| CliError::data(e.to_string()))?;
    table
        .save(&args.out)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", args.out.display())))?;
    Ok(())
}

fn cmd_correct(args: CorrectArgs) -> Result<(), CliError> {
    let table = load_table(&args.table)?;
    let lookup = table
        .lookup(args.estimate, args.xi, args.rank)
        .map_err(|e| CliError::data(e.to_string()))?;
    let corrected = args.estimate / (1.0 + lookup.deviation);
    let mut out = stdout_writer();
    writeln!(
        out,
        "# estimate={} deviation={} corrected={} p_key={} xi_key={} out_of_grid={}",
        sig6(args.estimate),
        sig6(lookup.deviation),
        sig6(corrected),
        lookup.p_key,
        lookup.xi_key,
        lookup.out_of_grid
    )
    .map_err(io_internal)?;
    Ok(())
}

fn load_table(path: &Path) -> Result<CalibrationTable, CliError> {
    CalibrationTable::load(path)
        .map_err(|e| CliError::data(format!("cannot load {}: {e}", path.display())))
}

fn parse_ratio_list(list: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("bad ratio value {t:?}")))
        })
        .collect()
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            io::stdout().flush().map_err(io_internal)
        }
    }
}

fn stdout_writer() -> BufWriter<io::Stdout> {
    BufWriter::new(io::stdout())
}

fn io_internal(err: io::Error) -> CliError {
    CliError::Internal(err.to_string())
}
