//! Report serialization: tab-separated (default) and JSON.

use std::io::{self, Write};

use crate::pipeline::PredictabilityReport;

/// Formats a float to six significant digits, plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Writes the report in the tab-separated layout.
///
/// Header lines start with `#`; per-user rows come first, then one
/// `topn` row per rank with the raw and (when present) corrected means.
pub fn write_tsv<W: Write>(report: &PredictabilityReport, mut w: W) -> io::Result<()> {
    writeln!(w, "# predictability-report v1")?;
    writeln!(
        w,
        "# config_hash={} rank={} xi={} users={} skipped={} excluded={} malformed={}",
        report.config_hash,
        report.rank,
        sig6(report.xi),
        report.users.len(),
        report.skipped_users,
        report.excluded_users,
        report.malformed_rows,
    )?;
    if let Some(fitted) = report.xi_fitted {
        writeln!(w, "# xi_fitted={}", sig6(fitted))?;
    }
    if let Some(table_id) = &report.table_id {
        writeln!(
            w,
            "# table_id={} corrections_out_of_grid={}",
            table_id, report.corrections_out_of_grid
        )?;
    }
    writeln!(w, "# user\tn\tM\tS_bits\tpi1\tclamped")?;
    for row in &report.users {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.user_id,
            row.n,
            row.m,
            sig6(row.entropy_bits),
            sig6(row.pi1),
            row.clamped,
        )?;
    }
    match &report.mean_topn_corrected {
        Some(corrected) => {
            writeln!(w, "# aggregate\tk\tmean_topk\tmean_topk_corrected")?;
            for (i, (raw, corr)) in report.mean_topn.iter().zip(corrected).enumerate() {
                writeln!(w, "topn\t{}\t{}\t{}", i + 1, sig6(*raw), sig6(*corr))?;
            }
        }
        None => {
            writeln!(w, "# aggregate\tk\tmean_topk")?;
            for (i, raw) in report.mean_topn.iter().enumerate() {
                writeln!(w, "topn\t{}\t{}", i + 1, sig6(*raw))?;
            }
        }
    }
    Ok(())
}

/// Writes the report as pretty-printed JSON.
pub fn write_json<W: Write>(report: &PredictabilityReport, w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(w, report).map_err(io::Error::other)
}

/// Renders the report to a string in the requested format.
pub fn render(report: &PredictabilityReport, json: bool) -> String {
    let mut buf = Vec::new();
    if json {
        write_json(report, &mut buf).expect("vec writes cannot fail");
    } else {
        write_tsv(report, &mut buf).expect("vec writes cannot fail");
    }
    String::from_utf8(buf).expect("report output is UTF-8")
}
