//! File writers: CSV and JSON with 17 significant digits, plus the run
//! manifest.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::Resolved;
use crate::CliError;

/// A float rendered with 17 significant digits, stable across runs.
pub fn fmt_float(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        // keep integers readable in CSV headers and ids
        format!("{:.1}", x)
    } else {
        format!("{:.16e}", x)
    }
}

struct SigDigitFormatter;

impl serde_json::ser::Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

/// Serialize to JSON with every f64 carrying 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Numeric(format!("serialization failed: {e}")))?;
    String::from_utf8(out).map_err(|e| CliError::Numeric(format!("non-utf8 json: {e}")))
}

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(path: &str) -> Result<Self, CliError> {
        let dir = PathBuf::from(path);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir,
            written: Vec::new(),
        })
    }


    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Manifest plus the reusable resolved config; call last.
    pub fn finish(
        mut self,
        resolved: &Resolved,
        wall_time_ms: u128,
    ) -> Result<(), CliError> {
        self.write("resolved.conf", &resolved.to_conf())?;
        let manifest = Manifest {
            tool: "wishrisk",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: resolved.subcommand.clone(),
            resolved: resolved.entries().clone(),
            outputs: self.written.clone(),
            wall_time_ms,
        };
        let json = to_json(&manifest)?;
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, json)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    subcommand: String,
    resolved: std::collections::BTreeMap<String, String>,
    outputs: Vec<String>,
    wall_time_ms: u128,
}

/// CSV of a labelled square matrix: header row of asset ids, one labelled
/// row per asset.
pub fn matrix_csv(ids: &[String], entries: &nalgebra::DMatrix<f64>) -> String {
    let mut out = String::from("asset_id");
    for id in ids {
        let _ = write!(out, ",{id}");
    }
    out.push('\n');
    for (k, id) in ids.iter().enumerate() {
        let _ = write!(out, "{id}");
        for j in 0..entries.ncols() {
            let _ = write!(out, ",{}", fmt_float(entries[(k, j)]));
        }
        out.push('\n');
    }
    out
}

/// Parse the matrix CSV format back.
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, nalgebra::DMatrix<f64>), CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Usage("empty matrix file".to_string()))?;
    let ids: Vec<String> = header.split(',').skip(1).map(|s| s.to_string()).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let _label = fields.next();
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "matrix row {}: bad number `{field}`",
                    lineno + 2
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != n || values.len() != n * n {
        return Err(CliError::Usage(format!(
            "matrix is not square: {n} ids, {rows} rows, {} values",
            values.len()
        )));
    }
    Ok((ids, nalgebra::DMatrix::from_row_slice(n, n, &values)))
}

/// Two-column CSV for tabulated curves.
pub fn curve_csv(x_name: &str, y_name: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut out = format!("{x_name},{y_name}\n");
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(out, "{},{}", fmt_float(*x), fmt_float(*y));
    }
    out
}

/// Copula bin CSV: bin edges in quantile space plus the density value.
pub fn copula_csv(hist_bins: usize, density: &[f64]) -> String {
    let mut out = String::from("u_lo,u_hi,v_lo,v_hi,density\n");
    let b = hist_bins as f64;
    for i in 0..hist_bins {
        for j in 0..hist_bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_float(i as f64 / b),
                fmt_float((i + 1) as f64 / b),
                fmt_float(j as f64 / b),
                fmt_float((j + 1) as f64 / b),
                fmt_float(density[i * hist_bins + j]),
            );
        }
    }
    out
}

/// ISO date for a day offset from 1970-01-01 (proleptic Gregorian).
pub fn date_from_day_offset(offset: i64) -> String {
    let days = offset + 719_468;
    let era = if days >= 0 { days } else { days - 146_096 } / 146_097;
    let doe = days - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };
    format!("{year:04}-{month:02}-{day:02}")
}
