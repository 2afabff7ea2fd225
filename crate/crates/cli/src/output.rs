use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use dkoop::linalg::{Matrix, Spectrum};
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a half-written file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp =
        NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// One matrix row per line, comma separated, shortest round-trip notation.
pub fn write_matrix(w: &mut dyn Write, m: &Matrix) -> io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{:e}", m[(r, c)])?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_spectrum(w: &mut dyn Write, s: &Spectrum) -> io::Result<()> {
    writeln!(w, "re,im")?;
    for z in &s.eigenvalues {
        writeln!(w, "{:e},{:e}", z.re, z.im)?;
    }
    Ok(())
}

/// Reads a numeric CSV matrix. Blank lines and lines starting with `#` are
/// skipped; all rows must have the same length.
pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))
}

pub fn parse_matrix(text: &str) -> Result<Matrix, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    let cols = rows[0].len();
    Ok(Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}
