//! Run-record persistence: counts files, CSV tables, and the results.json
//! manifest. Every derived quantity is recomputable from the persisted
//! per-point data alone; the manifest is written last, atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use mqc_sim::statevector::{format_bitstring, parse_bitstring, CountsTable};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().context("target path has no parent")?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("file")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Counts file: one `<bitstring> <count>` line per outcome, qubit 0
/// rightmost.
pub fn counts_to_text(counts: &CountsTable) -> String {
    let n = counts.num_qubits();
    let mut out = String::new();
    for (bits, c) in counts.iter() {
        out.push_str(&format_bitstring(bits, n));
        out.push(' ');
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

pub fn counts_from_text(text: &str, path_for_errors: &Path) -> Result<CountsTable> {
    let mut table: Option<CountsTable> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (bits_text, count_text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(b), Some(c), None) => (b, c),
            _ => bail!("{}:{}: malformed counts line", path_for_errors.display(), lineno + 1),
        };
        let (bits, n) = parse_bitstring(bits_text).with_context(|| {
            format!("{}:{}: bad bitstring '{bits_text}'", path_for_errors.display(), lineno + 1)
        })?;
        let count: u64 = count_text.parse().with_context(|| {
            format!("{}:{}: bad count '{count_text}'", path_for_errors.display(), lineno + 1)
        })?;
        let table = table.get_or_insert_with(|| CountsTable::new(n));
        if table.num_qubits() != n {
            bail!("{}:{}: inconsistent bitstring width", path_for_errors.display(), lineno + 1);
        }
        table.add(bits, count);
    }
    table.ok_or_else(|| anyhow::anyhow!("{}: empty counts file", path_for_errors.display()))
}

/// Exact-mode probability file: `<bitstring> <probability>` lines, full
/// precision.
pub fn probs_to_text(num_qubits: usize, probs: &[(u64, f64)]) -> String {
    let mut out = String::new();
    for &(bits, p) in probs {
        out.push_str(&format_bitstring(bits, num_qubits));
        out.push(' ');
        out.push_str(&format!("{p:.17e}\n"));
    }
    out
}

pub fn probs_from_text(text: &str, path_for_errors: &Path) -> Result<(usize, Vec<(u64, f64)>)> {
    let mut probs = Vec::new();
    let mut num_qubits = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (bits_text, p_text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(b), Some(p), None) => (b, p),
            _ => bail!("{}:{}: malformed line", path_for_errors.display(), lineno + 1),
        };
        let (bits, n) = parse_bitstring(bits_text).with_context(|| {
            format!("{}:{}: bad bitstring", path_for_errors.display(), lineno + 1)
        })?;
        let p: f64 = p_text.parse().with_context(|| {
            format!("{}:{}: bad probability", path_for_errors.display(), lineno + 1)
        })?;
        num_qubits = n;
        probs.push((bits, p));
    }
    if probs.is_empty() {
        bail!("{}: empty probability file", path_for_errors.display());
    }
    Ok((num_qubits, probs))
}

pub fn read_counts_file(path: &Path) -> Result<CountsTable> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading counts file {}", path.display()))?;
    counts_from_text(&text, path)
}

pub fn read_probs_file(path: &Path) -> Result<(usize, Vec<(u64, f64)>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading probability file {}", path.display()))?;
    probs_from_text(&text, path)
}

/// CSV cell for an optional value.
pub fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serialize a value and write it as the record manifest.
pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<PathBuf> {
    let path = dir.join("results.json");
    let text = serde_json::to_string_pretty(manifest)?;
    write_atomic(&path, &text)?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Value> {
    let path = dir.join("results.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Recursively compare JSON trees; numbers must agree within `tol`
/// absolutely. Collects human-readable difference paths.
pub fn compare_json(stored: &Value, recomputed: &Value, tol: f64, at: &str, diffs: &mut Vec<String>) {
    match (stored, recomputed) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            if !((a - b).abs() <= tol || (a.is_nan() && b.is_nan())) {
                diffs.push(format!("{at}: {a} vs {b}"));
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            if a.len() != b.len() {
                diffs.push(format!("{at}: array length {} vs {}", a.len(), b.len()));
                return;
            }
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                compare_json(x, y, tol, &format!("{at}[{i}]"), diffs);
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            for (k, x) in a {
                match b.get(k) {
                    Some(y) => compare_json(x, y, tol, &format!("{at}.{k}"), diffs),
                    None => diffs.push(format!("{at}.{k}: missing in recomputation")),
                }
            }
            for k in b.keys() {
                if !a.contains_key(k) {
                    diffs.push(format!("{at}.{k}: extra in recomputation"));
                }
            }
        }
        (x, y) => {
            if x != y {
                diffs.push(format!("{at}: {x} vs {y}"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_text_round_trip() {
        let mut counts = CountsTable::new(3);
        counts.add(0b000, 500);
        counts.add(0b101, 12);
        let text = counts_to_text(&counts);
        assert_eq!(text, "000 500\n101 12\n");
        let back = counts_from_text(&text, Path::new("test")).unwrap();
        assert_eq!(back, counts);
    }

    #[test]
    fn probs_text_round_trip() {
        let probs = vec![(0u64, 0.5), (7u64, 0.09549150281252633)];
        let text = probs_to_text(3, &probs);
        let (n, back) = probs_from_text(&text, Path::new("test")).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, 0);
        assert_eq!(back[1].0, 7);
        assert_eq!(back[1].1, 0.09549150281252633);
    }

    #[test]
    fn json_comparison_flags_differences() {
        let a = serde_json::json!({"x": 1.0, "y": [0.5, 0.25]});
        let b = serde_json::json!({"x": 1.0, "y": [0.5, 0.25000001]});
        let mut diffs = Vec::new();
        compare_json(&a, &b, 1e-12, "$", &mut diffs);
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0].starts_with("$.y[1]"));
        diffs.clear();
        compare_json(&a, &a, 1e-12, "$", &mut diffs);
        assert!(diffs.is_empty());
    }
}
