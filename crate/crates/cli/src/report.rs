//! Plain-text rendering of a finished run.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;
use crate::manifest::{sha256_hex, RunManifest};

/// Summary tables for the manifest at `path`, read from the files next to it.
pub fn render(path: &Path) -> Result<String, CliError> {
    let m = RunManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut s = String::new();
    let c = &m.constants;
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    writeln!(
        s,
        "run `{}` (seed {}, library {})",
        m.config.name, m.config.seed, m.library_version
    )
    .unwrap();
    writeln!(s, "wall clock {:.3} s on {} workers", m.wall_clock_seconds, m.workers).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "constants").unwrap();
    writeln!(
        s,
        "  K1 declared {:.6}  measured {}  (V-valued {})",
        c.k1_declared,
        opt(c.k1_measured),
        opt(c.k1_v_measured)
    )
    .unwrap();
    writeln!(s, "  K2 declared {:.6}  measured {}", c.k2_declared, opt(c.k2_measured)).unwrap();
    writeln!(s, "  tr Q {:.6}", c.trace_q).unwrap();
    if !c.c_hat.is_empty() {
        let v: Vec<String> = c.c_hat.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(s, "  C_hat {}", v.join(", ")).unwrap();
    }
    if c.i_star.is_some() {
        writeln!(s, "  I* {}", opt(c.i_star)).unwrap();
    }
    if c.i_d1.is_some() {
        writeln!(s, "  I over D1 {}", opt(c.i_d1)).unwrap();
    }
    if m.unreliable {
        writeln!(s, "\nUNRELIABLE: more than 1% of paths aborted in some estimate").unwrap();
    }
    if !m.findings.is_empty() {
        writeln!(s, "\nfindings").unwrap();
        for f in &m.findings {
            writeln!(s, "  - {f}").unwrap();
        }
    }
    for o in &m.outputs {
        let bytes = match std::fs::read(dir.join(&o.file)) {
            Ok(b) => b,
            Err(e) => {
                writeln!(s, "\n{}: unreadable ({e})", o.file).unwrap();
                continue;
            }
        };
        let status = if sha256_hex(&bytes) == o.sha256 {
            "checksum ok"
        } else {
            "CHECKSUM MISMATCH"
        };
        writeln!(s, "\n{} ({} bytes, {status})", o.file, o.bytes).unwrap();
        if o.file.ends_with(".csv") && !o.file.starts_with("path") && o.file != "skeleton.csv" {
            s.push_str(&table(&String::from_utf8_lossy(&bytes), 40));
        }
    }
    Ok(s)
}

/// Right-aligned columns; at most `max_rows` body rows.
pub fn table(csv: &str, max_rows: usize) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let Some(header) = rows.first() else {
        return String::new();
    };
    let shown = &rows[..rows.len().min(max_rows + 1)];
    let cells: Vec<Vec<String>> = shown
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| match c.parse::<f64>() {
                    Ok(x) if c.contains('.') || c.contains('e') => format!("{x:.6}"),
                    _ => c.to_string(),
                })
                .collect()
        })
        .collect();
    let width: Vec<usize> = (0..header.len())
        .map(|j| {
            cells
                .iter()
                .filter_map(|r| r.get(j))
                .map(|c| c.len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    for r in &cells {
        let line: Vec<String> = r.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(s, "  {}", line.join("  ")).unwrap();
    }
    if rows.len() > shown.len() {
        writeln!(s, "  ... {} more rows", rows.len() - shown.len()).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_and_truncates() {
        let t = table("a,bb\n1,2.5\n10,3\n4,5\n", 2);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "   a        bb");
        assert_eq!(lines[1], "   1  2.500000");
        assert!(lines[3].contains("1 more rows"));
    }
}
