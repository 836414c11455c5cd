//! Rendering and serialization of convergence tables.
//!
//! The CSV layout has a fixed header `k,kappa,kappa_ex,R,nodes,opt,gmres`;
//! absent diagnostics serialize as empty fields. Floats use the shortest
//! representation that parses back to the same value, so emitting and
//! re-parsing a table is lossless.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use nep_solver::diagnostics::{ConvergenceTable, TableRow};

pub const CSV_HEADER: &str = "k,kappa,kappa_ex,R,nodes,opt,gmres";

fn csv_opt_f64(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

fn csv_opt_usize(value: Option<usize>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Serializes a table to CSV text, one row per outer iteration.
pub fn to_csv(table: &ConvergenceTable) -> String {
    let mut out = String::with_capacity(64 * (table.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.k,
            csv_opt_f64(row.kappa),
            csv_opt_f64(row.kappa_exact),
            csv_opt_f64(row.rate),
            row.node_change,
            row.optimality,
            csv_opt_usize(row.gmres_iterations),
        );
    }
    out
}

fn parse_opt_f64(field: &str, name: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .with_context(|| format!("line {line}: `{name}` field `{field}` is not a number"))
}

/// Parses CSV text produced by [`to_csv`] back into a table.
pub fn from_csv(text: &str) -> Result<ConvergenceTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty CSV input"))?;
    if header != CSV_HEADER {
        bail!("unexpected CSV header `{header}`");
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {line_no}: expected 7 fields, got {}", fields.len());
        }
        rows.push(TableRow {
            k: fields[0]
                .parse()
                .with_context(|| format!("line {line_no}: bad iteration index `{}`", fields[0]))?,
            kappa: parse_opt_f64(fields[1], "kappa", line_no)?,
            kappa_exact: parse_opt_f64(fields[2], "kappa_ex", line_no)?,
            rate: parse_opt_f64(fields[3], "R", line_no)?,
            node_change: fields[4]
                .parse()
                .with_context(|| format!("line {line_no}: bad node count `{}`", fields[4]))?,
            optimality: fields[5]
                .parse()
                .with_context(|| format!("line {line_no}: bad optimality `{}`", fields[5]))?,
            gmres_iterations: if fields[6].is_empty() {
                None
            } else {
                Some(fields[6].parse().with_context(|| {
                    format!("line {line_no}: bad gmres count `{}`", fields[6])
                })?)
            },
        });
    }
    Ok(ConvergenceTable { rows })
}

fn fmt_order(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

fn fmt_gmres(value: Option<usize>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "-".to_string(),
    }
}

/// Renders a table for terminal output with fixed-width columns.
pub fn render_text(table: &ConvergenceTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:>8}  {:>8}  {:>8}  {:>7}  {:>11}  {:>6}",
        "k", "kappa", "kappa_ex", "R", "nodes", "opt", "gmres"
    );
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{:>4}  {:>8}  {:>8}  {:>8}  {:>7}  {:>11.4e}  {:>6}",
            row.k,
            fmt_order(row.kappa),
            fmt_order(row.kappa_exact),
            fmt_order(row.rate),
            row.node_change,
            row.optimality,
            fmt_gmres(row.gmres_iterations),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> ConvergenceTable {
        ConvergenceTable {
            rows: vec![
                TableRow {
                    k: 1,
                    kappa: None,
                    kappa_exact: None,
                    rate: None,
                    node_change: 128,
                    optimality: 2.25e3,
                    gmres_iterations: Some(40),
                },
                TableRow {
                    k: 2,
                    kappa: None,
                    kappa_exact: Some(1.5),
                    rate: Some(0.25),
                    node_change: 17,
                    optimality: 0.125,
                    gmres_iterations: None,
                },
                TableRow {
                    k: 3,
                    kappa: Some(1.0 / 3.0),
                    kappa_exact: Some(2.0 + 1e-13),
                    rate: Some(0.04283921),
                    node_change: 0,
                    optimality: 5.2e-14,
                    gmres_iterations: Some(0),
                },
            ],
        }
    }

    #[test]
    fn header_is_fixed() {
        let table = ConvergenceTable { rows: Vec::new() };
        assert_eq!(to_csv(&table), "k,kappa,kappa_ex,R,nodes,opt,gmres\n");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let table = sample_table();
        let text = to_csv(&table);
        let parsed = from_csv(&text).expect("emitted CSV parses");
        assert_eq!(parsed.rows.len(), table.rows.len());
        for (a, b) in table.rows.iter().zip(&parsed.rows) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.kappa, b.kappa);
            assert_eq!(a.kappa_exact, b.kappa_exact);
            assert_eq!(a.rate, b.rate);
            assert_eq!(a.node_change, b.node_change);
            assert_eq!(a.optimality, b.optimality);
            assert_eq!(a.gmres_iterations, b.gmres_iterations);
        }
    }

    #[test]
    fn absent_fields_serialize_empty() {
        let table = sample_table();
        let text = to_csv(&table);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,,,,128,2250,40");
        assert!(lines[2].ends_with(",17,0.125,"));
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(from_csv("").is_err());
        assert!(from_csv("a,b,c\n").is_err());
        let bad_row = "k,kappa,kappa_ex,R,nodes,opt,gmres\n1,2,3\n";
        assert!(from_csv(bad_row).is_err());
        let bad_field = "k,kappa,kappa_ex,R,nodes,opt,gmres\n1,x,,,0,0.0,\n";
        assert!(from_csv(bad_field).is_err());
    }

    #[test]
    fn text_rendering_marks_absent_values() {
        let table = sample_table();
        let text = render_text(&table);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("kappa_ex"));
        assert!(lines[1].contains('-'), "absent diagnostics print as `-`");
        assert!(lines[3].contains("0.3333"));
        assert!(lines[3].contains("0.0428"));
    }
}
