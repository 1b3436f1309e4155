//! Renders convergence reports as aligned text tables (one error/order
//! column pair per method) and as a flat CSV. Output depends only on the
//! report list, in order, so renders are reproducible byte for byte.

use std::fmt::Write as _;

use crate::convergence::{ConvergenceReport, LadderRow};

fn fmt_error(row: &LadderRow) -> String {
    match (row.error, &row.note) {
        (Some(e), _) => format!("{e:.2e}"),
        (None, Some(_)) => "failed".to_string(),
        (None, None) => "-".to_string(),
    }
}

fn fmt_order(row: &LadderRow) -> String {
    match row.order {
        Some(p) => format!("{p:.2}"),
        None => "-".to_string(),
    }
}

fn find_row<'a>(report: &'a ConvergenceReport, flux: &str, dt: f64) -> Option<&'a LadderRow> {
    if report.flux != flux {
        return None;
    }
    report.rows.iter().find(|r| r.dt.to_bits() == dt.to_bits())
}

/// Aligned text table: flux and dt key columns, then an error/order pair per
/// report. Rows keep first-appearance order of (flux, dt) across the
/// reports; methods without a matching rung show "-", failed rungs "failed".
pub fn render_text(reports: &[ConvergenceReport]) -> String {
    let mut header: Vec<String> = vec!["flux".into(), "dt".into()];
    for r in reports {
        header.push(r.label.clone());
        header.push("order".into());
    }

    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in reports {
        for row in &r.rows {
            let seen = keys
                .iter()
                .any(|(f, dt)| f == &r.flux && dt.to_bits() == row.dt.to_bits());
            if !seen {
                keys.push((r.flux.clone(), row.dt));
            }
        }
    }

    let mut grid: Vec<Vec<String>> = vec![header];
    for (flux, dt) in &keys {
        let mut cells = vec![flux.clone(), format!("{dt:.3e}")];
        for r in reports {
            match find_row(r, flux, *dt) {
                Some(row) => {
                    cells.push(fmt_error(row));
                    cells.push(fmt_order(row));
                }
                None => {
                    cells.push("-".into());
                    cells.push("-".into());
                }
            }
        }
        grid.push(cells);
    }

    let ncols = grid[0].len();
    let mut widths = vec![0usize; ncols];
    for row in &grid {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &grid {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{cell:<width$}", width = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat CSV with one row per (report, rung).
pub fn render_csv(reports: &[ConvergenceReport]) -> String {
    let mut out = String::from("flux,dt,label,error,order,note\n");
    for r in reports {
        for row in &r.rows {
            let error = row.error.map_or(String::new(), |e| format!("{e:.17e}"));
            let order = row.order.map_or(String::new(), |p| format!("{p:.17e}"));
            let note = row.note.as_deref().unwrap_or("");
            let _ = writeln!(
                out,
                "{},{:.17e},{},{},{},{}",
                csv_field(&r.flux),
                row.dt,
                csv_field(&r.label),
                error,
                order,
                csv_field(note)
            );
        }
    }
    out
}
