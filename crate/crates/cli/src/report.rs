//! Plain-text renderings: weight tables, curve sparklines, gnuplot tables.

use std::fmt::Write as _;

use ratecate::pipeline::{Method, MethodFit};

pub const WEIGHT_TITLE: &str = "The estimated weights in constructed CATE scores";

fn label(m: Method) -> &'static str {
    match m {
        Method::Contrast => "Contrast regression",
        Method::Tworeg => "Two regressions",
        Method::Naive => "Naive",
        Method::BoostingRatio => "Boosting",
    }
}

/// Covariates as rows, linear methods as columns, log-scale weights with
/// standard errors where available.
pub fn weight_table(covariates: &[String], fits: &[MethodFit]) -> String {
    let linear: Vec<(&MethodFit, Vec<f64>)> = fits
        .iter()
        .filter_map(|f| match (&f.contrast, &f.regression) {
            (Some(c), _) => Some((f, c.delta.clone())),
            (None, Some(r)) => Some((f, r.delta_implied.clone())),
            _ => None,
        })
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Covariate".to_string()];
    header.extend(linear.iter().map(|(f, _)| label(f.method).to_string()));
    rows.push(header);
    let names = std::iter::once("(Intercept)".to_string()).chain(covariates.iter().cloned());
    for (j, name) in names.enumerate() {
        let mut row = vec![name];
        for (f, w) in &linear {
            row.push(match &f.contrast {
                Some(c) => format!("{:.3} ({:.3})", w[j], c.std_errors[j]),
                None => format!("{:.3}", w[j]),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{WEIGHT_TITLE}");
    let _ = writeln!(out, "(log scale; standard errors in parentheses)");
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    let skipped: Vec<&str> = fits.iter().filter(|f| f.contrast.is_none() && f.regression.is_none()).map(|f| f.method.as_str()).collect();
    if !skipped.is_empty() {
        let _ = writeln!(out, "\nNo weights for {} (non-parametric score).", skipped.join(", "));
    }
    out
}

/// One block character per value, scaled between the finite extremes.
pub fn sparkline(values: &[Option<f64>]) -> String {
    const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| match v {
            Some(v) if v.is_finite() => {
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                BARS[((t * 7.0).round() as usize).min(7)]
            }
            _ => ' ',
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"))
}

/// Whitespace-separated table readable by gnuplot's `plot ... using`.
pub fn gnuplot_table(preamble: &str, q: &[f64], columns: &[(&str, Vec<Option<f64>>)]) -> String {
    let mut out = String::from(preamble);
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    let _ = writeln!(out, "# q {}", names.join(" "));
    for (i, q) in q.iter().enumerate() {
        let cells: Vec<String> = columns.iter().map(|c| cell(c.1[i])).collect();
        let _ = writeln!(out, "{q} {}", cells.join(" "));
    }
    out
}
