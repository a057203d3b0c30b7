//! CSV reports. Reals use six significant digits in C `%g` style, missing
//! values print as `NA`, lines end in `\n`.

use std::path::Path;

use crate::cfeval::{CounterfactualReport, Metric, MetricDrop};
use crate::error::{Error, Result};
use crate::toyworld::EpochLoss;

use super::binfmt::{read_file, write_file};

pub const REPORT_HEADER: &str = "metric,baseline,counterfactual,delta,delta_pct";

/// `printf("%.6g", x)`.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Exponent after rounding to six significant digits.
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g6).unwrap_or_else(|| "NA".into())
}

fn drop_row(d: &MetricDrop) -> String {
    format!(
        "{},{},{},{},{}\n",
        d.metric,
        fmt_g6(d.baseline),
        fmt_g6(d.counterfactual),
        fmt_g6(d.delta),
        fmt_opt(d.delta_pct)
    )
}

/// One row per metric. Metric values are fractions; `delta_pct` is in
/// percent.
pub fn render_report(report: &CounterfactualReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for d in &report.drops {
        out.push_str(&drop_row(d));
    }
    out
}

pub fn write_report(report: &CounterfactualReport, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), render_report(report).as_bytes())
}

/// Relative drops of every metric at one `(α, p)` setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub p: f64,
    /// `ΔM%` in [`Metric::ALL`] order.
    pub drops: Vec<Option<f64>>,
}

impl SweepRow {
    pub fn from_report(report: &CounterfactualReport) -> Self {
        Self {
            alpha: report.spec.alpha,
            p: report.spec.p,
            drops: report.drops.iter().map(|d| d.delta_pct).collect(),
        }
    }
}

pub fn sweep_header() -> String {
    let mut h = String::from("alpha,p");
    for m in Metric::ALL {
        h.push_str(&format!(",d{m}%"));
    }
    h
}

/// One line per `(α, p)` setting with the relative drop of every metric.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = sweep_header();
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", fmt_g6(r.alpha), fmt_g6(r.p)));
        for &d in &r.drops {
            out.push(',');
            out.push_str(&fmt_opt(d));
        }
        out.push('\n');
    }
    out
}

pub fn parse_sweep(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != sweep_header() {
        return Err(Error::data(format!("unexpected sweep header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 + Metric::ALL.len() {
            return Err(Error::data(format!("sweep line {} has {} fields", n + 2, cells.len())));
        }
        let real = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::data(format!("sweep line {}: bad number {s:?}", n + 2)))
        };
        let drops = cells[2..]
            .iter()
            .map(|&c| if c == "NA" { Ok(None) } else { real(c).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow {
            alpha: real(cells[0])?,
            p: real(cells[1])?,
            drops,
        });
    }
    Ok(rows)
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::data(format!("{} is not UTF-8", path.display())))?;
    parse_sweep(&text)
}

/// Averages sweeps row-wise by `(α, p)`, keeping first-seen order. A
/// missing drop in any input leaves the mean missing.
pub fn aggregate_sweeps(sweeps: &[Vec<SweepRow>]) -> Result<Vec<(SweepRow, usize)>> {
    let mut out: Vec<(SweepRow, usize, Vec<bool>)> = Vec::new();
    for rows in sweeps {
        for r in rows {
            let slot = match out.iter().position(|(o, _, _)| o.alpha == r.alpha && o.p == r.p) {
                Some(i) => i,
                None => {
                    out.push((
                        SweepRow {
                            alpha: r.alpha,
                            p: r.p,
                            drops: vec![Some(0.0); r.drops.len()],
                        },
                        0,
                        vec![true; r.drops.len()],
                    ));
                    out.len() - 1
                }
            };
            let (acc, n, ok) = &mut out[slot];
            if acc.drops.len() != r.drops.len() {
                return Err(Error::data("sweeps report different metric sets"));
            }
            for ((a, d), good) in acc.drops.iter_mut().zip(&r.drops).zip(ok.iter_mut()) {
                match (a.as_mut(), d) {
                    (Some(a), Some(d)) => *a += d,
                    _ => *good = false,
                }
            }
            *n += 1;
        }
    }
    Ok(out
        .into_iter()
        .map(|(mut row, n, ok)| {
            for (d, good) in row.drops.iter_mut().zip(ok) {
                *d = if good { d.map(|v| v / n as f64) } else { None };
            }
            (row, n)
        })
        .collect())
}

/// Curve table: the sweep columns plus the number of averaged runs.
pub fn render_curves(rows: &[(SweepRow, usize)]) -> String {
    let mut out = sweep_header();
    out.push_str(",runs\n");
    for (r, n) in rows {
        out.push_str(&format!("{},{}", fmt_g6(r.alpha), fmt_g6(r.p)));
        for &d in &r.drops {
            out.push(',');
            out.push_str(&fmt_opt(d));
        }
        out.push_str(&format!(",{n}\n"));
    }
    out
}

pub fn render_loss_curve(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,total,base,part,coverage,warmup,learning_rate\n");
    for e in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch,
            fmt_g6(e.total),
            fmt_g6(e.base),
            fmt_g6(e.part),
            fmt_g6(e.coverage),
            fmt_g6(e.warmup),
            fmt_g6(e.learning_rate)
        ));
    }
    out
}
