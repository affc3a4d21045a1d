use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "pass,objective,subopt,grad_norm,ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub passes: f64,
    pub objective: f64,
    /// `objective − f*`, `NaN` when no reference optimum is known.
    pub subopt: f64,
    pub grad_norm: f64,
    pub ms: u64,
}

/// Objective measurements along one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub label: String,
    pub rows: Vec<TraceRow>,
    /// The run stopped early because the objective stopped being finite.
    pub diverged: bool,
}

impl Trace {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), rows: Vec::new(), diverged: false }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Final suboptimality, or final objective when no reference was used.
    /// Infinite for diverged runs.
    pub fn final_score(&self) -> f64 {
        match self.rows.last() {
            _ if self.diverged => f64::INFINITY,
            Some(r) if r.subopt.is_nan() => r.objective,
            Some(r) => r.subopt,
            None => f64::INFINITY,
        }
    }

    /// First recorded pass count at which suboptimality is at most `target`.
    pub fn passes_to(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.subopt <= target).map(|r| r.passes)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt17(r.passes),
                fmt17(r.objective),
                fmt17(r.subopt),
                fmt17(r.grad_norm),
                r.ms
            );
        }
        out
    }

    pub fn parse_csv(label: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected header '{CSV_HEADER}'") }),
        }
        let mut trace = Self::new(label);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse { line: line_no, msg: format!("expected 5 fields, got {}", fields.len()) });
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse { line: line_no, msg: format!("bad number '{s}'") })
            };
            let ms = fields[4]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad milliseconds '{}'", fields[4]) })?;
            let row = TraceRow {
                passes: num(fields[0])?,
                objective: num(fields[1])?,
                subopt: num(fields[2])?,
                grad_norm: num(fields[3])?,
                ms,
            };
            if !row.objective.is_finite() {
                trace.diverged = true;
            }
            trace.rows.push(row);
        }
        Ok(trace)
    }
}

/// Scientific notation with 17 significant digits.
fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn emit_csv(trace: &Trace, path: &Path) -> Result<()> {
    std::fs::write(path, trace.to_csv())?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line plot of suboptimality (objective when unknown) on a log₁₀ axis
/// against effective passes, one polyline per trace.
pub fn render_svg(traces: &[Trace]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;
    const FLOOR: f64 = 1e-16;

    let value = |r: &TraceRow| if r.subopt.is_nan() { r.objective } else { r.subopt };
    let points: Vec<Vec<(f64, f64)>> = traces
        .iter()
        .map(|t| {
            t.rows
                .iter()
                .filter(|r| value(r).is_finite())
                .map(|r| (r.passes, value(r).max(FLOOR).log10()))
                .collect()
        })
        .collect();
    let all = points.iter().flatten();
    let (mut x_max, mut y_min, mut y_max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    let (y_lo, y_hi) = (y_min.floor(), y_max.ceil().max(y_min.floor() + 1.0));
    let x_hi = if x_max > 0.0 { x_max } else { 1.0 };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + pw * x / x_hi;
    let sy = |y: f64| TOP + ph * (y_hi - y) / (y_hi - y_lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let step = ((y_hi - y_lo) / 8.0).ceil().max(1.0);
    let mut e = y_lo;
    while e <= y_hi {
        let y = sy(e);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">1e{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            e as i64
        );
        e += step;
    }
    for i in 0..=5 {
        let xv = x_hi * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            trim_number(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">Effective passes</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">Objective minus optimum</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, (t, pts)) in traces.iter().zip(&points).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            xml_escape(&t.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(traces: &[Trace], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(traces))?;
    Ok(())
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::new("sag");
        for k in 0..5 {
            t.rows.push(TraceRow {
                passes: 0.1 * k as f64,
                objective: 1.0 / (k as f64 + 3.0),
                subopt: 10f64.powi(-k) / 7.0,
                grad_norm: std::f64::consts::PI * k as f64,
                ms: 0,
            });
        }
        t
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(Trace::new("x").to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let back = Trace::parse_csv("sag", &t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn nan_subopt_round_trips() {
        let mut t = sample();
        t.rows[0].subopt = f64::NAN;
        let back = Trace::parse_csv("sag", &t.to_csv()).unwrap();
        assert!(back.rows[0].subopt.is_nan());
    }

    #[test]
    fn bad_csv_reports_line() {
        let text = format!("{CSV_HEADER}\n0,1,2,3,0\n0,1,x,3,0\n");
        assert!(matches!(Trace::parse_csv("t", &text), Err(Error::Parse { line: 3, .. })));
        assert!(Trace::parse_csv("t", "a,b\n").is_err());
    }

    #[test]
    fn svg_has_one_polyline_and_legend_per_trace() {
        let mut b = sample();
        b.label = "iag".into();
        let svg = render_svg(&[sample(), b]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains(">sag<") && svg.contains(">iag<"));
    }

    #[test]
    fn passes_to_target() {
        let t = sample();
        // subopt is 10^-k / 7, first at or below 1e-2 when k = 2
        assert_eq!(t.passes_to(1e-2), Some(0.1 * 2.0));
        assert_eq!(t.passes_to(1e-9), None);
    }
}
