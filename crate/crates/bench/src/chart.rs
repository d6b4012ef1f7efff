//! Standalone SVG bar charts drawn from [`ReportRow`]s only, so every plotted value can be
//! recomputed from the CSV.
//!
//! Bars are grouped by mix and coloured by index. Breakdown kinds stack their components.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::emit::ReportRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChartKind {
    ExecTime,
    Instr,
    Cpi,
    Level1,
    Backend,
    MemoryNorm,
    MemoryAbs,
}

impl ChartKind {
    pub const ALL: [ChartKind; 7] = [
        ChartKind::ExecTime,
        ChartKind::Instr,
        ChartKind::Cpi,
        ChartKind::Level1,
        ChartKind::Backend,
        ChartKind::MemoryNorm,
        ChartKind::MemoryAbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartKind::ExecTime => "exec_time",
            ChartKind::Instr => "instr",
            ChartKind::Cpi => "cpi",
            ChartKind::Level1 => "level1",
            ChartKind::Backend => "backend",
            ChartKind::MemoryNorm => "memory_norm",
            ChartKind::MemoryAbs => "memory_abs",
        }
    }

    fn title(self) -> &'static str {
        match self {
            ChartKind::ExecTime => "Average execution time per request (us)",
            ChartKind::Instr => "Instructions per request",
            ChartKind::Cpi => "Cycles per instruction",
            ChartKind::Level1 => "Breakdown of execution cycles (normalized)",
            ChartKind::Backend => "Back-end bound split (fraction of slots)",
            ChartKind::MemoryNorm => "Memory stall breakdown (normalized)",
            ChartKind::MemoryAbs => "Memory stalls per request (us)",
        }
    }

    fn segments(self) -> &'static [&'static str] {
        match self {
            ChartKind::ExecTime => &["avg_exec_time_us"],
            ChartKind::Instr => &["instr_per_request"],
            ChartKind::Cpi => &["cpi"],
            ChartKind::Level1 => &["retiring", "bad_speculation", "frontend_bound", "backend_bound"],
            ChartKind::Backend => &["core_bound", "memory_bound"],
            ChartKind::MemoryNorm | ChartKind::MemoryAbs => {
                &["l1_bound", "l2_bound", "l3_bound", "dram_bound", "store_bound"]
            }
        }
    }
}

impl FromStr for ChartKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ChartKind::ALL
            .into_iter()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown chart kind '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChartError {
    #[error("no rows to chart")]
    Empty,
    #[error("rows mix {axis} values {a:?} and {b:?}; chart one at a time")]
    Mixed { axis: &'static str, a: String, b: String },
}

/// One bar: its group (mix), series (index) and stacked segment values. `None` when the
/// measurement is unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub group: String,
    pub series: String,
    pub segments: Option<Vec<f64>>,
}

impl Bar {
    pub fn height(&self) -> Option<f64> {
        self.segments.as_ref().map(|s| s.iter().sum())
    }
}

fn values(row: &ReportRow, kind: ChartKind) -> Option<Vec<f64>> {
    match kind {
        ChartKind::ExecTime => Some(vec![row.avg_exec_time_us]),
        ChartKind::Instr => row.instr_per_request.map(|v| vec![v]),
        ChartKind::Cpi => row.cpi.map(|v| vec![v]),
        ChartKind::Level1 => row.level1().map(|a| a.to_vec()),
        ChartKind::Backend => Some(vec![row.core_bound?, row.memory_bound?]),
        ChartKind::MemoryNorm => row.memory().map(|a| a.to_vec()),
        ChartKind::MemoryAbs => row
            .memory()
            .map(|a| a.iter().map(|m| m * row.avg_exec_time_us).collect()),
    }
}

const MIX_ORDER: [&str; 4] = ["read-only", "read-heavy", "write-heavy", "insert-only"];
const INDEX_ORDER: [&str; 4] = ["alex", "art", "btree", "noop"];

fn rank(order: &[&str], s: &str) -> usize {
    order.iter().position(|o| *o == s).unwrap_or(order.len())
}

/// Bars for `kind`, ordered by mix then index. Rows must share one scale and one set.
pub fn chart_bars(rows: &[ReportRow], kind: ChartKind) -> Result<Vec<Bar>, ChartError> {
    let first = rows.first().ok_or(ChartError::Empty)?;
    for r in rows {
        if r.scale != first.scale {
            return Err(ChartError::Mixed {
                axis: "scale",
                a: first.scale.clone(),
                b: r.scale.clone(),
            });
        }
        if r.set != first.set || r.pattern != first.pattern {
            return Err(ChartError::Mixed {
                axis: "set",
                a: format!("{}/{}", first.set, first.pattern),
                b: format!("{}/{}", r.set, r.pattern),
            });
        }
    }
    let mut bars: Vec<Bar> = rows
        .iter()
        .map(|r| Bar {
            group: r.mix.clone(),
            series: r.index.clone(),
            segments: values(r, kind),
        })
        .collect();
    bars.sort_by(|a, b| {
        (rank(&MIX_ORDER, &a.group), &a.group, rank(&INDEX_ORDER, &a.series), &a.series).cmp(&(
            rank(&MIX_ORDER, &b.group),
            &b.group,
            rank(&INDEX_ORDER, &b.series),
            &b.series,
        ))
    });
    Ok(bars)
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

/// Renders a self-contained SVG document.
pub fn render_breakdown_chart(rows: &[ReportRow], kind: ChartKind) -> Result<String, ChartError> {
    let bars = chart_bars(rows, kind)?;
    let segs = kind.segments();
    let stacked = segs.len() > 1;

    let mut groups: Vec<&str> = Vec::new();
    for b in &bars {
        if groups.last() != Some(&b.group.as_str()) {
            groups.push(&b.group);
        }
    }
    let mut series: Vec<&str> = bars.iter().map(|b| b.series.as_str()).collect();
    series.sort_by_key(|s| (rank(&INDEX_ORDER, s), *s));
    series.dedup();

    let ymax = match kind {
        ChartKind::Level1 => 1.0,
        _ => nice_ceiling(bars.iter().filter_map(Bar::height).fold(0.0, f64::max)),
    };
    let (bw, gap, left, top, plot_h) = (28.0, 24.0, 70.0, 50.0, 300.0);
    let per_group: Vec<usize> = groups.iter().map(|g| bars.iter().filter(|b| b.group == *g).count()).collect();
    let plot_w: f64 = per_group.iter().map(|n| *n as f64 * bw + gap).sum::<f64>() + gap;
    let legend_w = 170.0;
    let width = left + plot_w + legend_w;
    let height = top + plot_h + 70.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let label = format!(
        "{} [{}{}]",
        kind.title(),
        if rows[0].scale.is_empty() { String::new() } else { format!("{} ", rows[0].scale) },
        if rows[0].set.is_empty() { &rows[0].pattern } else { &rows[0].set }
    );
    let _ = writeln!(s, r#"<text x="{left}" y="24" font-size="14">{}</text>"#, esc(&label));

    let y = |v: f64| top + plot_h - v / ymax * plot_h;
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + plot_w,
            left - 6.0,
            yy + 4.0,
            format_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h
    );

    let mut x = left + gap;
    for (g, n) in groups.iter().zip(&per_group) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + *n as f64 * bw / 2.0,
            top + plot_h + 36.0,
            esc(g)
        );
        for b in bars.iter().filter(|b| b.group == *g) {
            let si = series.iter().position(|t| *t == b.series).unwrap_or(0);
            match &b.segments {
                None => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9" data-series="{}" data-group="{}" data-unavailable="true">n/a</text>"#,
                        x + bw / 2.0,
                        top + plot_h - 4.0,
                        esc(&b.series),
                        esc(g)
                    );
                }
                Some(vals) => {
                    let mut acc = 0.0;
                    for (k, v) in vals.iter().enumerate() {
                        let fill = if stacked { PALETTE[k % PALETTE.len()] } else { PALETTE[si % PALETTE.len()] };
                        let (y1, y0) = (y(acc + v), y(acc));
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.2}" y="{y1:.3}" width="{:.2}" height="{:.3}" fill="{fill}" stroke="white" stroke-width="0.5" data-series="{}" data-group="{}" data-segment="{}" data-value="{v}"/>"#,
                            bw - 2.0,
                            (y0 - y1).max(0.0),
                            esc(&b.series),
                            esc(g),
                            segs[k]
                        );
                        acc += v;
                    }
                }
            }
            if stacked {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
                    x + bw / 2.0 - 1.0,
                    top + plot_h + 14.0,
                    esc(&b.series)
                );
            }
            x += bw;
        }
        x += gap;
    }

    let lx = left + plot_w + 16.0;
    let entries: Vec<(String, &str)> = if stacked {
        segs.iter().enumerate().map(|(k, n)| (n.to_string(), PALETTE[k % PALETTE.len()])).collect()
    } else {
        series.iter().enumerate().map(|(k, n)| (n.to_string(), PALETTE[k % PALETTE.len()])).collect()
    };
    for (i, (name, color)) in entries.iter().enumerate() {
        let ly = top + i as f64 * 18.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            ly + 10.0,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v >= 100.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: &str, mix: &str) -> ReportRow {
        ReportRow {
            index: index.into(),
            pattern: "consecutive".into(),
            scale: "desk-small".into(),
            set: "s".into(),
            mix: mix.into(),
            seed: 1,
            population: 10,
            requests: 10,
            avg_exec_time_us: 0.5,
            instr_per_request: None,
            instr_source: None,
            cpi: Some(0.8),
            footprint_bytes: None,
            allocator_net_bytes: None,
            rss_net_bytes: None,
            peak_rss_bytes: None,
            retiring: Some(0.25),
            bad_speculation: Some(0.05),
            frontend_bound: Some(0.1),
            backend_bound: Some(0.6),
            core_bound: Some(0.2),
            memory_bound: Some(0.4),
            l1_bound: Some(0.04),
            l2_bound: Some(0.04),
            l3_bound: Some(0.08),
            dram_bound: Some(0.2),
            store_bound: Some(0.04),
            anomalies: 0,
            multiplex_ratio: None,
        }
    }

    #[test]
    fn level1_bar_is_full_height() {
        let bars = chart_bars(&[row("alex", "read-only")], ChartKind::Level1).unwrap();
        assert_eq!(bars[0].segments.as_ref().unwrap().len(), 4);
        assert!((bars[0].height().unwrap() - 1.0).abs() < 1e-12);
        let svg = render_breakdown_chart(&[row("alex", "read-only")], ChartKind::Level1).unwrap();
        let heights: f64 = svg
            .lines()
            .filter(|l| l.contains("data-segment"))
            .map(|l| l.split("height=\"").nth(1).unwrap().split('"').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((heights - 300.0).abs() < 0.01, "{heights}");
    }

    #[test]
    fn memory_abs_is_fraction_times_time() {
        let r = row("art", "read-only");
        let bars = chart_bars(std::slice::from_ref(&r), ChartKind::MemoryAbs).unwrap();
        let h = bars[0].height().unwrap();
        assert!((h - r.memory_bound.unwrap() * r.avg_exec_time_us).abs() < 1e-12);
    }

    #[test]
    fn twelve_bars_grouped_by_mix() {
        let mut rows = Vec::new();
        for mix in ["insert-only", "read-only", "write-heavy", "read-heavy"] {
            for idx in ["btree", "alex", "art"] {
                rows.push(row(idx, mix));
            }
        }
        let bars = chart_bars(&rows, ChartKind::Cpi).unwrap();
        assert_eq!(bars.len(), 12);
        let groups: Vec<&str> = bars.iter().map(|b| b.group.as_str()).collect();
        assert_eq!(&groups[..3], ["read-only"; 3]);
        assert_eq!(&groups[9..], ["insert-only"; 3]);
        assert_eq!(bars[0].series, "alex");
        let svg = render_breakdown_chart(&rows, ChartKind::Cpi).unwrap();
        assert_eq!(svg.matches("data-value").count(), 12);
    }

    #[test]
    fn mixed_scale_rejected() {
        let a = row("alex", "read-only");
        let mut b = row("art", "read-only");
        b.scale = "desk-large".into();
        assert!(matches!(chart_bars(&[a, b], ChartKind::Cpi), Err(ChartError::Mixed { axis: "scale", .. })));
        assert_eq!(chart_bars(&[], ChartKind::Cpi), Err(ChartError::Empty));
    }

    #[test]
    fn unavailable_values_are_marked() {
        let svg = render_breakdown_chart(&[row("alex", "read-only")], ChartKind::Instr).unwrap();
        assert!(svg.contains("data-unavailable"));
    }
}
