use std::fmt::Write as _;
use std::path::Path;

use super::{ImportanceMatrix, MetricKind};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CSV_HEADER: &str = "layer,head,metric,baseline,masked,delta";

/// 17 significant digits, enough to round-trip any f64.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn importance_csv(m: &ImportanceMatrix) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for l in 0..m.n_layers() {
        for h in 0..m.n_heads() {
            let _ = writeln!(
                out,
                "{l},{h},{},{},{},{}",
                m.metric,
                num(m.baseline),
                num(m.masked.get(l, h)),
                num(m.delta(l, h))
            );
        }
    }
    out
}

pub fn write_importance_csv(path: &Path, m: &ImportanceMatrix) -> Result<()> {
    std::fs::write(path, importance_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn read_importance_csv(path: &Path) -> Result<ImportanceMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_importance_csv(&text, path)
}

struct Row {
    layer: usize,
    head: usize,
    metric: MetricKind,
    baseline: f64,
    masked: f64,
    delta: f64,
}

fn parse_row(line: &str) -> std::result::Result<Row, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let index = |i: usize, what: &str| {
        fields[i]
            .parse::<usize>()
            .map_err(|_| format!("{what} {:?} is not a non-negative integer", fields[i]))
    };
    let real = |i: usize, what: &str| match fields[i].parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("{what} {:?} is not a finite number", fields[i])),
    };
    Ok(Row {
        layer: index(0, "layer")?,
        head: index(1, "head")?,
        metric: fields[2].parse().map_err(|e: Error| e.to_string())?,
        baseline: real(3, "baseline")?,
        masked: real(4, "masked")?,
        delta: real(5, "delta")?,
    })
}

pub fn parse_importance_csv(text: &str, path: &Path) -> Result<ImportanceMatrix> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        Some((i, header)) => return Err(err(i + 1, format!("expected header {CSV_HEADER:?}, found {header:?}"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = parse_row(line).map_err(|msg| err(i + 1, msg))?;
        rows.push((i + 1, row));
    }
    let Some((_, first)) = rows.first() else {
        return Err(err(2, "no data rows".into()));
    };
    let (metric, baseline) = (first.metric, first.baseline);
    let n_layers = rows.iter().map(|(_, r)| r.layer).max().unwrap_or(0) + 1;
    let n_heads = rows.iter().map(|(_, r)| r.head).max().unwrap_or(0) + 1;
    let mut seen = vec![false; n_layers * n_heads];
    let mut masked = Matrix::zeros(n_layers, n_heads);
    let mut deltas = Matrix::zeros(n_layers, n_heads);
    for (line, r) in &rows {
        if r.metric != metric || r.baseline != baseline {
            return Err(err(*line, "metric and baseline must be the same on every row".into()));
        }
        let slot = r.layer * n_heads + r.head;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(err(*line, format!("duplicate row for head {}:{}", r.layer, r.head)));
        }
        masked.set(r.layer, r.head, r.masked);
        deltas.set(r.layer, r.head, r.delta);
    }
    if let Some(slot) = seen.iter().position(|s| !s) {
        return Err(err(
            text.lines().count(),
            format!("missing row for head {}:{}", slot / n_heads, slot % n_heads),
        ));
    }
    Ok(ImportanceMatrix {
        metric,
        baseline,
        masked,
        deltas,
        checkpoint_id: None,
        dataset_id: None,
    })
}

/// Cell fill for `delta` on a ramp clipped at `±scale`: white at zero,
/// deepening to pure red at `-scale` and pure blue at `+scale`.
pub fn cell_color(delta: f64, scale: f64) -> (u8, u8, u8) {
    let t = if scale > 0.0 { (delta / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t < 0.0 {
        (255, fade, fade)
    } else {
        (fade, fade, 255)
    }
}

const CELL: usize = 48;
const MARGIN: usize = 64;

/// Standalone SVG heatmap of the deltas, layers as rows and heads as columns.
pub fn render_heatmap_svg(m: &ImportanceMatrix) -> String {
    let (rows, cols) = (m.n_layers(), m.n_heads());
    let scale = m.deltas.data().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let width = MARGIN + cols * CELL + 16;
    let height = MARGIN + rows * CELL + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-size="13">{} change when masking each head (scale ±{})</text>"#,
        m.metric,
        fmt_short(scale)
    );
    for h in 0..cols {
        let x = MARGIN + h * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">h{h}</text>"#, MARGIN - 8);
    }
    for l in 0..rows {
        let y = MARGIN + l * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">layer {l}</text>"#,
            MARGIN - 8,
            y + CELL / 2 + 4
        );
        for h in 0..cols {
            let x = MARGIN + h * CELL;
            let d = m.delta(l, h);
            let (r, g, b) = cell_color(d, scale);
            let _ = writeln!(
                s,
                r##"<rect data-layer="{l}" data-head="{h}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#888888" stroke-width="0.5"><title>{l}:{h} {}</title></rect>"##,
                num(d)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4,
                fmt_short(d)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_short(x: f64) -> String {
    format!("{x:.2}")
}
