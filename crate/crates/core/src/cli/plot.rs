use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::MetricsTable;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 260.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn panel(out: &mut String, x0: f64, title: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) {
    let finite = series.iter().flat_map(|(_, ys)| ys.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let xmax = xs.iter().copied().fold(1.0, f64::max);
    let xmin = xs.first().copied().unwrap_or(0.0);
    let span = (xmax - xmin).max(1.0);
    let px = |x: f64| x0 + PAD + (x - xmin) / span * (WIDTH - 2.0 * PAD);
    let py = |y: f64| HEIGHT - PAD - (y - lo) / (hi - lo) * (HEIGHT - 2.0 * PAD);
    writeln!(
        out,
        r##"<rect x="{}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        x0 + PAD,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    )
    .unwrap();
    writeln!(out, r#"<text x="{}" y="24" font-size="14">{title}</text>"#, x0 + PAD).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="10">{lo:.4}</text>"#, x0 + 2.0, HEIGHT - PAD).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" font-size="10">{hi:.4}</text>"#, x0 + 2.0, PAD + 4.0).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10">epoch</text>"#,
        x0 + WIDTH / 2.0 - 12.0,
        HEIGHT - 8.0
    )
    .unwrap();
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{name}</text>"#,
            x0 + WIDTH - PAD - 90.0,
            PAD + 16.0 + 14.0 * i as f64
        )
        .unwrap();
    }
}

/// Loss and accuracy curves from a metrics CSV, as a standalone SVG.
pub fn render_svg(table: &MetricsTable) -> Result<String> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("metrics file has no numeric `{name}` column")))
    };
    let xs = col("epoch")?;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{HEIGHT}" font-family="sans-serif">"#,
        2.0 * WIDTH
    )
    .unwrap();
    panel(&mut out, 0.0, "loss", &xs, &[("train total", col("total")?), ("val CE", col("val_ce")?)]);
    panel(
        &mut out,
        WIDTH,
        "accuracy",
        &xs,
        &[("val", col("val_acc")?), ("test", col("test_acc")?)],
    );
    out.push_str("</svg>\n");
    Ok(out)
}
