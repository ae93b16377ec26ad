//! Minimal SVG line-plot export for metrics CSV files. One polyline per
//! scenario, accuracy against the sweep parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mscn_core::harness::MetricsRow;
use mscn_core::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn lerp(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if (hi - lo).abs() < 1e-300 {
        (out_lo + out_hi) / 2.0
    } else {
        out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
    }
}

/// Renders accuracy-vs-parameter curves to an SVG string.
pub fn render_svg(rows: &[MetricsRow], title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Validation("no rows to plot".into()));
    }
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        series
            .entry(r.scenario.as_str())
            .or_default()
            .push((r.param, r.accuracy));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for &(x, _) in pts.iter() {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
        }
    }
    let (plot_l, plot_r) = (MARGIN, WIDTH - MARGIN);
    let (plot_t, plot_b) = (MARGIN, HEIGHT - MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));

    // Axes and gridlines: accuracy 0..1 on y, parameter range on x.
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let y = lerp(frac, 0.0, 1.0, plot_b, plot_t);
        svg.push_str(&format!(
            "<line x1=\"{plot_l}\" y1=\"{y:.1}\" x2=\"{plot_r}\" y2=\"{y:.1}\" \
             stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{frac:.1}</text>\n",
            plot_l - 8.0,
            y + 4.0
        ));
    }
    for i in 0..=5 {
        let v = x_lo + (x_hi - x_lo) * i as f64 / 5.0;
        let x = lerp(v, x_lo, x_hi, plot_l, plot_r);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{plot_t}\" x2=\"{x:.1}\" y2=\"{plot_b}\" stroke=\"#eee\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.3}</text>\n",
            plot_b + 18.0
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{plot_l}\" y=\"{plot_t}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#333\"/>\n",
        plot_r - plot_l,
        plot_b - plot_t
    ));

    for (si, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.1},{:.1}",
                    lerp(x, x_lo, x_hi, plot_l, plot_r),
                    lerp(y.clamp(0.0, 1.0), 0.0, 1.0, plot_b, plot_t)
                )
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        for c in &coords {
            let (x, y) = c.split_once(',').unwrap();
            svg.push_str(&format!(
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>\n",
            plot_l + 10.0,
            plot_t + 16.0 + 16.0 * si as f64
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export(rows: &[MetricsRow], title: &str, out: &Path) -> Result<()> {
    let svg = render_svg(rows, title)?;
    fs::write(out, svg).map_err(|e| Error::io(out.display().to_string(), e))
}
