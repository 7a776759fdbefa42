//! Static SVG charts for age-trend summaries: one line per sex with +-1
//! standard deviation error bars. Output is plain text with fixed-precision
//! coordinates, so identical inputs produce identical bytes.

use crate::error::{Error, Result};
use crate::manifest::Sex;
use crate::vrs::TrendCell;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const MALE_COLOR: &str = "#1f77b4";
const FEMALE_COLOR: &str = "#d62728";

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render trend cells as an SVG line chart with error bars.
pub fn trend_svg(cells: &[TrendCell], title: &str, y_label: &str) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::Parse("no trend cells to plot".into()));
    }
    // Bins sorted by age; x position is the bin midpoint.
    let mut bins: Vec<(u32, u32)> = Vec::new();
    for c in cells {
        if !bins.contains(&(c.lo, c.hi)) {
            bins.push((c.lo, c.hi));
        }
    }
    bins.sort_unstable();
    let mids: Vec<f64> = bins.iter().map(|&(lo, hi)| (lo as f64 + hi as f64) / 2.0).collect();
    let x_min = mids.first().copied().unwrap_or(0.0);
    let x_max = mids.last().copied().unwrap_or(1.0);
    let x_span = (x_max - x_min).max(1.0);

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for c in cells.iter().filter(|c| c.n > 0) {
        y_min = y_min.min(c.mean - c.std);
        y_max = y_max.max(c.mean + c.std);
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::Parse("trend cells hold no populated bins".into()));
    }
    let pad = (y_max - y_min).max(1e-9) * 0.1;
    y_min -= pad;
    y_max += pad;
    let y_span = y_max - y_min;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_at = |age: f64| MARGIN_LEFT + (age - x_min) / x_span * plot_w;
    let y_at = |v: f64| MARGIN_TOP + (y_max - v) / y_span * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        fmt(WIDTH / 2.0),
        title
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(HEIGHT - MARGIN_BOTTOM),
        fmt(WIDTH - MARGIN_RIGHT),
        fmt(HEIGHT - MARGIN_BOTTOM)
    ));

    // Y ticks.
    for t in 0..=4 {
        let v = y_min + y_span * t as f64 / 4.0;
        let y = y_at(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(MARGIN_LEFT - 4.0),
            fmt(y),
            fmt(MARGIN_LEFT),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 8.0),
            fmt(y + 4.0),
            fmt(v)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        fmt(HEIGHT / 2.0),
        fmt(HEIGHT / 2.0),
        y_label
    ));

    // X ticks with bin labels.
    for (&(lo, hi), &mid) in bins.iter().zip(&mids) {
        let x = x_at(mid);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(x),
            fmt(HEIGHT - MARGIN_BOTTOM),
            fmt(x),
            fmt(HEIGHT - MARGIN_BOTTOM + 4.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{lo}-{hi}</text>\n",
            fmt(x),
            fmt(HEIGHT - MARGIN_BOTTOM + 18.0)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">age group (years)</text>\n",
        fmt(MARGIN_LEFT + plot_w / 2.0),
        fmt(HEIGHT - 16.0)
    ));

    // Series.
    for (sex, color) in [(Sex::M, MALE_COLOR), (Sex::F, FEMALE_COLOR)] {
        let series: Vec<&TrendCell> = bins
            .iter()
            .filter_map(|&(lo, hi)| {
                cells.iter().find(|c| c.sex == sex && c.lo == lo && c.hi == hi && c.n > 0)
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let points: Vec<String> = series
            .iter()
            .map(|c| format!("{},{}", fmt(x_at((c.lo as f64 + c.hi as f64) / 2.0)), fmt(y_at(c.mean))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        for c in &series {
            let x = x_at((c.lo as f64 + c.hi as f64) / 2.0);
            let (top, bottom) = (y_at(c.mean + c.std), y_at(c.mean - c.std));
            svg.push_str(&format!(
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"{color}\" stroke-width=\"1\"/>\n",
                fmt(x),
                fmt(top),
                fmt(bottom)
            ));
            for y in [top, bottom] {
                svg.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"1\"/>\n",
                    fmt(x - 4.0),
                    fmt(y),
                    fmt(x + 4.0),
                    fmt(y)
                ));
            }
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(x),
                fmt(y_at(c.mean))
            ));
        }
    }

    // Legend.
    for (i, (label, color)) in [("male", MALE_COLOR), ("female", FEMALE_COLOR)].iter().enumerate() {
        let y = MARGIN_TOP + 8.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{2}\" x2=\"{}\" y2=\"{2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(WIDTH - MARGIN_RIGHT - 110.0),
            fmt(WIDTH - MARGIN_RIGHT - 86.0),
            fmt(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
            fmt(WIDTH - MARGIN_RIGHT - 80.0),
            fmt(y + 4.0)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
