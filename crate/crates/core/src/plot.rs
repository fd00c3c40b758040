//! Minimal SVG figures: line charts, spike rasters and image heatmaps.

use std::fmt::Write as _;

use crate::spike::SpikeRaster;
use crate::task::Image;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    Linear,
    Log10,
}

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Line chart; `y_range` pins the vertical axis (e.g. `(0, 100)` for
/// accuracies). Non-positive x values are dropped on a log axis.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    x_axis: Axis,
    y_range: Option<(f64, f64)>,
) -> String {
    let tx = |x: f64| match x_axis {
        Axis::Linear => x,
        Axis::Log10 => x.log10(),
    };
    let keep = |x: f64| x_axis == Axis::Linear || x > 0.0;
    let pts = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| keep(p.0))
    };
    let (x0, x1) = bounds(pts().map(|p| tx(p.0)));
    let (y0, y1) = y_range.unwrap_or_else(|| bounds(pts().map(|p| p.1)));
    let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, W, H, title);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let sx = MARGIN + (W - 2.0 * MARGIN) * k as f64 / 4.0;
        let xtick = match x_axis {
            Axis::Linear => format!("{fx:.4}"),
            Axis::Log10 => format!("{:.3e}", 10f64.powf(fx)),
        };
        let _ = writeln!(
            out,
            r#"<text x="{sx}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 16.0,
            trim_num(&xtick)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            py(fy) + 4.0,
            trim_num(&format!("{fy:.4}"))
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| keep(p.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - MARGIN - 120.0,
            W - MARGIN - 100.0,
            W - MARGIN - 94.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn trim_num(s: &str) -> String {
    if s.contains('e') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() || t == "-" {
        "0".into()
    } else {
        t.to_string()
    }
}

/// Desired spikes as circles, observed spikes as ticks, one row per channel.
pub fn raster_plot(title: &str, desired: &SpikeRaster, observed: &SpikeRaster) -> String {
    let channels = desired.channel_count().max(observed.channel_count()).max(1);
    let grid = desired.grid();
    let height = (channels as f64 * 3.0 + 2.0 * MARGIN).max(H);
    let px = |n: usize| MARGIN + grid.time_ms(n) / grid.horizon_ms() * (W - 2.0 * MARGIN);
    let row_h = (height - 2.0 * MARGIN) / channels as f64;
    let py = |ch: usize| MARGIN + (ch as f64 + 0.5) * row_h;

    let mut out = String::new();
    header(&mut out, W, height, title);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">time (ms), 0 to {}</text>"#,
        W / 2.0,
        height - 14.0,
        grid.horizon_ms()
    );
    for train in desired.trains() {
        for &n in train.steps() {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="none" stroke="#1f77b4"/>"##,
                px(n),
                py(train.channel)
            );
        }
    }
    for train in observed.trains() {
        for &n in train.steps() {
            let (x, y) = (px(n), py(train.channel));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#d62728"/>"##,
                y - row_h / 2.0,
                y + row_h / 2.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side grayscale heatmaps, black = 1.
pub fn heatmaps(title: &str, images: &[(String, Image)]) -> String {
    let cell = 10.0;
    let gap = 24.0;
    let widths: Vec<f64> = images.iter().map(|(_, i)| i.cols() as f64 * cell).collect();
    let max_rows = images.iter().map(|(_, i)| i.rows()).max().unwrap_or(0) as f64;
    let width = (widths.iter().sum::<f64>() + gap * (images.len() as f64 + 1.0)).max(200.0);
    let height = max_rows * cell + 70.0;

    let mut out = String::new();
    header(&mut out, width, height, title);
    let mut x0 = gap;
    for ((label, img), w) in images.iter().zip(&widths) {
        for r in 0..img.rows() {
            for c in 0..img.cols() {
                let shade = (255.0 * (1.0 - img.get(r, c))).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})"/>"#,
                    x0 + c as f64 * cell,
                    36.0 + r as f64 * cell
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            height - 12.0,
            escape(label)
        );
        x0 += w + gap;
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spike::{SpikeTrain, TimeGrid};

    #[test]
    fn line_chart_is_well_formed() {
        let s = Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 1.5)],
        };
        let svg = line_chart("t", "x", "y", &[s], Axis::Linear, Some((0.0, 100.0)));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn log_axis_drops_non_positive() {
        let s = Series {
            label: "d".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (1e5, 3.0)],
        };
        let svg = line_chart("t", "x", "y", &[s], Axis::Log10, None);
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(poly.matches(',').count(), 2);
    }

    #[test]
    fn raster_and_heatmap_counts() {
        let g = TimeGrid::new(0.1, 100.0).unwrap();
        let d = SpikeRaster::from_trains(g, vec![SpikeTrain::from_steps(0, vec![10, 20])]).unwrap();
        let o = SpikeRaster::from_trains(g, vec![SpikeTrain::from_steps(0, vec![15])]).unwrap();
        let svg = raster_plot("r", &d, &o);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<line").count(), 1);
        let img = Image::new(2, 3, vec![0.0, 0.5, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let svg = heatmaps("h", &[("x".into(), img)]);
        assert_eq!(svg.matches("<rect x=").count(), 6);
        assert!(svg.contains("rgb(0,0,0)"));
    }
}
