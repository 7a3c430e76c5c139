//! Static SVG heat maps and line plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const M: (f64, f64, f64, f64) = (70.0, 110.0, 40.0, 60.0); // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(s: &mut String, xr: (f64, f64), yr: (f64, f64), xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = M;
    let (pw, ph) = (W - l - r, H - t - b);
    writeln!(s, r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (l + f * pw, t + ph - f * ph);
        writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, t + ph + 16.0, xr.0 + f * (xr.1 - xr.0)).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#, l - 6.0, y + 4.0, yr.0 + f * (yr.1 - yr.0)).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, l + pw / 2.0, H - 18.0, escape(xlabel)).unwrap();
    writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#, t + ph / 2.0, t + ph / 2.0, escape(ylabel)).unwrap();
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (l, r, t, b) = M;
    let (pw, ph) = (W - l - r, H - t - b);
    let mut s = header(title);
    axes(&mut s, xr, yr, xlabel, ylabel);
    for (k, se) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = se
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", l + (p.0 - xr.0) / (xr.1 - xr.0) * pw, t + ph - (p.1 - yr.0) / (yr.1 - yr.0) * ph))
            .collect();
        let dash = if se.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = t + 14.0 + 16.0 * k as f64;
        writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.6"{dash}/>"#, W - r + 8.0, W - r + 28.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - r + 32.0, ly + 4.0, escape(&se.label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Heat map of row-major values (nx × ny, y fastest) over [x0,x1]×[y0,y1];
/// signed data uses a diverging blue-white-red scale.
pub fn heat_map(title: &str, xlabel: &str, ylabel: &str, extent: (f64, f64, f64, f64), nx: usize, ny: usize, values: &[f64]) -> String {
    let (x0, x1, y0, y1) = extent;
    let stride = (nx.max(ny) as f64 / 128.0).ceil().max(1.0) as usize;
    let vmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let signed = values.iter().any(|&v| v < -1e-3 * vmax);
    let (l, r, t, b) = M;
    let (pw, ph) = (W - l - r, H - t - b);
    let mut s = header(title);
    let (cw, chh) = (pw * stride as f64 / nx as f64, ph * stride as f64 / ny as f64);
    for i in (0..nx).step_by(stride) {
        for j in (0..ny).step_by(stride) {
            let v = values[i * ny + j] / vmax;
            let color = if signed {
                let c = (255.0 * (1.0 - v.abs())).round() as u8;
                if v >= 0.0 { format!("#ff{c:02x}{c:02x}") } else { format!("#{c:02x}{c:02x}ff") }
            } else {
                let c = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                format!("#{c:02x}{c:02x}ff")
            };
            let x = l + i as f64 / nx as f64 * pw;
            let y = t + ph - (j + stride) as f64 / ny as f64 * ph;
            writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#, cw + 0.3, chh + 0.3).unwrap();
        }
    }
    axes(&mut s, (x0, x1), (y0, y1), xlabel, ylabel);
    writeln!(s, r#"<text x="{:.1}" y="{:.1}">max |v| = {:.3e}</text>"#, W - r + 8.0, t + 14.0, vmax).unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let p = line_plot("t", "x", "y", &[Series { label: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 2.0)], dashed: true }]);
        assert!(p.starts_with("<svg") && p.trim_end().ends_with("</svg>") && p.contains("a&lt;b") && p.contains("dasharray"));
        let h = heat_map("h", "x", "y", (-1.0, 1.0, -1.0, 1.0), 3, 3, &[0.0, 1.0, -0.5, 0.2, 0.3, 0.1, 0.0, 0.0, 0.0]);
        assert!(h.matches("<rect").count() >= 10);
    }
}
