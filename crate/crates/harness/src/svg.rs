//! Self-contained SVG histograms and line charts.

pub const DEFAULT_BINS: usize = 30;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub type Series<T> = (String, Vec<T>);

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (a, b, x) = if self.log_x { (self.x.0.ln(), self.x.1.ln(), x.ln()) } else { (self.x.0, self.x.1, x) };
        LEFT + (x - a) / (b - a) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if lo == hi {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        (lo - d, hi + d)
    } else {
        (lo, hi)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    out.push_str(&format!("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", W / 2.0, esc(title)));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    out.push_str(&format!("<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"));
    out.push_str(&format!("<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"));
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = if f.log_x { (f.x.0.ln() + t * (f.x.1.ln() - f.x.0.ln())).exp() } else { f.x.0 + t * (f.x.1 - f.x.0) };
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{y0}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 18.0,
            tick(xv)
        ));
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0}\" y2=\"{py:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        H - 12.0,
        esc(xlabel)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(ylabel)
    ));
}

fn legend(out: &mut String, names: &[&str]) {
    if names.len() < 2 {
        return;
    }
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{c}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            W - RIGHT - 130.0,
            y - 9.0,
            W - RIGHT - 115.0,
            y,
            esc(n)
        ));
    }
}

/// Overlaid histograms sharing one set of `bins` equal-width bins.
/// Non-finite values are ignored; no data gives an axes-only chart.
pub fn histogram(series: &[Series<f64>], bins: usize, title: &str, xlabel: &str) -> String {
    let bins = bins.max(1);
    let finite = || series.iter().flat_map(|(_, v)| v.iter().copied().filter(|x| x.is_finite()));
    let range = widen(finite().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x))));
    let width = (range.1 - range.0) / bins as f64;
    let counts: Vec<Vec<usize>> = series
        .iter()
        .map(|(_, v)| {
            let mut c = vec![0; bins];
            for &x in v.iter().filter(|x| x.is_finite()) {
                let b = (((x - range.0) / width) as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    let ymax = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame { x: range, y: (0.0, ymax), log_x: false };
    let mut out = String::new();
    header(&mut out, title, xlabel, "count", &f);
    let opacity = if series.len() > 1 { 0.5 } else { 0.9 };
    for (i, c) in counts.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (b, &n) in c.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let x0 = f.px(range.0 + b as f64 * width);
            let x1 = f.px(range.0 + (b + 1) as f64 * width);
            let y = f.py(n as f64);
            out.push_str(&format!(
                "<rect x=\"{x0:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"{opacity}\"/>\n",
                x1 - x0,
                f.py(0.0) - y
            ));
        }
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Polyline per series. `log_x` is ignored unless every x is positive.
pub fn line_chart(series: &[Series<(f64, f64)>], title: &str, xlabel: &str, ylabel: &str, log_x: bool) -> String {
    let pts = || series.iter().flat_map(|(_, v)| v.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()));
    let log_x = log_x && pts().next().is_some() && pts().all(|(x, _)| x > 0.0);
    let mut xr = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| (a.min(x), b.max(x)));
    if log_x && xr.0 == xr.1 {
        xr = (xr.0 / 2.0, xr.1 * 2.0);
    }
    let xr = widen(xr);
    let yr = widen(pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, y)| (a.min(y), b.max(y))));
    let f = Frame { x: xr, y: yr, log_x };
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &f);
    for (i, (_, v)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = v
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        if coords.is_empty() {
            continue;
        }
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        for c in &coords {
            let (x, y) = c.split_once(',').unwrap();
            out.push_str(&format!("<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_inputs_give_axes_only() {
        let h = histogram(&[], DEFAULT_BINS, "t", "x");
        assert!(h.starts_with("<svg") && h.ends_with("</svg>\n"));
        assert!(!h.contains("fill-opacity"));
        let l = line_chart(&[("a".into(), vec![])], "t", "x", "y", true);
        assert!(!l.contains("polyline"));
    }

    #[test]
    fn histogram_bins_and_determinism() {
        let v: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let s = vec![("v".to_string(), v)];
        let h = histogram(&s, 30, "t", "x");
        assert_eq!(h.matches("fill-opacity").count(), 30);
        assert_eq!(histogram(&s, 7, "t", "x").matches("fill-opacity").count(), 7);
        assert_eq!(h, histogram(&s, 30, "t", "x"));
    }

    #[test]
    fn constant_and_escaped() {
        let h = histogram(&[("a<b".into(), vec![2.0; 5])], 10, "x & y", "v");
        assert!(h.contains("x &amp; y"));
        assert_eq!(h.matches("fill-opacity").count(), 1);
        let l = line_chart(&[("s".into(), vec![(1.0, 1.0), (10.0, 2.0)])], "t", "x", "y", true);
        assert_eq!(l.matches("<circle").count(), 2);
    }
}
