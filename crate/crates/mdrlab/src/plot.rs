//! Tiny deterministic SVG line charts.
//!
//! No plotting dependency: the comparisons need nothing beyond polylines,
//! shaded mean±std bands, and a legend, and hand-rolled output is trivially
//! reproducible byte-for-byte. NaN samples (e.g. reward before the first
//! episode finishes) split a series into separate segments.

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 280.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 42.0;

/// One curve; `band` optionally carries (lo, hi) per point for a shaded
/// envelope (mean±std across seeds).
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Bounds {
    lo: f64,
    hi: f64,
}

impl Bounds {
    fn new() -> Self {
        Bounds {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, v: f64) {
        if v.is_finite() {
            self.lo = self.lo.min(v);
            self.hi = self.hi.max(v);
        }
    }

    fn finish(mut self, pad: f64) -> (f64, f64) {
        if self.lo > self.hi {
            return (0.0, 1.0);
        }
        if self.lo == self.hi {
            let d = if self.lo == 0.0 { 1.0 } else { self.lo.abs() * 0.1 };
            self.lo -= d;
            self.hi += d;
        }
        let d = (self.hi - self.lo) * pad;
        (self.lo - d, self.hi + d)
    }
}

fn render_panel(out: &mut String, panel: &Panel, y_offset: f64) {
    let mut xb = Bounds::new();
    let mut yb = Bounds::new();
    for s in &panel.series {
        for &x in &s.xs {
            xb.add(x);
        }
        for &y in &s.ys {
            yb.add(y);
        }
        if let Some((lo, hi)) = &s.band {
            for &v in lo.iter().chain(hi.iter()) {
                yb.add(v);
            }
        }
    }
    let (x0, x1) = xb.finish(0.0);
    let (y0, y1) = yb.finish(0.05);

    let px0 = MARGIN_L;
    let px1 = PANEL_W - MARGIN_R;
    let py0 = y_offset + MARGIN_T;
    let py1 = y_offset + PANEL_H - MARGIN_B;
    let sx = |x: f64| px0 + (x - x0) / (x1 - x0) * (px1 - px0);
    let sy = |y: f64| py1 - (y - y0) / (y1 - y0) * (py1 - py0);

    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#fafafa\" stroke=\"#888\" stroke-width=\"1\"/>\n",
        coord(px0),
        coord(py0),
        coord(px1 - px0),
        coord(py1 - py0)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" font-weight=\"bold\">{}</text>\n",
        coord((px0 + px1) / 2.0),
        coord(py0 - 10.0),
        esc(&panel.title)
    ));

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let gx = sx(xv);
        let gy = sy(yv);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n",
            coord(gx),
            coord(py0),
            coord(gx),
            coord(py1)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n",
            coord(px0),
            coord(gy),
            coord(px1),
            coord(gy)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            coord(gx),
            coord(py1 + 14.0),
            tick_label(xv)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
            coord(px0 - 5.0),
            coord(gy + 3.5),
            tick_label(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
        coord((px0 + px1) / 2.0),
        coord(py1 + 30.0),
        esc(&panel.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 {} {})\">{}</text>\n",
        coord(14.0),
        coord((py0 + py1) / 2.0),
        coord(14.0),
        coord((py0 + py1) / 2.0),
        esc(&panel.y_label)
    ));

    for (si, s) in panel.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some((lo, hi)) = &s.band {
            // Band polygon: lo edge forward, hi edge backward, split at NaN.
            let mut seg: Vec<(f64, f64, f64)> = Vec::new();
            let flush = |seg: &mut Vec<(f64, f64, f64)>, out: &mut String| {
                if seg.len() >= 2 {
                    let mut pts = String::new();
                    for &(x, l, _) in seg.iter() {
                        pts.push_str(&format!("{},{} ", coord(sx(x)), coord(sy(l))));
                    }
                    for &(x, _, h) in seg.iter().rev() {
                        pts.push_str(&format!("{},{} ", coord(sx(x)), coord(sy(h))));
                    }
                    out.push_str(&format!(
                        "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n",
                        pts.trim_end(),
                        color
                    ));
                }
                seg.clear();
            };
            for i in 0..s.xs.len().min(lo.len()).min(hi.len()) {
                if s.xs[i].is_finite() && lo[i].is_finite() && hi[i].is_finite() {
                    seg.push((s.xs[i], lo[i], hi[i]));
                } else {
                    flush(&mut seg, out);
                }
            }
            flush(&mut seg, out);
        }
        let mut seg: Vec<(f64, f64)> = Vec::new();
        let flush = |seg: &mut Vec<(f64, f64)>, out: &mut String| {
            if seg.len() >= 2 {
                let pts: Vec<String> = seg
                    .iter()
                    .map(|&(x, y)| format!("{},{}", coord(sx(x)), coord(sy(y))))
                    .collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                    pts.join(" "),
                    color
                ));
            } else if seg.len() == 1 {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"{}\"/>\n",
                    coord(sx(seg[0].0)),
                    coord(sy(seg[0].1)),
                    color
                ));
            }
            seg.clear();
        };
        for i in 0..s.xs.len().min(s.ys.len()) {
            if s.xs[i].is_finite() && s.ys[i].is_finite() {
                seg.push((s.xs[i], s.ys[i]));
            } else {
                flush(&mut seg, out);
            }
        }
        flush(&mut seg, out);

        let lx = px1 - 120.0;
        let ly = py0 + 14.0 + 14.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            coord(lx),
            coord(ly - 3.5),
            coord(lx + 18.0),
            coord(ly - 3.5),
            color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>\n",
            coord(lx + 22.0),
            coord(ly),
            esc(&s.label)
        ));
    }
}

/// Render stacked panels into a standalone SVG document.
pub fn render_chart(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" font-family=\"monospace\">\n",
        coord(PANEL_W),
        coord(height),
        coord(PANEL_W),
        coord(height)
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_panel() -> Panel {
        Panel {
            title: "reward".into(),
            x_label: "step".into(),
            y_label: "mean episode reward".into(),
            series: vec![
                Series {
                    label: "bn".into(),
                    xs: (0..10).map(|i| i as f64).collect(),
                    ys: (0..10).map(|i| (i as f64 * 0.3).sin()).collect(),
                    band: Some((
                        (0..10).map(|i| (i as f64 * 0.3).sin() - 0.2).collect(),
                        (0..10).map(|i| (i as f64 * 0.3).sin() + 0.2).collect(),
                    )),
                },
                Series {
                    label: "bn-mdr".into(),
                    xs: (0..10).map(|i| i as f64).collect(),
                    ys: (0..10).map(|i| 0.1 * i as f64).collect(),
                    band: None,
                },
            ],
        }
    }

    #[test]
    fn chart_structure() {
        let svg = render_chart(&[demo_panel()]);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("<polygon"), "band should render");
        assert!(svg.contains(">bn<") && svg.contains(">bn-mdr<"), "legend labels");
        assert_eq!(svg.matches("<svg ").count(), 1);
    }

    #[test]
    fn render_is_deterministic() {
        let a = render_chart(&[demo_panel(), demo_panel()]);
        let b = render_chart(&[demo_panel(), demo_panel()]);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_points_break_the_line_without_leaking() {
        let mut p = demo_panel();
        p.series[0].ys[4] = f64::NAN;
        p.series[0].band.as_mut().unwrap().0[4] = f64::NAN;
        let svg = render_chart(&[p]);
        assert!(!svg.contains("NaN"), "NaN must never reach path data");
        // Split into two polyline segments for the first series.
        assert!(svg.matches("<polyline").count() >= 3);
    }

    #[test]
    fn empty_series_still_renders_axes() {
        let p = Panel {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
        };
        let svg = render_chart(&[p]);
        assert!(svg.contains("empty"));
        assert!(!svg.contains("inf") && !svg.contains("NaN"));
    }

    #[test]
    fn labels_are_escaped() {
        let mut p = demo_panel();
        p.title = "a < b & c".into();
        let svg = render_chart(&[p]);
        assert!(svg.contains("a &lt; b &amp; c"));
    }

    #[test]
    fn tick_labels_are_tidy() {
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(12.0), "12");
        assert_eq!(tick_label(1.25), "1.25");
        assert_eq!(tick_label(1.0e-7), "1.0e-7");
        assert_eq!(tick_label(3.0e6), "3.0e6");
    }
}
