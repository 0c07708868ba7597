//! Minimal deterministic SVG decay plots.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const CURVE_SAMPLES: usize = 200;

pub struct Points {
    pub label: String,
    pub color: &'static str,
    pub xy: Vec<(f64, f64)>,
    /// Drawn as rings instead of dots.
    pub hollow: bool,
}

pub struct Curve<'a> {
    pub label: String,
    pub color: &'static str,
    pub dashed: bool,
    pub f: Box<dyn Fn(f64) -> f64 + 'a>,
}

pub struct Plot<'a> {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<Points>,
    pub curves: Vec<Curve<'a>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let nice = if m <= 1.0 {
        1.0
    } else if m <= 2.0 {
        2.0
    } else if m <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10()).ceil() as usize
    };
    format!("{v:.decimals$}")
}

impl Plot<'_> {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self.points.iter().flat_map(|p| p.xy.iter().map(|q| q.0));
        let x_max = xs.fold(0.0f64, f64::max).max(1e-9);
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for (_, y) in self.points.iter().flat_map(|p| p.xy.iter()) {
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
        for c in &self.curves {
            for i in 0..=CURVE_SAMPLES {
                let y = (c.f)(x_max * i as f64 / CURVE_SAMPLES as f64);
                if y.is_finite() {
                    y_min = y_min.min(y);
                    y_max = y_max.max(y);
                }
            }
        }
        if !y_min.is_finite() {
            (y_min, y_max) = (0.0, 1.0);
        }
        let y_lo = if y_min >= 0.0 { 0.0 } else { y_min * 1.05 };
        let y_hi = if y_max > y_lo {
            y_max * 1.05
        } else {
            y_lo + 1.0
        };
        (0.0, x_max, y_lo, y_hi)
    }

    pub fn render(&self, provenance: &str) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, "<!-- {} -->", escape(provenance));
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );

        let xs = nice_step(x1 - x0);
        let mut k = 0;
        while x0 + k as f64 * xs <= x1 + 1e-9 * xs {
            let v = x0 + k as f64 * xs;
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
                sx(v),
                TOP + ph,
                TOP + ph + 4.0,
                TOP + ph + 16.0,
                tick_label(v, xs)
            );
            k += 1;
        }
        let ys = nice_step(y1 - y0);
        let mut k = (y0 / ys).ceil() as i64;
        while k as f64 * ys <= y1 + 1e-9 * ys {
            let v = k as f64 * ys;
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
                LEFT - 4.0,
                sy(v),
                LEFT,
                LEFT - 6.0,
                sy(v) + 4.0,
                tick_label(v, ys)
            );
            k += 1;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for p in &self.points {
            let style = if p.hollow {
                format!(r#"fill="none" stroke="{}""#, p.color)
            } else {
                format!(r#"fill="{}""#, p.color)
            };
            let r = if p.hollow { 4.0 } else { 2.5 };
            let _ = writeln!(s, "<g {style}>");
            for (x, y) in &p.xy {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{r}"/>"#,
                    sx(*x),
                    sy(*y)
                );
            }
            s.push_str("</g>\n");
        }
        for c in &self.curves {
            let pts: Vec<String> = (0..=CURVE_SAMPLES)
                .filter_map(|i| {
                    let x = x0 + (x1 - x0) * i as f64 / CURVE_SAMPLES as f64;
                    let y = (c.f)(x);
                    y.is_finite()
                        .then(|| format!("{:.2},{:.2}", sx(x), sy(y.clamp(y0, y1))))
                })
                .collect();
            let dash = if c.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                c.color,
                pts.join(" ")
            );
        }

        let labels: Vec<(&str, &str)> = self
            .points
            .iter()
            .map(|p| (p.label.as_str(), p.color))
            .chain(self.curves.iter().map(|c| (c.label.as_str(), c.color)))
            .collect();
        for (i, (label, color)) in labels.iter().enumerate() {
            let y = TOP + 14.0 + 14.0 * i as f64;
            let x = WIDTH - RIGHT - 180.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{y:.2}">{}</text>"#,
                y - 9.0,
                x + 14.0,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_step(48.0), 10.0);
        assert_eq!(nice_step(7.3), 2.0);
        assert_eq!(tick_label(0.25, 0.05), "0.25");
        assert_eq!(tick_label(40.0, 10.0), "40");
    }

    #[test]
    fn render_is_deterministic_and_escaped() {
        let make = || Plot {
            title: "W00 <exp>".into(),
            x_label: "t (h)".into(),
            y_label: "I".into(),
            points: vec![Points {
                label: "data".into(),
                color: "black",
                xy: vec![(0.0, 2.0), (10.0, 1.0)],
                hollow: false,
            }],
            curves: vec![Curve {
                label: "fit".into(),
                color: "red",
                dashed: false,
                f: Box::new(|t: f64| 2.0 - 0.1 * t),
            }],
        };
        let a = make().render("p");
        assert_eq!(a, make().render("p"));
        assert!(a.contains("W00 &lt;exp&gt;"));
        assert!(a.contains("<polyline"));
        assert!(a.ends_with("</svg>\n"));
    }
}
