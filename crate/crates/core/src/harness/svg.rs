//! Hand-emitted SVG scatter plots on logit-scaled axes.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::metrics::{logit, RobustnessFit};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const TICKS: [f64; 9] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95];
/// Accuracies are clamped into this range before the logit.
const EPS: f64 = 1e-4;

/// Affine map from logit space to pixels: `px = origin + scale * (logit(p) - lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitAxis {
    pub lo: f64,
    pub hi: f64,
    pub origin: f64,
    pub scale: f64,
}

impl LogitAxis {
    /// Axis spanning the probabilities `[p_min, p_max]` over `length` pixels.
    /// `length` is negative for a y axis growing upward.
    pub fn new(p_min: f64, p_max: f64, origin: f64, length: f64) -> Result<Self> {
        let lo = logit(p_min.clamp(EPS, 1.0 - EPS))?;
        let mut hi = logit(p_max.clamp(EPS, 1.0 - EPS))?;
        if hi <= lo {
            hi = lo + 1.0;
        }
        Ok(Self {
            lo,
            hi,
            origin,
            scale: length / (hi - lo),
        })
    }

    pub fn to_px(&self, p: f64) -> Result<f64> {
        Ok(self.origin + self.scale * (logit(p.clamp(EPS, 1.0 - EPS))? - self.lo))
    }

    fn contains(&self, p: f64) -> bool {
        logit(p).map(|t| t >= self.lo && t <= self.hi).unwrap_or(false)
    }
}

/// One plotted accuracy pair with an optional confidence interval on x.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub x_ci: Option<(f64, f64)>,
    pub y_ci: Option<(f64, f64)>,
}

impl PlotPoint {
    pub fn new(label: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            label: label.into(),
            x,
            y,
            x_ci: None,
            y_ci: None,
        }
    }
}

/// Plot contents: scattered reference models, the baseline fit, the
/// interpolation curve and extra labelled markers.
#[derive(Debug, Clone, Default)]
pub struct ScatterPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<PlotPoint>,
    pub fit: Option<RobustnessFit>,
    pub curve: Vec<PlotPoint>,
    pub markers: Vec<PlotPoint>,
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axes shared by every plot: bounds cover all plotted values with a small
/// pad in logit space.
pub fn plot_axes(plot: &ScatterPlot) -> Result<(LogitAxis, LogitAxis)> {
    let all: Vec<&PlotPoint> = plot.points.iter().chain(&plot.curve).chain(&plot.markers).collect();
    if all.is_empty() {
        return Err(Error::Render("nothing to plot".into()));
    }
    let bounds = |f: &dyn Fn(&PlotPoint) -> f64| -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &all {
            let v = f(p);
            if !v.is_finite() {
                return Err(Error::Render(format!("non-finite coordinate for `{}`", p.label)));
            }
            let t = logit(v.clamp(EPS, 1.0 - EPS))?;
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let pad = 0.1 * (hi - lo).max(1.0);
        Ok((crate::metrics::sigmoid(lo - pad), crate::metrics::sigmoid(hi + pad)))
    };
    let (x0, x1) = bounds(&|p| p.x)?;
    let (y0, y1) = bounds(&|p| p.y)?;
    let x = LogitAxis::new(x0, x1, MARGIN, WIDTH - 2.0 * MARGIN)?;
    let y = LogitAxis::new(y0, y1, HEIGHT - MARGIN, -(HEIGHT - 2.0 * MARGIN))?;
    Ok((x, y))
}

/// Renders a self-contained SVG document. Reference models are
/// `circle.point`, curve markers `circle.curve`, confidence bars `line.ci`.
pub fn render_scatter_svg(plot: &ScatterPlot) -> Result<String> {
    if plot.points.is_empty() && plot.curve.is_empty() {
        return Err(Error::Render("empty point set".into()));
    }
    let (xa, ya) = plot_axes(plot)?;
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#,
        W = WIDTH,
        H = HEIGHT
    );
    let _ = writeln!(
        w,
        "<style>.axis{{stroke:#000;stroke-width:1}}.grid{{stroke:#ddd;stroke-width:1}}.fit{{stroke:#888;stroke-width:1.5;stroke-dasharray:6 4;fill:none}}.point{{fill:#4477aa}}.curve{{fill:#cc3311}}.path{{stroke:#cc3311;stroke-width:1.5;fill:none}}.ci{{stroke:#555;stroke-width:1}}.marker{{fill:#228833}}text{{font-family:sans-serif;font-size:11px}}</style>"
    );
    let _ = writeln!(w, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let (left, right) = (MARGIN, WIDTH - MARGIN);
    let (top, bottom) = (MARGIN, HEIGHT - MARGIN);

    for &p in &TICKS {
        if xa.contains(p) {
            let x = xa.to_px(p)?;
            let _ = writeln!(w, r#"<line class="grid" x1="{0}" y1="{1}" x2="{0}" y2="{2}"/>"#, num(x), num(top), num(bottom));
            let _ = writeln!(
                w,
                r#"<text class="xtick" x="{}" y="{}" text-anchor="middle">{}%</text>"#,
                num(x),
                num(bottom + 16.0),
                (p * 100.0).round()
            );
        }
        if ya.contains(p) {
            let y = ya.to_px(p)?;
            let _ = writeln!(w, r#"<line class="grid" x1="{1}" y1="{0}" x2="{2}" y2="{0}"/>"#, num(y), num(left), num(right));
            let _ = writeln!(
                w,
                r#"<text class="ytick" x="{}" y="{}" text-anchor="end">{}%</text>"#,
                num(left - 6.0),
                num(y + 4.0),
                (p * 100.0).round()
            );
        }
    }
    let _ = writeln!(w, r#"<line class="axis" x1="{0}" y1="{1}" x2="{2}" y2="{1}"/>"#, num(left), num(bottom), num(right));
    let _ = writeln!(w, r#"<line class="axis" x1="{0}" y1="{1}" x2="{0}" y2="{2}"/>"#, num(left), num(top), num(bottom));
    let _ = writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num(WIDTH / 2.0),
        num(HEIGHT - 16.0),
        escape(&plot.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        num(HEIGHT / 2.0),
        escape(&plot.y_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        num(WIDTH / 2.0),
        escape(&plot.title)
    );

    if let Some(fit) = &plot.fit {
        // the fit is a straight line in logit space
        let (x0, x1) = (crate::metrics::sigmoid(xa.lo), crate::metrics::sigmoid(xa.hi));
        let (y0, y1) = (fit.baseline(x0)?, fit.baseline(x1)?);
        let _ = writeln!(
            w,
            r#"<line class="fit" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
            num(xa.to_px(x0)?),
            num(ya.to_px(y0)?),
            num(xa.to_px(x1)?),
            num(ya.to_px(y1)?)
        );
    }

    for p in &plot.points {
        point(w, "point", p, &xa, &ya, 4.0)?;
    }
    if !plot.curve.is_empty() {
        let mut d = String::new();
        for (i, p) in plot.curve.iter().enumerate() {
            let _ = write!(d, "{}{},{} ", if i == 0 { "M" } else { "L" }, num(xa.to_px(p.x)?), num(ya.to_px(p.y)?));
        }
        let _ = writeln!(w, r#"<path class="path" d="{}"/>"#, d.trim_end());
        for p in &plot.curve {
            point(w, "curve", p, &xa, &ya, 3.0)?;
        }
    }
    for p in &plot.markers {
        point(w, "marker", p, &xa, &ya, 5.0)?;
        let _ = writeln!(
            w,
            r#"<text x="{}" y="{}">{}</text>"#,
            num(xa.to_px(p.x)? + 7.0),
            num(ya.to_px(p.y)? - 7.0),
            escape(&p.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn point(w: &mut String, class: &str, p: &PlotPoint, xa: &LogitAxis, ya: &LogitAxis, r: f64) -> Result<()> {
    let (x, y) = (xa.to_px(p.x)?, ya.to_px(p.y)?);
    if let Some((lo, hi)) = p.x_ci {
        let _ = writeln!(
            w,
            r#"<line class="ci" x1="{0}" y1="{1}" x2="{2}" y2="{1}"/>"#,
            num(xa.to_px(lo)?),
            num(y),
            num(xa.to_px(hi)?)
        );
    }
    if let Some((lo, hi)) = p.y_ci {
        let _ = writeln!(
            w,
            r#"<line class="ci" x1="{0}" y1="{1}" x2="{0}" y2="{2}"/>"#,
            num(x),
            num(ya.to_px(lo)?),
            num(ya.to_px(hi)?)
        );
    }
    let _ = writeln!(
        w,
        r#"<circle class="{class}" cx="{}" cy="{}" r="{r}"><title>{}</title></circle>"#,
        num(x),
        num(y),
        escape(&p.label)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> ScatterPlot {
        ScatterPlot {
            title: "t".into(),
            points: vec![PlotPoint::new("a", 0.6, 0.4), PlotPoint::new("b", 0.8, 0.55)],
            ..ScatterPlot::default()
        }
    }

    #[test]
    fn two_markers() {
        let svg = render_scatter_svg(&two_points()).unwrap();
        assert_eq!(svg.matches(r#"<circle class="point""#).count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_is_render_error() {
        assert!(matches!(render_scatter_svg(&ScatterPlot::default()), Err(Error::Render(_))));
    }

    #[test]
    fn deterministic() {
        assert_eq!(render_scatter_svg(&two_points()).unwrap(), render_scatter_svg(&two_points()).unwrap());
    }

    #[test]
    fn tick_spacing_follows_logit() {
        let a = LogitAxis::new(0.1, 0.95, 60.0, 520.0).unwrap();
        let gap = a.to_px(0.75).unwrap() - a.to_px(0.5).unwrap();
        let want = a.scale * (logit(0.75).unwrap() - logit(0.5).unwrap());
        assert!((gap - want).abs() < 1e-9);
        assert!((gap - a.scale * 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn special_characters_are_escaped() {
        let mut p = two_points();
        p.title = "a<b & c".into();
        let svg = render_scatter_svg(&p).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
