//! Deterministic standalone SVG diagrams.

use std::fmt::Write as _;

use anyhow::bail;

use crate::table::BranchRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 70.0;
/// Stroke colors for Morse index 0, 1 and 2 (higher indices reuse the last).
pub const INDEX_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    CVsTPsi,
    CVsTPhi,
    AVsC,
}

impl std::str::FromStr for Axes {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "c_vs_tpsi" => Axes::CVsTPsi,
            "c_vs_tphi" => Axes::CVsTPhi,
            "a_c_t" => Axes::AVsC,
            other => bail!("unknown axes {other:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub curves: Vec<Curve>,
    /// Filled circles.
    pub dots: Vec<(f64, f64, &'static str)>,
}

fn index_color(i: usize) -> &'static str {
    INDEX_COLORS[i.min(INDEX_COLORS.len() - 1)]
}

/// Branch arcs split where the Morse index changes; the segment between
/// `Lstart` and `Lend` is dashed.
pub fn branch_plot(rows: &[BranchRow], axes: Axes, title: &str) -> Plot {
    let (x_label, y_label) = match axes {
        Axes::CVsTPsi => ("c", "t_psi"),
        Axes::CVsTPhi => ("c", "t_phi"),
        Axes::AVsC => ("a", "c"),
    };
    let coord = |r: &BranchRow| match axes {
        Axes::CVsTPsi => (r.c, r.t_psi),
        Axes::CVsTPhi => (r.c, r.t_phi),
        Axes::AVsC => (r.a, r.c),
    };
    let mut plot = Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        ..Plot::default()
    };
    let mut in_segment = false;
    let mut current: Option<Curve> = None;
    for r in rows {
        let dashed = in_segment || r.marker == "Lstart";
        let color = index_color(r.morse_index);
        let p = coord(r);
        match &mut current {
            Some(cur) if cur.color == color && cur.dashed == dashed => cur.points.push(p),
            _ => {
                // Arcs join up; the joining piece takes the solid style.
                let mut points = Vec::new();
                if let Some(mut done) = current.take() {
                    if dashed && !done.dashed {
                        done.points.push(p);
                    } else if let Some(&last) = done.points.last() {
                        points.push(last);
                    }
                    plot.curves.push(done);
                }
                points.push(p);
                current = Some(Curve { points, color, dashed });
            }
        }
        if r.marker == "Lstart" {
            in_segment = true;
        }
        if r.marker == "Lend" {
            in_segment = false;
        }
        if matches!(r.marker.as_str(), "fold0" | "trans12" | "Lstart" | "Lend") {
            plot.dots.push((p.0, p.1, "#000000"));
        }
    }
    plot.curves.extend(current);
    plot
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step(hi - lo);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let w = lo.abs().max(1.0) * 0.1;
        (lo - w, hi + w)
    }
}

pub fn render(plot: &Plot) -> anyhow::Result<String> {
    let all: Vec<(f64, f64)> = plot
        .curves
        .iter()
        .flat_map(|c| c.points.iter().copied())
        .chain(plot.dots.iter().map(|&(x, y, _)| (x, y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if all.is_empty() {
        bail!("nothing to plot");
    }
    let (x0, x1) = padded(
        all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&plot.title)
    )?;
    let (bx, by, bw, bh) = (MARGIN, MARGIN, WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    writeln!(
        s,
        r#"<rect x="{bx}" y="{by}" width="{bw}" height="{bh}" fill="none" stroke="black"/>"#
    )?;
    let (xt, xd) = ticks(x0, x1);
    for t in xt {
        let x = sx(t);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            by + bh,
            by + bh + 5.0
        )?;
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.xd$}</text>"#,
            by + bh + 19.0
        )?;
    }
    let (yt, yd) = ticks(y0, y1);
    for t in yt {
        let y = sy(t);
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{bx:.2}" y2="{y:.2}" stroke="black"/>"#,
            bx - 5.0
        )?;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.yd$}</text>"#,
            bx - 8.0,
            y + 4.0
        )?;
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        escape(&plot.x_label)
    )?;
    writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(&plot.y_label)
    )?;
    for c in &plot.curves {
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if c.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#,
            pts.join(" "),
            c.color
        )?;
    }
    for &(x, y, color) in &plot.dots {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
            sx(x),
            sy(y)
        )?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(index: usize, c: f64, t: f64, morse_index: usize, marker: &str) -> BranchRow {
        BranchRow {
            index,
            a: 1.0,
            c,
            t_phi: t,
            t_psi: t,
            u_max: 0.0,
            u_min: 0.0,
            morse_index,
            degenerate: false,
            residual_norm: 0.0,
            marker: marker.into(),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(render(&Plot::default()).is_err());
        assert!(render(&branch_plot(&[], Axes::CVsTPsi, "x")).is_err());
    }

    #[test]
    fn arcs_split_by_index_and_segment() {
        let rows = vec![
            row(0, 0.0, 0.0, 0, "start"),
            row(1, -1.0, 0.5, 0, "fold0"),
            row(2, -0.5, 1.0, 1, "-"),
            row(3, 0.0, 1.5, 1, "Lstart"),
            row(4, 0.0, 2.0, 1, "Lend"),
            row(5, 0.5, 2.5, 1, "-"),
        ];
        let p = branch_plot(&rows, Axes::CVsTPsi, "t");
        let dashed: Vec<_> = p.curves.iter().filter(|c| c.dashed).collect();
        assert_eq!(dashed.len(), 1);
        assert_eq!(dashed[0].points, vec![(0.0, 1.5), (0.0, 2.0)]);
        assert_eq!(p.dots.len(), 3);
        assert_eq!(p.curves[0].color, INDEX_COLORS[0]);
        assert_eq!(p.curves[1].color, INDEX_COLORS[1]);
        let svg = render(&p).unwrap();
        assert_eq!(svg, render(&p).unwrap());
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn tick_steps() {
        assert_eq!(nice_step(6.0), 1.0);
        assert_eq!(nice_step(60.0), 10.0);
        assert_eq!(nice_step(0.12), 0.02);
        let (t, d) = ticks(-0.3, 0.3);
        assert_eq!(d, 1);
        assert!(t.contains(&0.0));
    }
}
