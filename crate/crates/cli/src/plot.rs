//! `kbb plot`: log10 error against iteration as a self-contained SVG.

use std::fmt::Write as _;

use kbb_core::Algo;

use crate::compare::RunDir;
use crate::error::CliError;

/// Errors are clamped here before taking logs, so exact zeros stay finite.
pub const ERROR_FLOOR: f64 = 1e-16;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub fn log_error(e: f64) -> f64 {
    e.max(ERROR_FLOOR).log10()
}

pub fn algo_color(algo: Algo) -> &'static str {
    match algo {
        Algo::Vi => "#d62728",
        Algo::Fvi => "#2ca02c",
        Algo::Kbb => "#1f77b4",
    }
}

/// One polyline: `(iteration, log10 error)`, starting at iteration 0.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub algo: Algo,
    pub points: Vec<(f64, f64)>,
}

pub fn series_from(dirs: &[RunDir]) -> Vec<Series> {
    let mut out = Vec::new();
    for dir in dirs {
        for run in &dir.runs {
            let mut points = vec![(0.0, log_error(run.initial_error))];
            points.extend(run.rows.iter().map(|r| (r.iter as f64, log_error(r.mu_error))));
            out.push(Series {
                label: format!("{}/{} seed {}", dir.label, run.algo, run.seed),
                algo: run.algo,
                points,
            });
        }
    }
    out
}

/// A step from {1, 2, 5} x 10^k giving at most `max_ticks` intervals.
fn tick_step(span: f64, max_ticks: usize) -> f64 {
    let raw = (span / max_ticks as f64).max(1e-12);
    let base = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * base)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * base)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(series: &[Series], title: &str) -> Result<String, CliError> {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        return Err(CliError::Input("nothing to plot".into()));
    }
    let (y_lo, mut y_hi) = (y_min.floor(), y_max.ceil());
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + x / x_max * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );

    // Axes, grid and tick labels.
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let x_step = tick_step(x_max, 10).max(1.0);
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let px = sx(x);
        let _ = writeln!(
            svg,
            r##"<path d="M{px:.2} {TOP} V{:.2}" stroke="#dddddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 18.0
        );
        x += x_step;
    }
    let y_step = tick_step(y_hi - y_lo, 10).max(1.0);
    let mut y = y_lo;
    while y <= y_hi + 1e-9 {
        let py = sy(y);
        let _ = writeln!(
            svg,
            r##"<path d="M{LEFT} {py:.2} H{:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y}</text>"##,
            LEFT + plot_w,
            LEFT - 8.0,
            py + 4.0
        );
        y += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">log10 mu-error</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            algo_color(s.algo),
            pts.join(" "),
            escape(&s.label)
        );
    }

    // Legend: one entry per algorithm present.
    let mut row = 0.0;
    for algo in Algo::ALL {
        if !series.iter().any(|s| s.algo == algo) {
            continue;
        }
        let ly = TOP + 15.0 + 20.0 * row;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{algo}</text>"#,
            lx + 30.0,
            algo_color(algo),
            lx + 38.0,
            ly + 4.0
        );
        row += 1.0;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders every run in `dirs`, titled with the shared environment id.
pub fn plot(dirs: &[RunDir]) -> Result<String, CliError> {
    let series = series_from(dirs);
    if series.is_empty() {
        return Err(CliError::Input("no runs to plot".into()));
    }
    let title = dirs
        .first()
        .and_then(|d| d.manifest["env"]["id"].as_str())
        .unwrap_or("runs")
        .to_string();
    render_svg(&series, &title)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_clamps_zero_error() {
        assert_eq!(log_error(0.0), -16.0);
        assert_eq!(log_error(1e-20), -16.0);
        assert_eq!(log_error(100.0), 2.0);
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(10.0, 10), 1.0);
        assert_eq!(tick_step(15.0, 10), 2.0);
        assert_eq!(tick_step(40.0, 10), 5.0);
        assert_eq!(tick_step(400.0, 10), 50.0);
    }

    #[test]
    fn one_polyline_per_series_and_a_legend_line_per_algo() {
        let s = |algo, seed: u64| Series {
            label: format!("r/{algo} seed {seed}"),
            algo,
            points: vec![(0.0, 0.0), (1.0, -1.0), (2.0, -16.0)],
        };
        let svg = render_svg(&[s(Algo::Kbb, 0), s(Algo::Kbb, 1), s(Algo::Fvi, 0)], "a < b").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<line ").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains(algo_color(Algo::Kbb)) && !svg.contains(algo_color(Algo::Vi)));
        assert!(render_svg(&[], "empty").is_err());
    }
}
