//! Task-weight trajectories as SVG line charts with a sibling CSV holding
//! exactly the plotted points.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::strategies::RunRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One plotted point.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoint {
    pub seed: u64,
    pub task: String,
    pub step: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOutput {
    pub svg: PathBuf,
    pub csv: PathBuf,
    pub points: Vec<PlotPoint>,
}

/// Trailing moving average over `window` rows; `None` plots raw values.
fn smooth(v: &[f64], window: Option<usize>) -> Vec<f64> {
    match window {
        Some(w) if w > 1 => (0..v.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect(),
        _ => v.to_vec(),
    }
}

fn points(records: &[RunRecord], window: Option<usize>) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for r in records {
        for (t, task) in r.tasks.iter().enumerate() {
            let alphas: Vec<f64> = r.steps.iter().map(|s| s.alpha[t]).collect();
            for (s, a) in r.steps.iter().zip(smooth(&alphas, window)) {
                out.push(PlotPoint { seed: r.seed, task: task.clone(), step: s.step, alpha: a });
            }
        }
    }
    out
}

pub fn points_to_csv(points: &[PlotPoint]) -> String {
    let mut s = String::from("seed,task,step,alpha\n");
    for p in points {
        writeln!(s, "{},{},{},{:?}", p.seed, p.task, p.step, p.alpha).unwrap();
    }
    s
}

pub fn parse_points_csv(text: &str) -> Result<Vec<PlotPoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Invalid(format!("plot csv: {e}")))?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::Invalid("plot csv: short row".into()));
        let bad = |what: &str| Error::Invalid(format!("plot csv: bad {what}"));
        out.push(PlotPoint {
            seed: field(0)?.parse().map_err(|_| bad("seed"))?,
            task: field(1)?.to_string(),
            step: field(2)?.parse().map_err(|_| bad("step"))?,
            alpha: field(3)?.parse().map_err(|_| bad("alpha"))?,
        });
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg(records: &[RunRecord], points: &[PlotPoint], window: Option<usize>) -> String {
    let tasks = &records[0].tasks;
    let max_step = points.iter().map(|p| p.step).max().unwrap_or(0).max(1) as f64;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = |step: usize| LEFT + pw * step as f64 / max_step;
    let y = |a: f64| TOP + ph * (1.0 - a);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let strategy = &records[0].strategy;
    let seeds: Vec<String> = records.iter().map(|r| r.seed.to_string()).collect();
    writeln!(s, r#"<text x="{LEFT}" y="24" font-size="16">Task weights, {} (seeds {})</text>"#, escape(strategy), seeds.join(", ")).unwrap();
    let log_period = records[0].config.log_period;
    let smoothing = match window {
        Some(w) if w > 1 => format!("trailing mean over {w} rows"),
        _ => "raw values, no smoothing".to_string(),
    };
    writeln!(s, r##"<text x="{LEFT}" y="44" font-size="12" fill="#555">logged every {log_period} steps; {smoothing}</text>"##).unwrap();

    // axes, grid and ticks
    writeln!(s, r##"<g stroke="#ccc" stroke-width="1">"##).unwrap();
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        writeln!(s, r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, y(a), LEFT + pw, y(a)).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/></g>"#, y(0.0), LEFT + pw, y(0.0), y(0.0)).unwrap();
    writeln!(s, r#"<g font-size="11" text-anchor="end">"#).unwrap();
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        writeln!(s, r#"<text x="{:.2}" y="{:.2}">{a:.2}</text>"#, LEFT - 6.0, y(a) + 4.0).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g font-size="11" text-anchor="middle">"#).unwrap();
    for k in 0..=5 {
        let step = (max_step * k as f64 / 5.0).round() as usize;
        writeln!(s, r#"<text x="{:.2}" y="{:.2}">{step}</text>"#, x(step), y(0.0) + 16.0).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">step</text>"#, LEFT + pw / 2.0, HEIGHT - 14.0).unwrap();
    writeln!(s, r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">task weight (softmax)</text>"#, TOP + ph / 2.0, TOP + ph / 2.0).unwrap();

    // one polyline per (record, task)
    for r in records {
        for (t, task) in tasks.iter().enumerate() {
            let pts: Vec<String> = points
                .iter()
                .filter(|p| p.seed == r.seed && &p.task == task)
                .map(|p| format!("{:.2},{:.2}", x(p.step), y(p.alpha)))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="0.8" points="{}"/>"#,
                PALETTE[t % PALETTE.len()],
                pts.join(" ")
            )
            .unwrap();
        }
    }

    // legend
    let lx = LEFT + pw + 20.0;
    for (t, task) in tasks.iter().enumerate() {
        let ly = TOP + 10.0 + 22.0 * t as f64;
        let c = PALETTE[t % PALETTE.len()];
        writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="3"/>"#, lx + 24.0).unwrap();
        let label = if t == 0 { format!("{} (end)", task) } else { task.clone() };
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#, lx + 30.0, ly + 4.0, escape(&label)).unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}

/// Draws every task's weight against the step for each record and writes
/// the SVG to `out` and the plotted points to `out` with a `.csv` extension.
/// All records must share one task list.
pub fn render_trajectories(records: &[RunRecord], out: &Path, window: Option<usize>) -> Result<PlotOutput> {
    let first = records.first().ok_or_else(|| Error::Invalid("no records to plot".into()))?;
    if records.iter().any(|r| r.tasks != first.tasks) {
        return Err(Error::Invalid("records have different task lists".into()));
    }
    if records.iter().all(|r| r.steps.is_empty()) {
        return Err(Error::Invalid("records contain no logged steps".into()));
    }
    let pts = points(records, window);
    let csv_path = out.with_extension("csv");
    if csv_path == out {
        return Err(Error::Invalid("plot output needs an extension other than .csv".into()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(out, svg(records, &pts, window).as_bytes())?;
    write_atomic(&csv_path, points_to_csv(&pts).as_bytes())?;
    Ok(PlotOutput { svg: out.to_path_buf(), csv: csv_path, points: pts })
}
