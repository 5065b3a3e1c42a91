//! Artifact files: samples and trace CSVs, the SVG scatter and the run directory.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use das_core::smc::SmcTrace;
use ndarray::Array2;

/// One method's samples. `labels[i] = (sweep, particle)`.
#[derive(Debug, Clone)]
pub struct Panel {
    pub method: String,
    pub samples: Array2<f64>,
    pub labels: Vec<(usize, usize)>,
    /// Colour index per point (mode or method).
    pub colors: Vec<usize>,
}

impl Panel {
    /// Samples from independent chains: sweep = row, particle = 0.
    pub fn iid(method: impl Into<String>, samples: Array2<f64>) -> Self {
        let n = samples.nrows();
        Self { method: method.into(), samples, labels: (0..n).map(|i| (i, 0)).collect(), colors: Vec::new() }
    }

    pub fn pooled(method: impl Into<String>, samples: Array2<f64>, particles: usize) -> Self {
        let n = samples.nrows();
        Self {
            method: method.into(),
            samples,
            labels: (0..n).map(|i| (i / particles, i % particles)).collect(),
            colors: Vec::new(),
        }
    }
}

pub fn samples_csv(panels: &[Panel]) -> String {
    let d = panels.first().map_or(0, |p| p.samples.ncols());
    let mut out = String::from("method,sweep,particle");
    for j in 0..d {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for p in panels {
        for (row, (sweep, particle)) in p.samples.rows().into_iter().zip(&p.labels) {
            let _ = write!(out, "{},{sweep},{particle}", p.method);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Per-step SMC traces, one block per labelled run.
pub fn traces_csv<'a>(runs: impl IntoIterator<Item = (String, &'a SmcTrace)>) -> String {
    let mut out = format!("run,sweep,{}\n", SmcTrace::CSV_HEADER);
    for (label, trace) in runs {
        for line in trace.to_csv().lines().skip(1) {
            let _ = writeln!(out, "{label},{},{line}", trace.sweep);
        }
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const SIZE: f64 = 260.0;
const PAD: f64 = 34.0;
const PER_ROW: usize = 3;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of coordinates `axes` for every panel on a shared frame. The frame
/// is fitted to `frame_panel`; points outside it are counted, not drawn.
pub fn scatter_svg(panels: &[Panel], axes: (usize, usize), frame_panel: usize) -> String {
    let (a, b) = axes;
    let frame = &panels[frame_panel.min(panels.len() - 1)].samples;
    let range = |j: usize| {
        let (lo, hi) = frame
            .column(j)
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !lo.is_finite() {
            return (-1.0, 1.0);
        }
        let pad = 0.25 * (hi - lo).max(1e-3);
        (lo - pad, hi + pad)
    };
    let ((x0, x1), (y0, y1)) = (range(a), range(b));
    let cols = panels.len().min(PER_ROW);
    let rows = panels.len().div_ceil(PER_ROW);
    let cell = SIZE + 2.0 * PAD;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = cols as f64 * cell,
        h = rows as f64 * cell
    );
    for (k, p) in panels.iter().enumerate() {
        let ox = (k % PER_ROW) as f64 * cell + PAD;
        let oy = (k / PER_ROW) as f64 * cell + PAD;
        let mut outside = 0;
        let mut dots = String::new();
        for (i, row) in p.samples.rows().into_iter().enumerate() {
            let (x, y) = (row[a], row[b]);
            if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
                outside += 1;
                continue;
            }
            let px = ox + (x - x0) / (x1 - x0) * SIZE;
            let py = oy + SIZE - (y - y0) / (y1 - y0) * SIZE;
            let color = PALETTE[p.colors.get(i).copied().unwrap_or(k) % PALETTE.len()];
            let _ = writeln!(dots, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.6\" fill=\"{color}\" fill-opacity=\"0.6\"/>");
        }
        let title = if outside > 0 { format!("{} ({outside} outside)", p.method) } else { p.method.clone() };
        let _ = writeln!(
            svg,
            "<g>\n<rect x=\"{ox}\" y=\"{oy}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"#444\"/>\n<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"13\">{}</text>",
            escape(&title),
            tx = ox + SIZE / 2.0,
            ty = oy - 10.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{ox}\" y=\"{yb}\">{x0:.2}</text><text x=\"{xr}\" y=\"{yb}\" text-anchor=\"end\">{x1:.2}</text><text x=\"{xm}\" y=\"{yb}\" text-anchor=\"middle\">x{a}</text>",
            yb = oy + SIZE + 14.0,
            xr = ox + SIZE,
            xm = ox + SIZE / 2.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{xl}\" y=\"{yt}\" text-anchor=\"end\">{y1:.2}</text><text x=\"{xl}\" y=\"{yd}\" text-anchor=\"end\">{y0:.2}</text><text x=\"{xl}\" y=\"{ym}\" text-anchor=\"end\">x{b}</text>",
            xl = ox - 3.0,
            yt = oy + 10.0,
            yd = oy + SIZE,
            ym = oy + SIZE / 2.0
        );
        svg.push_str(&dots);
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Creates `<root>/<suite>-<timestamp>-seed<seed>`, adding a counter when the
/// name is taken.
pub fn create_run_dir(root: &Path, suite: &str, seed: u64) -> io::Result<PathBuf> {
    fs::create_dir_all(root)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{suite}-{stamp}-seed{seed}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}
