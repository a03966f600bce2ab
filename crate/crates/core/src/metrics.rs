//! Episode traces, evaluation metrics, and trace/plot export.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Everything recorded about one environment step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub x_ref: f64,
    pub y_ref: f64,
    pub theta_ref: f64,
    pub bx: f64,
    pub by: f64,
    pub btheta: f64,
    pub v_cmd: f64,
    pub phi_cmd: f64,
    pub v_d: f64,
    pub phi_d: f64,
    pub attack_active: bool,
    pub range: f64,
    pub bearing: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub chi2: f64,
    pub threshold: f64,
    pub detected: bool,
    pub j_t: f64,
    pub j_e: f64,
    pub j_s: f64,
    pub reward: f64,
}

pub const CSV_HEADER: [&str; 27] = [
    "k", "x", "y", "theta", "x_ref", "y_ref", "theta_ref", "bx", "by", "btheta", "v_cmd", "phi_cmd", "v_d", "phi_d",
    "attack_active", "range", "bearing", "r1", "r2", "r3", "chi2", "threshold", "detected", "j_t", "j_e", "j_s",
    "reward",
];

/// 17 significant digits: exact f64 round trip.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl StepRecord {
    /// Every column as a number, in CSV order; flags are 0 or 1.
    pub fn values(&self) -> [f64; 27] {
        let flag = |b: bool| f64::from(u8::from(b));
        [
            self.k as f64, self.x, self.y, self.theta, self.x_ref, self.y_ref, self.theta_ref, self.bx, self.by,
            self.btheta, self.v_cmd, self.phi_cmd, self.v_d, self.phi_d, flag(self.attack_active), self.range,
            self.bearing, self.r1, self.r2, self.r3, self.chi2, self.threshold, flag(self.detected), self.j_t,
            self.j_e, self.j_s, self.reward,
        ]
    }

    fn to_row(self) -> Vec<String> {
        let values = self.values();
        let mut row = vec![self.k.to_string()];
        for (i, v) in values.iter().enumerate().skip(1) {
            row.push(match i {
                14 | 22 => (*v as u8).to_string(),
                _ => fmt_f64(*v),
            });
        }
        row
    }

    fn from_row(row: &csv::StringRecord) -> std::result::Result<Self, String> {
        if row.len() != CSV_HEADER.len() {
            return Err(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()));
        }
        let f = |i: usize| -> std::result::Result<f64, String> {
            row[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("column {}: {e} ({:?})", CSV_HEADER[i], &row[i]))
        };
        let flag = |i: usize| -> std::result::Result<bool, String> {
            match row[i].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format!("column {}: expected 0 or 1, found {other:?}", CSV_HEADER[i])),
            }
        };
        let k = row[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| format!("column k: {e} ({:?})", &row[0]))?;
        Ok(StepRecord {
            k,
            x: f(1)?,
            y: f(2)?,
            theta: f(3)?,
            x_ref: f(4)?,
            y_ref: f(5)?,
            theta_ref: f(6)?,
            bx: f(7)?,
            by: f(8)?,
            btheta: f(9)?,
            v_cmd: f(10)?,
            phi_cmd: f(11)?,
            v_d: f(12)?,
            phi_d: f(13)?,
            attack_active: flag(14)?,
            range: f(15)?,
            bearing: f(16)?,
            r1: f(17)?,
            r2: f(18)?,
            r3: f(19)?,
            chi2: f(20)?,
            threshold: f(21)?,
            detected: flag(22)?,
            j_t: f(23)?,
            j_e: f(24)?,
            j_s: f(25)?,
            reward: f(26)?,
        })
    }
}

/// Contiguous per-step records of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub records: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attacked(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.attack_active)
    }

    /// Inclusive `(first, last)` step indices of each schedule-active run.
    pub fn attack_windows(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        for r in &self.records {
            match (&mut open, r.attack_active) {
                (Some((_, end)), true) if *end + 1 == r.k => *end = r.k,
                (slot, true) => {
                    if let Some(w) = slot.take() {
                        out.push(w);
                    }
                    *slot = Some((r.k, r.k));
                }
                (slot, false) => {
                    if let Some(w) = slot.take() {
                        out.push(w);
                    }
                }
            }
        }
        out.extend(open);
        out
    }

    /// Checks the trace invariants: contiguous indices, `detected == chi2 > threshold`.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        for (i, r) in self.records.iter().enumerate() {
            if i > 0 && r.k != self.records[i - 1].k + 1 {
                return Err(format!("step index jumps from {} to {}", self.records[i - 1].k, r.k));
            }
            if r.detected != (r.chi2 > r.threshold) {
                return Err(format!("step {}: detected flag disagrees with chi2 > threshold", r.k));
            }
        }
        Ok(())
    }
}

fn attacked_steps(traces: &[EpisodeTrace]) -> impl Iterator<Item = &StepRecord> {
    traces.iter().flat_map(|t| t.attacked())
}

fn attacked_mean(traces: &[EpisodeTrace], metric: &str, value: impl Fn(&StepRecord) -> f64) -> Result<f64> {
    let (n, sum) = attacked_steps(traces).fold((0usize, 0.0), |(n, s), r| (n + 1, s + value(r)));
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("{metric}: no attacked steps")));
    }
    Ok(sum / n as f64)
}

/// Detector recall over schedule-active steps: `TP / (TP + FN)`.
pub fn recall(traces: &[EpisodeTrace]) -> Result<f64> {
    attacked_mean(traces, "recall", |r| f64::from(u8::from(r.detected)))
}

/// Mean attack energy `J_e` per attacked step.
pub fn mean_energy(traces: &[EpisodeTrace]) -> Result<f64> {
    attacked_mean(traces, "energy", |r| r.j_e)
}

/// Mean tracking cost `J_t` per attacked step.
pub fn mean_tracking_error(traces: &[EpisodeTrace]) -> Result<f64> {
    attacked_mean(traces, "tracking error", |r| r.j_t)
}

/// Detector flag rate over every step (the false-alarm rate when nothing is attacked).
pub fn flag_rate(traces: &[EpisodeTrace]) -> Result<f64> {
    let (n, hits) = traces
        .iter()
        .flat_map(|t| t.records.iter())
        .fold((0usize, 0usize), |(n, h), r| (n + 1, h + usize::from(r.detected)));
    if n == 0 {
        return Err(Error::UndefinedMetric("flag rate: empty traces".into()));
    }
    Ok(hits as f64 / n as f64)
}

/// Mean `J_t` over every step.
pub fn mean_tracking_cost_all(traces: &[EpisodeTrace]) -> Result<f64> {
    let (n, sum) = traces
        .iter()
        .flat_map(|t| t.records.iter())
        .fold((0usize, 0.0), |(n, s), r| (n + 1, s + r.j_t));
    if n == 0 {
        return Err(Error::UndefinedMetric("tracking cost: empty traces".into()));
    }
    Ok(sum / n as f64)
}

/// Evaluation summary of one policy under one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall: f64,
    pub energy: f64,
    pub tracking_error: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn from_traces(traces: &[EpisodeTrace], seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            recall: recall(traces)?,
            energy: mean_energy(traces)?,
            tracking_error: mean_tracking_error(traces)?,
            episodes: traces.len(),
            seeds,
        })
    }
}

pub fn export_trace(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in &trace.records {
        w.write_record(r.to_row()).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a trace written by [`export_trace`]. Format errors name the
/// 1-based file line of the first bad row.
pub fn import_trace(path: &Path) -> Result<EpisodeTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| Error::format(path, format!("row 1: {e}")))?,
        None => return Err(Error::format(path, "row 1: missing header")),
    };
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(path, "row 1: header does not match the trace schema"));
    }
    let mut trace = EpisodeTrace::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::format(path, format!("row {line}: {e}")))?;
        let record = StepRecord::from_row(&row).map_err(|m| Error::format(path, format!("row {line}: {m}")))?;
        trace.push(record);
    }
    Ok(trace)
}

const PANEL_W: f64 = 760.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str, width: f64, dash: Option<&str>) -> String {
    let pts: Vec<String> = points.map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"{dash} points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Renders the detector panel (score against threshold with attack windows
/// shaded) above the trajectory overlay (truth, reference, estimate).
pub fn render_plot(trace: &EpisodeTrace) -> String {
    let mut svg = String::new();
    let total_h = 2.0 * PANEL_H + 3.0 * MARGIN;
    let total_w = PANEL_W + 2.0 * MARGIN;
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{total_h}\" viewBox=\"0 0 {total_w} {total_h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    svg.push_str(&detector_panel(trace, MARGIN, MARGIN));
    svg.push_str(&trajectory_panel(trace, MARGIN, 2.0 * MARGIN + PANEL_H));
    svg.push_str("</svg>\n");
    svg
}

fn detector_panel(trace: &EpisodeTrace, ox: f64, oy: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<g id=\"detector\">");
    let _ = writeln!(
        s,
        "<rect x=\"{ox}\" y=\"{oy}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">chi-square score vs threshold (shaded: attack windows)</text>",
        ox,
        oy - 8.0
    );
    if let (Some(first), Some(last)) = (trace.records.first(), trace.records.last()) {
        let k0 = first.k as f64 - 0.5;
        let k1 = last.k as f64 + 0.5;
        let y_max = trace
            .records
            .iter()
            .map(|r| r.chi2.max(r.threshold))
            .fold(0.0_f64, f64::max)
            .max(1e-12)
            * 1.05;
        let sx = |k: f64| ox + (k - k0) / (k1 - k0) * PANEL_W;
        let sy = |v: f64| oy + PANEL_H - (v / y_max).clamp(0.0, 1.0) * PANEL_H;
        for (a, b) in trace.attack_windows() {
            let x0 = sx(a as f64 - 0.5);
            let x1 = sx(b as f64 + 0.5);
            let _ = writeln!(
                s,
                "<rect class=\"attack-window\" data-k-start=\"{a}\" data-k-end=\"{b}\" x=\"{x0:.3}\" y=\"{oy}\" width=\"{:.3}\" height=\"{PANEL_H}\" fill=\"#f4b6b6\" fill-opacity=\"0.6\"/>",
                x1 - x0
            );
        }
        s.push_str(&polyline(
            trace.records.iter().map(|r| (sx(r.k as f64), sy(r.threshold))),
            "#444444",
            1.0,
            Some("6 3"),
        ));
        s.push_str(&polyline(
            trace.records.iter().map(|r| (sx(r.k as f64), sy(r.chi2))),
            "#1f5fa8",
            1.0,
            None,
        ));
        for r in trace.records.iter().filter(|r| r.detected) {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"2\" fill=\"#c0392b\"/>",
                sx(r.k as f64),
                sy(r.chi2)
            );
        }
    }
    s.push_str("</g>\n");
    s
}

fn trajectory_panel(trace: &EpisodeTrace, ox: f64, oy: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<g id=\"trajectory\">");
    let _ = writeln!(
        s,
        "<rect x=\"{ox}\" y=\"{oy}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">trajectory: true (red), reference (black dashed), EKF (blue)</text>",
        ox,
        oy - 8.0
    );
    if !trace.is_empty() {
        let xs = trace.records.iter().flat_map(|r| [r.x, r.x_ref, r.bx]);
        let ys = trace.records.iter().flat_map(|r| [r.y, r.y_ref, r.by]);
        let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        // equal aspect ratio, centred
        let span = ((xmax - xmin) / PANEL_W).max((ymax - ymin) / PANEL_H).max(1e-9) * 1.1;
        let cx = 0.5 * (xmin + xmax);
        let cy = 0.5 * (ymin + ymax);
        let px = |x: f64| ox + PANEL_W / 2.0 + (x - cx) / span;
        let py = |y: f64| oy + PANEL_H / 2.0 - (y - cy) / span;
        s.push_str(&polyline(trace.records.iter().map(|r| (px(r.x_ref), py(r.y_ref))), "black", 1.0, Some("5 4")));
        s.push_str(&polyline(trace.records.iter().map(|r| (px(r.bx), py(r.by))), "#1f5fa8", 1.0, None));
        s.push_str(&polyline(trace.records.iter().map(|r| (px(r.x), py(r.y))), "#c0392b", 1.5, None));
    }
    s.push_str("</g>\n");
    s
}

pub fn export_plot(trace: &EpisodeTrace, path: &Path) -> Result<()> {
    let svg = render_plot(trace);
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(svg.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
