//! Per-joint feedback from the first block's joint attention.
//!
//! The role of joint `j` in frame `t` is the column sum of that frame's
//! attention map: how much every joint attends to `j`.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::graph::JointGraph;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFeedback {
    pub score: f64,
    /// Row-stochastic attention, `[T, N, N]`.
    pub map: Tensor<f64>,
    /// Column sums of `map`, `[T, N]`.
    pub joint_role: Tensor<f64>,
    /// Time-mean role per joint, min-max scaled to `[0, 1]`.
    pub summary_role: Vec<f64>,
}

/// `role[t, j] = Σ_i map[t, i, j]`.
pub fn joint_role(map: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = map.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::InvalidShape(format!(
            "attention map must be [T, N, N], got {s:?}"
        )));
    }
    let (t, n) = (s[0], s[1]);
    let mut out = vec![0.0; t * n];
    for (frame, role) in map.data().chunks(n * n).zip(out.chunks_mut(n)) {
        for row in frame.chunks(n) {
            for (r, &v) in role.iter_mut().zip(row) {
                *r += v;
            }
        }
    }
    Tensor::new([t, n], out)
}

/// Mean over frames, then min-max scaling. A constant profile maps to all
/// zeros.
pub fn summarize_roles(role: &Tensor<f64>) -> Result<Vec<f64>> {
    let s = role.shape();
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::Contract(format!("joint roles must be [T >= 1, N], got {s:?}")));
    }
    let (t, n) = (s[0], s[1]);
    let mut mean = vec![0.0; n];
    for row in role.data().chunks(n) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(mean.iter().map(|m| (m - lo) / (hi - lo)).collect())
}

/// Scores a raw sequence and derives feedback from the configured block.
pub fn extract_feedback<T: Scalar>(model: &Model<T>, seq: &SkeletonSequence) -> Result<AttentionFeedback> {
    let (score, map) = model.score_with_attention(seq, model.config().feedback_block)?;
    let map = map.cast::<f64>();
    let joint_role = joint_role(&map)?;
    let summary_role = summarize_roles(&joint_role)?;
    Ok(AttentionFeedback {
        score,
        map,
        joint_role,
        summary_role,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackFormat {
    Csv,
    Svg,
}

impl FeedbackFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FeedbackFormat::Csv => "csv",
            FeedbackFormat::Svg => "svg",
        }
    }

    /// Parses a comma-separated list such as `svg,csv`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            let f: FeedbackFormat = part.parse()?;
            if !out.contains(&f) {
                out.push(f);
            }
        }
        Ok(out)
    }
}

impl std::str::FromStr for FeedbackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FeedbackFormat::Csv),
            "svg" => Ok(FeedbackFormat::Svg),
            other => Err(Error::Config(format!(
                "unknown feedback format {other:?} (expected svg or csv)"
            ))),
        }
    }
}

/// Joint roles as CSV: header `joint_0..joint_{N-1}`, one row per frame.
pub fn roles_csv(role: &Tensor<f64>) -> Result<String> {
    let s = role.shape();
    if s.len() != 2 {
        return Err(Error::InvalidShape(format!("joint roles must be [T, N], got {s:?}")));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..s[1]).map(|j| format!("joint_{j}")))?;
    for row in role.data().chunks(s[1]) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Parses CSV written by [`roles_csv`].
pub fn parse_roles_csv(text: &str) -> Result<Tensor<f64>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let n = r.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    Tensor::new([rows, n], data)
}

const MIN_RADIUS: f64 = 3.0;
const MAX_EXTRA_RADIUS: f64 = 14.0;

fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let g = (255.0 * (1.0 - v)).round() as u8;
    let b = (255.0 * (1.0 - 0.8 * v)).round() as u8;
    format!("#ff{g:02x}{b:02x}")
}

/// Self-contained SVG: the skeleton with circle radius growing with the
/// summary role, beside a frames-by-joints heatmap of the raw roles.
pub fn feedback_svg(fb: &AttentionFeedback, graph: &JointGraph) -> Result<String> {
    let s = fb.joint_role.shape();
    let (t, n) = (s[0], s[1]);
    if n != graph.num_joints() || fb.summary_role.len() != n {
        return Err(Error::Config(format!(
            "feedback covers {n} joints, graph {:?} has {}",
            graph.name(),
            graph.num_joints()
        )));
    }
    let layout = graph.layout();
    let (min_x, max_x) = layout.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p[0]), b.max(p[0]))
    });
    let (min_y, max_y) = layout.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p[1]), b.max(p[1]))
    });
    let (pw, ph, margin) = (320.0, 420.0, 30.0);
    let scale = ((pw - 2.0 * margin) / (max_x - min_x).max(1e-9)).min((ph - 2.0 * margin) / (max_y - min_y).max(1e-9));
    let pos = |j: usize| {
        let [x, y] = layout[j];
        (margin + (x - min_x) * scale, ph - margin - (y - min_y) * scale)
    };

    let cell_w = (360.0 / n as f64).max(4.0);
    let cell_h = (ph - 2.0 * margin) / t.max(1) as f64;
    let hx = pw + margin;
    let width = hx + cell_w * n as f64 + margin;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{ph:.1}" viewBox="0 0 {width:.1} {ph:.1}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{margin:.1}" y="18" font-family="sans-serif" font-size="12">score {:.4}</text>"#,
        fb.score
    );
    let _ = writeln!(svg, r#"<g id="skeleton" stroke="gray" stroke-width="2">"#);
    for &(a, b) in graph.edges() {
        let ((x1, y1), (x2, y2)) = (pos(a), pos(b));
        let _ = writeln!(svg, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}"/>"#);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g id="joints" stroke="black" stroke-width="0.5">"#);
    for (j, &r) in fb.summary_role.iter().enumerate() {
        let (x, y) = pos(j);
        let radius = MIN_RADIUS + MAX_EXTRA_RADIUS * r.clamp(0.0, 1.0);
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{}" fill-opacity="0.85"><title>joint {j}: {r:.4}</title></circle>"#,
            heat_color(r)
        );
    }
    let _ = writeln!(svg, "</g>");

    let lo = fb.joint_role.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fb.joint_role.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let _ = writeln!(svg, r#"<g id="heatmap">"#);
    for (ti, row) in fb.joint_role.data().chunks(n).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell_w:.2}" height="{cell_h:.3}" fill="{}"/>"#,
                hx + j as f64 * cell_w,
                margin + ti as f64 * cell_h,
                heat_color((v - lo) / span)
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{hx:.1}" y="{:.1}" font-family="sans-serif" font-size="11">joints (columns) by frames (rows)</text>"#,
        ph - 10.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `fb` to `out_path` in the requested format.
pub fn render_feedback(
    fb: &AttentionFeedback,
    graph: &JointGraph,
    out_path: impl AsRef<Path>,
    format: FeedbackFormat,
) -> Result<()> {
    let path = out_path.as_ref();
    let body = match format {
        FeedbackFormat::Csv => roles_csv(&fb.joint_role)?,
        FeedbackFormat::Svg => feedback_svg(fb, graph)?,
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_column() {
        let n = 7;
        let map = Tensor::from_fn([2, n, n], |i| if i % n == 5 { 1.0 } else { 0.0 });
        let role = joint_role(&map).unwrap();
        assert_eq!(role.data()[5], n as f64);
        assert_eq!(role.data().iter().sum::<f64>(), 2.0 * n as f64);
        let summary = summarize_roles(&role).unwrap();
        assert_eq!(summary[5], 1.0);
        assert_eq!(summary.iter().filter(|&&v| v == 0.0).count(), n - 1);
    }

    #[test]
    fn constant_roles_summarize_to_zero() {
        let role = Tensor::full([3, 4], 1.0);
        assert_eq!(summarize_roles(&role).unwrap(), vec![0.0; 4]);
        assert!(summarize_roles(&Tensor::<f64>::zeros([0, 4])).is_err());
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("png".parse::<FeedbackFormat>(), Err(Error::Config(_))));
        assert_eq!(
            FeedbackFormat::parse_list("svg,csv").unwrap(),
            vec![FeedbackFormat::Svg, FeedbackFormat::Csv]
        );
    }
}
