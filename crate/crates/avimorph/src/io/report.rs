//! CSV reports (metrics, optimizer traces, embeddings, lambda analysis),
//! a trait-matrix CSV reader, and a labeled SVG scatter plot.
//!
//! The CSVs are plain comma-separated text without quoting; species and
//! instance ids must not contain commas (validated on write).

use super::atomic_write;
use crate::error::{Error, Result};
use crate::phylo::{LambdaReport, TraitMatrix};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub id: String,
    pub species: String,
    pub pck05: f64,
    pub iou: f64,
    pub failed: bool,
    pub final_objective: f64,
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(',') || s.contains('\n') {
        return Err(Error::InvalidArgument(format!("CSV field `{s}` contains a separator")));
    }
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("id,species,pck05,iou,failed,final_objective\n");
    for r in rows {
        check_field(&r.id)?;
        check_field(&r.species)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.id, r.species, r.pck05, r.iou, r.failed, r.final_objective
        )
        .unwrap();
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_trace_csv(path: &Path, stages: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("stage,iter,objective\n");
    for (name, trace) in stages {
        check_field(name)?;
        for (i, v) in trace.iter().enumerate() {
            writeln!(out, "{name},{i},{v}").unwrap();
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_embedding_csv(path: &Path, species: &[String], coords: &[[f64; 2]]) -> Result<()> {
    let mut out = String::from("species,x,y\n");
    for (s, c) in species.iter().zip(coords) {
        check_field(s)?;
        writeln!(out, "{s},{},{}", c[0], c[1]).unwrap();
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_lambda_csv(path: &Path, report: &LambdaReport) -> Result<()> {
    let mut out = String::from("dim,lambda,p_value,loglik,loglik_zero\n");
    for (d, dim) in report.per_dim.iter().enumerate() {
        writeln!(
            out,
            "{d},{},{},{},{}",
            dim.lambda, dim.p_value, dim.loglik, dim.loglik_zero
        )
        .unwrap();
    }
    writeln!(out, "pooled,{},{},,", report.mean_lambda, report.fisher_p).unwrap();
    atomic_write(path, out.as_bytes())
}

pub fn write_traits_csv(path: &Path, traits: &TraitMatrix) -> Result<()> {
    let d = traits.dims();
    let mut out = String::from("species");
    for k in 0..d {
        write!(out, ",c{k}").unwrap();
    }
    out.push('\n');
    for (s, row) in traits.species.iter().zip(&traits.data) {
        check_field(s)?;
        write!(out, "{s}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Read a trait CSV: header line, a species column, then numeric columns.
pub fn read_traits_csv(path: &Path) -> Result<TraitMatrix> {
    let text = super::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let _header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty traits CSV"))?;
    let mut species = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let name = fields
            .next()
            .ok_or_else(|| Error::parse(path, format!("bad row {}", lineno + 2)))?;
        species.push(name.trim().to_string());
        let row: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad number `{f}` at row {}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        data.push(row);
    }
    TraitMatrix::new(species, data)
}

/// Minimal labeled scatter plot.
pub fn write_svg_scatter(
    path: &Path,
    title: &str,
    species: &[String],
    coords: &[[f64; 2]],
    segments: &[([f64; 2], [f64; 2])],
) -> Result<()> {
    let (w, h) = (640.0, 480.0);
    let margin = 60.0;
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for c in coords.iter().chain(segments.iter().flat_map(|(a, b)| [a, b])) {
        for k in 0..2 {
            min[k] = min[k].min(c[k]);
            max[k] = max[k].max(c[k]);
        }
    }
    for k in 0..2 {
        if !(max[k] > min[k]) {
            min[k] -= 1.0;
            max[k] += 1.0;
        }
    }
    let sx = (w - 2.0 * margin) / (max[0] - min[0]);
    let sy = (h - 2.0 * margin) / (max[1] - min[1]);
    let px = |c: &[f64; 2]| {
        (
            margin + (c[0] - min[0]) * sx,
            h - margin - (c[1] - min[1]) * sy,
        )
    };

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        w / 2.0
    )
    .unwrap();
    for (a, b) in segments {
        let (x1, y1) = px(a);
        let (x2, y2) = px(b);
        writeln!(
            out,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>"
        )
        .unwrap();
    }
    for (s, c) in species.iter().zip(coords) {
        let (x, y) = px(c);
        writeln!(
            out,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#2266cc\"/>"
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{s}</text>",
            x + 6.0,
            y - 4.0
        )
        .unwrap();
    }
    writeln!(out, "</svg>").unwrap();
    atomic_write(path, out.as_bytes())
}
