//! Report files: JSON, CSV, SVG figures with their data, and run manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::HeadMatrix;
use crate::corpus::Corpus;
use crate::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadValue {
    pub layer: usize,
    pub head: usize,
    pub value: f64,
}

pub fn head_rows(m: &HeadMatrix) -> Vec<HeadValue> {
    m.triples().into_iter().map(|(layer, head, value)| HeadValue { layer, head, value }).collect()
}

/// `(layer, head, value)` CSV of a head matrix.
pub fn write_head_csv(path: &Path, m: &HeadMatrix) -> Result<()> {
    write_csv(path, &head_rows(m))
}

pub fn read_head_csv(path: &Path) -> Result<HeadMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let rows: Vec<HeadValue> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let layers = rows.iter().map(|r| r.layer).max().unwrap_or(0);
    let heads = rows.iter().map(|r| r.head).max().unwrap_or(0);
    if rows.len() != layers * heads {
        return Err(Error::MalformedRow { row: rows.len(), reason: "incomplete head grid".into() });
    }
    let mut m = HeadMatrix::zeros(layers, heads);
    for r in rows {
        *m.get_mut(crate::attention::HeadId::new(r.layer, r.head)) = r.value;
    }
    Ok(m)
}

/// One point of a plotted curve, optionally with an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

fn csv_sibling(svg: &Path) -> PathBuf {
    svg.with_extension("csv")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Line plot with optional interval bars. The points are also written to
/// a CSV next to the SVG.
pub fn line_plot(svg: &Path, title: &str, x_label: &str, y_label: &str, points: &[CurvePoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput(format!("plot {title}")));
    }
    write_csv(&csv_sibling(svg), points)?;
    let (x0, x1) = span(points.iter().map(|p| p.x));
    let (y0, y1) = span(points.iter().flat_map(|p| [Some(p.y), p.low, p.high]).flatten());
    let root = SVGBackend::new(svg, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    let mut names: Vec<&str> = points.iter().map(|p| p.series.as_str()).collect();
    names.dedup();
    let mut seen = std::collections::BTreeSet::new();
    names.retain(|n| seen.insert(*n));
    for (i, name) in names.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<&CurvePoint> = points.iter().filter(|p| p.series == *name).collect();
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.x, p.y)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().filter_map(|p| {
                Some(ErrorBar::new_vertical(p.x, p.low?, p.y, p.high?, color.filled(), 6))
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Heatmap of a head matrix: layers down, heads across. The values are
/// also written as a `(layer, head, value)` CSV next to the SVG.
pub fn head_heatmap(svg: &Path, title: &str, m: &HeadMatrix) -> Result<()> {
    write_head_csv(&csv_sibling(svg), m)?;
    let (lo, hi) = m.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let root = SVGBackend::new(svg, (640, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} [{lo:.3}, {hi:.3}]"), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(36)
        .build_cartesian_2d(0.5..m.heads as f64 + 0.5, m.layers as f64 + 0.5..0.5)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("head").y_desc("layer").disable_mesh().draw().map_err(plot_err)?;
    chart
        .draw_series(m.triples().into_iter().map(|(l, h, v)| {
            let t = (v - lo) / range;
            let c = RGBColor((255.0 * t) as u8, (80.0 + 100.0 * (1.0 - t)) as u8, (255.0 * (1.0 - t)) as u8);
            let (x, y) = (h as f64, l as f64);
            Rectangle::new([(x - 0.5, y - 0.5), (x + 0.5, y + 0.5)], c.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarValue {
    pub category: String,
    pub value: f64,
}

/// Bar chart; the bars are also written to a CSV next to the SVG.
pub fn bar_chart(svg: &Path, title: &str, bars: &[BarValue]) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::EmptyInput(format!("plot {title}")));
    }
    write_csv(&csv_sibling(svg), bars)?;
    let top = bars.iter().map(|b| b.value).fold(0.0, f64::max).max(1e-9) * 1.1;
    let root = SVGBackend::new(svg, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.category.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5..bars.len() as f64 - 0.5, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bars.len())
        .x_label_formatter(&|x| labels.get(x.round() as usize).cloned().unwrap_or_default())
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, b)| {
            let x = i as f64;
            Rectangle::new([(x - 0.35, 0.0), (x + 0.35, b.value)], Palette99::pick(i).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// SHA-256 over the corpus contents in pair order.
pub fn corpus_hash(corpus: &Corpus) -> Result<String> {
    let mut h = Sha256::new();
    for p in &corpus.pairs {
        h.update(serde_json::to_vec(p)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Record of one pipeline command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub data_hash: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<PathBuf>,
    pub metrics: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            data_hash: None,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            metrics: serde_json::Value::Null,
            started_at: unix_now(),
            finished_at: None,
        }
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes the manifest under `dir/manifests/` without replacing any
    /// earlier one, and appends it to `dir/manifests/runs.jsonl`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_at = Some(unix_now());
        let mdir = dir.join("manifests");
        std::fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
        let stem = format!("{}-{}", self.command.replace(' ', "_"), self.started_at as u64);
        let text = serde_json::to_string_pretty(&self)?;
        let mut k = 0;
        let path = loop {
            let name = if k == 0 { format!("{stem}.json") } else { format!("{stem}.{k}.json") };
            let p = mdir.join(name);
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&p) {
                Ok(mut f) => {
                    f.write_all(text.as_bytes()).map_err(|e| Error::io(&p, e))?;
                    break p;
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
                Err(e) => return Err(Error::io(p, e)),
            }
        };
        let log = mdir.join("runs.jsonl");
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{}", serde_json::to_string(&self)?).map_err(|e| Error::io(&log, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_csv_rederives_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let m = HeadMatrix { layers: 3, heads: 2, values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6] };
        let svg = dir.path().join("fig/heat.svg");
        head_heatmap(&svg, "distance", &m).unwrap();
        assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
        assert_eq!(read_head_csv(&svg.with_extension("csv")).unwrap(), m);
    }

    #[test]
    fn line_plot_writes_points() {
        let dir = tempfile::tempdir().unwrap();
        let pts: Vec<CurvePoint> = (0..4)
            .map(|i| CurvePoint { series: "a".into(), x: i as f64 / 10.0, y: 0.5 + i as f64 / 20.0, low: Some(0.4), high: Some(0.9) })
            .chain([CurvePoint { series: "b".into(), x: 0.0, y: 0.5, low: None, high: None }])
            .collect();
        let svg = dir.path().join("curve.svg");
        line_plot(&svg, "curve", "x", "y", &pts).unwrap();
        let mut r = csv::Reader::from_path(svg.with_extension("csv")).unwrap();
        let back: Vec<CurvePoint> = r.deserialize().map(|x| x.unwrap()).collect();
        assert_eq!(back, pts);
        let bars = [BarValue { category: "first".into(), value: 2.0 }, BarValue { category: "last".into(), value: 3.0 }];
        bar_chart(&dir.path().join("bars.svg"), "bars", &bars).unwrap();
        assert!(dir.path().join("bars.csv").exists());
    }

    #[test]
    fn manifests_never_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunManifest::start("train", serde_json::json!({"lr": 0.1}));
        let b = a.clone();
        let pa = a.finish(dir.path()).unwrap();
        let pb = b.finish(dir.path()).unwrap();
        assert_ne!(pa, pb);
        let log = std::fs::read_to_string(dir.path().join("manifests/runs.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}
