//! CSV, JSON-lines and SVG writers. All output is a pure function of the inputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| io_err(&p, e))?;
        w.write_record(header).map_err(|e| io_err(&p, e))?;
        for r in rows {
            w.write_record(r.as_ref()).map_err(|e| io_err(&p, e))?;
        }
        w.flush().map_err(|e| io_err(&p, e))
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), CliError> {
        let p = self.path(name);
        let mut w = BufWriter::new(File::create(&p).map_err(|e| io_err(&p, e))?);
        for r in records {
            let line = serde_json::to_string(r).map_err(|e| io_err(&p, e))?;
            writeln!(w, "{line}").map_err(|e| io_err(&p, e))?;
        }
        w.flush().map_err(|e| io_err(&p, e))
    }

    pub fn plot(&mut self, name: &str, plot: &Plot) -> Result<(), CliError> {
        let p = self.path(name);
        plot.render(&p).map_err(|e| io_err(&p, e))
    }
}

fn io_err(p: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", p.display()))
}

/// Shortest round-trip formatting, so equal values always print identically.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Vertical marker lines.
    pub markers: Vec<(String, f64)>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new(), markers: Vec::new() }
    }

    pub fn series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        let points = points.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        self.series.push(Series { label: label.into(), points });
        self
    }

    pub fn marker(mut self, label: &str, x: f64) -> Self {
        self.markers.push((label.into(), x));
        self
    }

    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for (_, m) in &self.markers {
            x0 = x0.min(*m);
            x1 = x1.max(*m);
        }
        let pad = |a: f64, b: f64| {
            if !a.is_finite() {
                (0.0, 1.0)
            } else if b - a <= 1e-300 {
                (a - 0.5, b + 0.5)
            } else {
                (a - 0.05 * (b - a), b + 0.05 * (b - a))
            }
        };
        (pad(x0, x1), pad(y0, y1))
    }

    fn render(&self, path: &Path) -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let ((x0, x1), (y0, y1)) = self.bounds();
        let mut chart = ChartBuilder::on(&root)
            .caption(&self.title, ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(self.x_label.as_str()).y_desc(self.y_label.as_str()).draw()?;
        for (i, s) in self.series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))?
                .label(s.label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        for (label, m) in &self.markers {
            chart
                .draw_series(LineSeries::new([(*m, y0), (*m, y1)], BLACK.mix(0.6)))?
                .label(format!("{label} = {m:.5}"))
                .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.mix(0.6)));
        }
        if !self.series.is_empty() || !self.markers.is_empty() {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        }
        root.present()?;
        Ok(())
    }
}
