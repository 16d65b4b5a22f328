//! ROC and loss-curve figures. Plotters is built without font support, so
//! the figures carry no text: left panel ROC (false accept vs. true accept,
//! one colour per dataset), right panel losses per epoch (total, detection,
//! alignment) plus the selection EER as a fraction, each scaled to its maximum.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::coord::Shift;
use plotters::prelude::*;

use kws_core::harness::EvalReport;

const SIZE: (u32, u32) = (1000, 450);

fn err(e: impl std::fmt::Debug) -> anyhow::Error {
    anyhow!("plot: {e:?}")
}

pub fn draw(report: &EvalReport, out: &Path) -> Result<()> {
    match out.extension().and_then(|e| e.to_str()) {
        Some("svg") => {
            let root = SVGBackend::new(out, SIZE).into_drawing_area();
            render(&root, report)?;
            root.present().map_err(err)
        }
        Some("png") => {
            let root = BitMapBackend::new(out, SIZE).into_drawing_area();
            render(&root, report)?;
            root.present().map_err(err)
        }
        _ => bail!("plot output must end in .svg or .png"),
    }
}

fn frame<DB: DrawingBackend>(area: &DrawingArea<DB, Shift>) -> Result<()> {
    let (w, h) = area.dim_in_pixel();
    area.draw(&Rectangle::new([(0, 0), (w as i32 - 1, h as i32 - 1)], BLACK.stroke_width(1)))
        .map_err(err)
}

fn render<DB: DrawingBackend>(root: &DrawingArea<DB, Shift>, report: &EvalReport) -> Result<()> {
    root.fill(&WHITE).map_err(err)?;
    let (left, right) = root.split_horizontally(SIZE.0 / 2);
    let left = left.margin(20, 20, 20, 20);
    let right = right.margin(20, 20, 20, 20);

    let mut roc = ChartBuilder::on(&left).build_cartesian_2d(0f64..1f64, 0f64..1f64).map_err(err)?;
    frame(&left)?;
    roc.draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))
        .map_err(err)?;
    if let Some(run) = report.runs.first() {
        for (k, m) in run.datasets.values().enumerate() {
            let colour = Palette99::pick(k).to_rgba();
            let pts = m.roc.iter().map(|&(fa, fr)| (fa, 1.0 - fr));
            roc.draw_series(LineSeries::new(pts, colour.stroke_width(2))).map_err(err)?;
        }
    }

    let curve = &report.curve;
    if curve.is_empty() {
        return Ok(());
    }
    let last = curve.last().map_or(1, |c| c.epoch.max(1)) as f64;
    let mut losses = ChartBuilder::on(&right).build_cartesian_2d(0f64..last, 0f64..1.05f64).map_err(err)?;
    frame(&right)?;
    let series: [(Vec<f64>, RGBColor); 4] = [
        (curve.iter().map(|c| c.loss_total).collect(), BLACK),
        (curve.iter().map(|c| c.loss_detection).collect(), BLUE),
        (curve.iter().map(|c| c.loss_pda).collect(), RED),
        (curve.iter().map(|c| c.valid_eer.unwrap_or(f64::NAN) / 100.0).collect(), GREEN),
    ];
    for (values, colour) in series {
        let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        if max <= 0.0 {
            continue;
        }
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_finite())
            .map(|(c, v)| (c.epoch as f64, v / max))
            .collect();
        losses.draw_series(LineSeries::new(pts, colour.stroke_width(2))).map_err(err)?;
    }
    Ok(())
}
