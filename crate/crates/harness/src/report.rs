//! Offline reports over a directory of finished runs: compute-saving
//! crossings against the baseline and a loss-vs-compute overlay.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use serde::{Deserialize, Serialize};
use staged_core::schedule::LossCurve;

use crate::checkpoint::read_json;
use crate::error::{HarnessError, IoContext, Result};
use crate::experiment::{crossing, read_curve, write_crossings, Crossing, ExperimentReport, RunManifest};

pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub curve: LossCurve,
}

/// Every `<run>/seed-*/manifest.json` under `dir`, sorted by run then seed.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for run in std::fs::read_dir(dir).at(dir)? {
        let run = run.at(dir)?.path();
        if !run.is_dir() {
            continue;
        }
        for seed in std::fs::read_dir(&run).at(&run)? {
            let seed = seed.at(&run)?.path();
            let path = seed.join("manifest.json");
            if !path.is_file() {
                continue;
            }
            let manifest = RunManifest::read(&path)?;
            let curve = read_curve(&seed.join(&manifest.curve))?;
            out.push(RunRecord {
                dir: seed,
                manifest,
                curve,
            });
        }
    }
    out.sort_by(|a, b| (&a.manifest.run, a.manifest.seed).cmp(&(&b.manifest.run, b.manifest.seed)));
    Ok(out)
}

/// The baseline named in `experiment.json`, or else the only run name
/// whose plans have a single stage.
pub fn find_baseline(dir: &Path, records: &[RunRecord]) -> Option<String> {
    let summary = dir.join("experiment.json");
    if summary.is_file() {
        if let Ok(r) = read_json::<ExperimentReport>(&summary) {
            return r.baseline;
        }
    }
    let mut single: Vec<&str> = records
        .iter()
        .filter(|r| r.manifest.plan.m() == 1)
        .map(|r| r.manifest.run.as_str())
        .collect();
    single.dedup();
    (single.len() == 1).then(|| single[0].to_string())
}

pub fn crossings(records: &[RunRecord], baseline: &str) -> Vec<Crossing> {
    let mut rows = Vec::new();
    for b in records.iter().filter(|r| r.manifest.run == baseline) {
        let Some(opt) = &b.manifest.optimality else { continue };
        for r in records.iter().filter(|r| r.manifest.run != baseline && r.manifest.seed == b.manifest.seed) {
            rows.push(crossing(r.manifest.seed, &r.manifest.run, opt, &r.curve));
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingSummary {
    pub run: String,
    pub seeds: usize,
    /// Seeds in which the run reached the baseline loss with strictly less
    /// compute.
    pub seeds_saving: usize,
    pub mean_saving: Option<f64>,
}

pub fn summarize(rows: &[Crossing]) -> Vec<SavingSummary> {
    let mut names: Vec<&str> = rows.iter().map(|r| r.run.as_str()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&Crossing> = rows.iter().filter(|r| r.run == name).collect();
            let savings: Vec<f64> = mine.iter().filter_map(|r| r.saving).collect();
            SavingSummary {
                run: name.into(),
                seeds: mine.len(),
                seeds_saving: savings.iter().filter(|&&s| s > 0.0).count(),
                mean_saving: (!savings.is_empty()).then(|| savings.iter().sum::<f64>() / savings.len() as f64),
            }
        })
        .collect()
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Validation loss against log10(compute), one colour per run name, with
/// vertical ticks at growth events. Unlabelled; the CSV carries the
/// numbers.
pub fn plot_curves(records: &[RunRecord], path: &Path, width: u32, height: u32) -> Result<()> {
    let points = records.iter().flat_map(|r| r.curve.samples.iter()).filter(|s| s.compute > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in points {
        let x = s.compute.log10();
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(s.val_loss);
        y1 = y1.max(s.val_loss);
    }
    if !(x1 > x0 && y1 > y0) {
        return Err(HarnessError::Experiment("not enough curve data to plot".into()));
    }
    let margin = 40.0;
    let (w, h) = (width as f64 - 2.0 * margin, height as f64 - 2.0 * margin);
    let px = |x: f64| (margin + (x - x0) / (x1 - x0) * w) as f32;
    let py = |y: f64| (margin + (y1 - y) / (y1 - y0) * h) as f32;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(margin as i32, margin as i32).of_size(w as u32, h as u32),
        Rgb([0, 0, 0]),
    );
    let mut names: Vec<&str> = records.iter().map(|r| r.manifest.run.as_str()).collect();
    names.dedup();
    for r in records {
        let k = names.iter().position(|n| *n == r.manifest.run).unwrap_or(0);
        let colour = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f32, f32)> = r
            .curve
            .samples
            .iter()
            .filter(|s| s.compute > 0.0)
            .map(|s| (px(s.compute.log10()), py(s.val_loss)))
            .collect();
        for seg in pts.windows(2) {
            draw_line_segment_mut(&mut img, seg[0], seg[1], colour);
        }
        for e in &r.manifest.events {
            if let Some(s) = r.curve.samples.iter().find(|s| s.step == e.step) {
                let (x, y) = (px(s.compute.log10()), py(s.val_loss));
                draw_line_segment_mut(&mut img, (x, y - 6.0), (x, y + 6.0), colour);
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes crossings and/or the overlay. `out` ending in `.csv` or `.png`
/// selects one; anything else is a directory that receives
/// `crossings.csv` and `curves.png`.
pub fn write_report(runs: &Path, out: &Path) -> Result<Vec<SavingSummary>> {
    let records = collect_runs(runs)?;
    if records.is_empty() {
        return Err(HarnessError::Experiment(format!("no run manifests under {}", runs.display())));
    }
    let rows = match find_baseline(runs, &records) {
        Some(b) => crossings(&records, &b),
        None => Vec::new(),
    };
    let ext = out.extension().and_then(|e| e.to_str());
    let (csv_path, png_path) = match ext {
        Some("csv") => (Some(out.to_path_buf()), None),
        Some("png") => (None, Some(out.to_path_buf())),
        _ => {
            std::fs::create_dir_all(out).at(out)?;
            (Some(out.join("crossings.csv")), Some(out.join("curves.png")))
        }
    };
    if let Some(p) = csv_path {
        write_crossings(&p, &rows)?;
    }
    if let Some(p) = png_path {
        plot_curves(&records, &p, 800, 500)?;
    }
    Ok(summarize(&rows))
}
