//! PNG overlays and plain-text score tables.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use gammaspot::metrics::EvalReport;
use gammaspot::skysim::{CountMap, SourceList};

const SCALE: usize = 4;
const TRUTH: [u8; 3] = [40, 220, 60];
const PRED: [u8; 3] = [235, 40, 40];

/// Log-scaled counts, upsampled, with truth marked by green boxes and
/// predictions by red crosses.
pub fn overlay_png(
    path: &Path,
    image: &CountMap,
    truth: &SourceList,
    pred: &SourceList,
) -> Result<()> {
    let (w, h) = (image.width * SCALE, image.height * SCALE);
    let peak = image.counts.iter().copied().max().unwrap_or(0) as f64;
    let norm = (1.0 + peak).ln().max(1e-12);
    let mut rgb = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let c = image.at(x / SCALE, y / SCALE) as f64;
            let v = ((1.0 + c).ln() / norm * 255.0).round() as u8;
            rgb[(y * w + x) * 3..][..3].copy_from_slice(&[v, v, v]);
        }
    }
    let mut put = |x: isize, y: isize, color: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            rgb[(y as usize * w + x as usize) * 3..][..3].copy_from_slice(&color);
        }
    };
    let centre = |v: f64| (v * SCALE as f64 + SCALE as f64 / 2.0).floor() as isize;
    let r = 2 * SCALE as isize;
    for s in &truth.points {
        let (cx, cy) = (centre(s.x), centre(s.y));
        for d in -r..=r {
            put(cx + d, cy - r, TRUTH);
            put(cx + d, cy + r, TRUTH);
            put(cx - r, cy + d, TRUTH);
            put(cx + r, cy + d, TRUTH);
        }
    }
    for s in &pred.points {
        let (cx, cy) = (centre(s.x), centre(s.y));
        for d in -r / 2..=r / 2 {
            put(cx + d, cy, PRED);
            put(cx, cy + d, PRED);
        }
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&rgb)?;
    Ok(())
}

/// One markdown row per named report.
pub fn score_table(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::from(
        "| run | F1 | TPR | std | Distance | t_test ms |\n|---|---|---|---|---|---|\n",
    );
    for (name, r) in rows {
        let t = r
            .t_test_ms
            .map(|t| format!("{t:.2}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "| {name} | {:.3} | {:.3} | {:.2} | {:.2} | {t} |\n",
            r.f1,
            r.tpr,
            r.chamfer_var.sqrt(),
            r.chamfer_mean
        ));
    }
    out
}
