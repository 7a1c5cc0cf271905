//! Deterministic image export: binary PGM for raw frames and saliency
//! maps, and a dependency-free SVG compositor that draws a heatmap over
//! the frame it was computed from. Output bytes depend only on the
//! inputs, so snapshots can be compared byte for byte.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use tapegrad::Tensor;

use crate::analysis::gradcam::Heatmap;
use crate::error::{Error, Result};

/// Encodes values in `[0, 1]` (clamped) as a binary 8-bit PGM.
pub fn pgm_bytes(values: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    if values.len() != h * w || h == 0 || w == 0 {
        return Err(Error::dim("pgm data does not match its dimensions"));
    }
    let mut out = Vec::with_capacity(32 + h * w);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for v in values {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

/// Writes values in `[0, 1]` as a PGM file, creating parent directories.
pub fn write_pgm(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    let bytes = pgm_bytes(values, h, w)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Writes arbitrary nonnegative values as a PGM file, scaled so the
/// maximum maps to white. An all-zero map stays black.
pub fn write_pgm_normalized(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let scaled: Vec<f64> = if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    };
    write_pgm(path, &scaled, h, w)
}

/// Collapses a `[channels, h, w]` image tensor to one grayscale plane by
/// averaging channels.
pub fn grayscale_plane(image: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    if image.rank() != 3 {
        return Err(Error::dim("expected a [channels, h, w] image"));
    }
    let (c, h, w) = (image.shape[0], image.shape[1], image.shape[2]);
    if c == 0 {
        return Err(Error::dim("image has no channels"));
    }
    let plane = h * w;
    let mut gray = vec![0.0; plane];
    for ch in 0..c {
        for (g, v) in gray.iter_mut().zip(&image.data[ch * plane..(ch + 1) * plane]) {
            *g += v / c as f64;
        }
    }
    Ok((gray, h, w))
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Renders a saliency map over its source frame as a standalone SVG
/// string: grayscale pixels under red squares whose opacity follows the
/// heat, normalized to the strongest cell.
pub fn heat_overlay_svg(image: &Tensor, heat: &Heatmap) -> Result<String> {
    let (gray, h, w) = grayscale_plane(image)?;
    if h != heat.height || w != heat.width {
        return Err(Error::dim(format!(
            "heatmap {}x{} does not match image {h}x{w}",
            heat.height, heat.width
        )));
    }
    let cell = 10usize;
    let max_heat = heat.values.iter().cloned().fold(0.0f64, f64::max);
    let mut svg = String::with_capacity(64 * h * w);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n",
        w * cell,
        h * cell,
        w * cell,
        h * cell
    ));
    for r in 0..h {
        for c in 0..w {
            let level = (gray[r * w + c].clamp(0.0, 1.0) * 255.0).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({level},{level},{level})\"/>\n",
                c * cell,
                r * cell
            ));
        }
    }
    if max_heat > 0.0 {
        for r in 0..h {
            for c in 0..w {
                let a = heat.values[r * w + c] / max_heat;
                if a <= 0.0 {
                    continue;
                }
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                     fill=\"rgb(220,40,30)\" fill-opacity=\"{}\"/>\n",
                    c * cell,
                    r * cell,
                    fmt(0.65 * a)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
