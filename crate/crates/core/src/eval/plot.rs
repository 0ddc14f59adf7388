//! PNG plot of precision/recall curves.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::prd::PrdCurve;
use crate::error::{Error, Result};

const SIZE: u32 = 400;
const MARGIN: u32 = 30;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

fn to_px(x: f64, y: f64) -> (f64, f64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    (MARGIN as f64 + x.clamp(0.0, 1.0) * span, (SIZE - MARGIN) as f64 - y.clamp(0.0, 1.0) * span)
}

fn put(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && (x as u32) < SIZE && (y as u32) < SIZE {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
    }
}

/// Recall on x, precision on y. Each curve gets a colour from a fixed palette
/// and a cross at its `(F_8, F_{1/8})` point.
pub fn plot_prd(curves: &[(&PrdCurve, (f64, f64))], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let grey = Rgb([200, 200, 200]);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        line(&mut img, to_px(v, 0.0), to_px(v, 1.0), grey);
        line(&mut img, to_px(0.0, v), to_px(1.0, v), grey);
    }
    let black = Rgb([0, 0, 0]);
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), black);
    line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), black);
    for (i, (curve, (f8, f1_8))) in curves.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let pts: Vec<(f64, f64)> = curve.recall.iter().zip(&curve.precision).map(|(&r, &p)| to_px(r, p)).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], c);
        }
        let (cx, cy) = to_px(*f8, *f1_8);
        line(&mut img, (cx - 4.0, cy - 4.0), (cx + 4.0, cy + 4.0), c);
        line(&mut img, (cx - 4.0, cy + 4.0), (cx + 4.0, cy - 4.0), c);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path)?;
    Ok(())
}
