//! Plain raster plots for the CSV outputs.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 320;
const MARGIN: u32 = 24;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::InvalidArgument(format!("writing {}: {e}", path.display())))
}

/// Dark blue through green to yellow for `t ∈ [0, 1]`.
pub fn colormap(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let stops = [(0.0, [68.0, 1.0, 84.0]), (0.5, [33.0, 145.0, 140.0]), (1.0, [253.0, 231.0, 37.0])];
    let (a, b) = if t <= 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let u = (t - a.0) / (b.0 - a.0);
    let c = |i: usize| (a.1[i] + u * (b.1[i] - a.1[i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// `rows[x][y]` drawn with x to the right and y upwards; values are mapped from
/// `[lo, hi]` and non-finite values drawn black.
pub fn heatmap_png(path: &Path, rows: &[Vec<f64>], lo: f64, hi: f64) -> Result<()> {
    let nx = rows.len();
    let ny = rows.first().map_or(0, Vec::len);
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("empty heatmap".into()));
    }
    let sx = (WIDTH as usize / nx).max(1) as u32;
    let sy = (HEIGHT as usize / ny).max(1) as u32;
    let mut img = RgbImage::new(nx as u32 * sx, ny as u32 * sy);
    for (x, row) in rows.iter().enumerate() {
        for (y, v) in row.iter().enumerate() {
            let px = if v.is_finite() { colormap((v - lo) / (hi - lo)) } else { Rgb([0, 0, 0]) };
            let top = (ny - 1 - y) as u32 * sy;
            for dy in 0..sy {
                for dx in 0..sx {
                    img.put_pixel(x as u32 * sx + dx, top + dy, px);
                }
            }
        }
    }
    save(&img, path)
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Polyline of `ys` over `xs`; non-finite values are clipped to the bottom edge.
pub fn line_png(path: &Path, xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("line plot needs matching, non-empty data".into()));
    }
    let finite = ys.iter().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let (x_lo, x_hi) = (xs[0].min(xs[xs.len() - 1]), xs[0].max(xs[xs.len() - 1]));
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let (w, h) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        let y = if y.is_finite() { y } else { lo };
        (
            (MARGIN as f64 + (x - x_lo) / x_span * w).round() as i64,
            (MARGIN as f64 + (hi - y) / (hi - lo) * h).round() as i64,
        )
    };
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([120, 120, 120]);
    let (m, wb, hb) = (MARGIN as i64, (WIDTH - MARGIN) as i64, (HEIGHT - MARGIN) as i64);
    line(&mut img, (m, hb), (wb, hb), axis);
    line(&mut img, (m, m), (m, hb), axis);
    if x_lo < 0.0 && x_hi > 0.0 {
        let (x0, _) = to_px(0.0, lo);
        line(&mut img, (x0, m), (x0, hb), Rgb([210, 210, 210]));
    }
    for i in 1..xs.len() {
        line(&mut img, to_px(xs[i - 1], ys[i - 1]), to_px(xs[i], ys[i]), Rgb([31, 119, 180]));
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(2.0), colormap(1.0));
    }

    #[test]
    fn images_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        heatmap_png(&p, &[vec![0.0, -10.0], vec![f64::NEG_INFINITY, -40.0]], -40.0, 0.0).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(*img.get_pixel(img.width() - 1, img.height() - 1), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(0, 0), colormap(0.75));
        let q = dir.path().join("l.png");
        line_png(&q, &[-1.0, 0.0, 1.0], &[0.0, f64::NEG_INFINITY, -3.0]).unwrap();
        assert_eq!(image::open(&q).unwrap().width(), WIDTH);
        assert!(line_png(&q, &[], &[]).is_err());
    }
}
