use image::{ImageFormat, Rgb, RgbImage};
use std::io::Cursor;

const BAR: u32 = 36;
const GAP: u32 = 12;
const HEIGHT: u32 = 240;
const MARGIN: u32 = 16;

/// Vertical bar chart of values in `[0, 1]` as PNG bytes; the largest bar is
/// drawn in a second colour.
pub fn bar_chart_png(values: &[f64]) -> Vec<u8> {
    let n = values.len() as u32;
    let width = 2 * MARGIN + n * BAR + n.saturating_sub(1) * GAP;
    let mut img = RgbImage::from_pixel(width.max(1), HEIGHT + 2 * MARGIN, Rgb([255, 255, 255]));
    let top = values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i);
    let base = MARGIN + HEIGHT;
    for (i, &v) in values.iter().enumerate() {
        let h = (v.clamp(0.0, 1.0) * f64::from(HEIGHT)).round() as u32;
        let x0 = MARGIN + i as u32 * (BAR + GAP);
        let colour = if Some(i) == top {
            Rgb([200, 60, 40])
        } else {
            Rgb([70, 110, 170])
        };
        for x in x0..x0 + BAR {
            for y in base - h..base {
                img.put_pixel(x, y, colour);
            }
        }
    }
    for x in MARGIN / 2..width - MARGIN / 2 {
        img.put_pixel(x, base, Rgb([0, 0, 0]));
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}
