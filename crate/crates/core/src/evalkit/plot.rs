//! Minimal deterministic plot rendering: F1-vs-epoch curves, one polyline
//! per threshold, drawn straight into a PNG. No font or windowing
//! dependencies, so re-renders are byte-identical.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::Result;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN_L: u32 = 56;
const MARGIN_R: u32 = 16;
const MARGIN_T: u32 = 16;
const MARGIN_B: u32 = 40;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// 5x7 glyphs for the characters a threshold/epoch axis needs.
fn glyph(c: char) -> Option<[u8; 7]> {
    let g = match c {
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11110, 0b00001, 0b00001, 0b01110, 0b00001, 0b00001, 0b11110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
        _ => return None,
    };
    Some(g)
}

type Canvas = ImageBuffer<Rgb<u8>, Vec<u8>>;

fn draw_text(img: &mut Canvas, x: u32, y: u32, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (1 << (4 - rx)) != 0 {
                        let px = cx + rx;
                        let py = y + ry as u32;
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, Rgb(color));
                        }
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_line(img: &mut Canvas, a: (i64, i64), b: (i64, i64), color: [u8; 3]) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, Rgb(color));
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Renders F1-vs-epoch curves. `curves` maps a threshold to one F1 value
/// per epoch (None where the epoch is missing).
pub fn render_f1_plot(
    path: impl AsRef<Path>,
    epochs: &[u32],
    curves: &[(f64, Vec<Option<f64>>)],
) -> Result<()> {
    let mut img: Canvas = ImageBuffer::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let x0 = MARGIN_L as i64;
    let x1 = (WIDTH - MARGIN_R) as i64;
    let y0 = (HEIGHT - MARGIN_B) as i64;
    let y1 = MARGIN_T as i64;
    let black = [0, 0, 0];
    let grey = [220, 220, 220];

    // horizontal gridlines + y labels every 0.2 of F1
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let y = y0 - ((y0 - y1) as f64 * f) as i64;
        draw_line(&mut img, (x0, y), (x1, y), grey);
        draw_text(
            &mut img,
            MARGIN_L - 30,
            (y - 3) as u32,
            &format!("{f:.1}"),
            black,
        );
    }
    // axes
    draw_line(&mut img, (x0, y0), (x1, y0), black);
    draw_line(&mut img, (x0, y0), (x0, y1), black);

    let x_of = |i: usize| -> i64 {
        if epochs.len() <= 1 {
            (x0 + x1) / 2
        } else {
            x0 + ((x1 - x0) * i as i64) / (epochs.len() as i64 - 1)
        }
    };
    let y_of = |f: f64| -> i64 { y0 - ((y0 - y1) as f64 * f.clamp(0.0, 1.0)) as i64 };

    // x ticks: epoch numbers
    for (i, epoch) in epochs.iter().enumerate() {
        let x = x_of(i);
        draw_line(&mut img, (x, y0), (x, y0 + 4), black);
        draw_text(
            &mut img,
            (x - 6).max(0) as u32,
            (y0 + 8) as u32,
            &format!("{epoch}"),
            black,
        );
    }

    for (ci, (threshold, values)) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut prev: Option<(i64, i64)> = None;
        for (i, v) in values.iter().enumerate() {
            if let Some(f) = v {
                let point = (x_of(i), y_of(*f));
                if let Some(p) = prev {
                    draw_line(&mut img, p, point, color);
                }
                prev = Some(point);
            } else {
                prev = None;
            }
        }
        // legend entry: threshold value
        let ly = MARGIN_T as i64 + 10 * ci as i64;
        draw_line(&mut img, (x1 - 60, ly), (x1 - 44, ly), color);
        draw_text(
            &mut img,
            (x1 - 40) as u32,
            (ly - 3) as u32,
            &format!("{threshold:.2}"),
            black,
        );
    }

    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}
