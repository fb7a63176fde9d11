//! PNG overlays: one flat color per contour, label text at the centroid.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::ContourSet;

pub const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
pub const TEXT: Rgb<u8> = Rgb([255, 255, 255]);

const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// 3x5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'C' => [0b111, 0b100, 0b100, 0b100, 0b111],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'S' => [0b111, 0b100, 0b111, 0b001, 0b111],
        _ => return None,
    })
}

const SCALE: i64 = 2;

fn draw_text(img: &mut RgbImage, text: &str, cx: f64, cy: f64) {
    let advance = 4 * SCALE;
    let width = text.chars().count() as i64 * advance - SCALE;
    let x0 = cx.round() as i64 - width / 2;
    let y0 = cy.round() as i64 - 5 * SCALE / 2;
    for (k, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let x = x0 + k as i64 * advance + col * SCALE + dx;
                        let y = y0 + r as i64 * SCALE + dy;
                        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                            img.put_pixel(x as u32, y as u32, TEXT);
                        }
                    }
                }
            }
        }
    }
}

pub fn render(set: &ContourSet) -> Result<RgbImage> {
    let frame = &set.frame;
    let mut img = RgbImage::from_pixel(frame.width, frame.height, BACKGROUND);
    let masks = set.masks()?;
    for (i, (c, m)) in set.contours.iter().zip(&masks).enumerate() {
        let slot = c.label.map_or(i, |l| l.index());
        let color = Rgb(PALETTE[slot % PALETTE.len()]);
        for (x, y) in m.iter_set() {
            img.put_pixel(x, y, color);
        }
    }
    for (c, m) in set.contours.iter().zip(&masks) {
        if let (Some(label), Some((cx, cy))) = (c.label, m.centroid()) {
            draw_text(&mut img, label.as_str(), cx, cy);
        }
    }
    Ok(img)
}

pub fn render_to_file(set: &ContourSet, path: &Path) -> Result<()> {
    render(set)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}
