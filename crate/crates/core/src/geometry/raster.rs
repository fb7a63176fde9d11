//! Scanline polygon fill with the even-odd rule sampled at pixel centers.

use super::{Contour, ImageFrame, MaskGrid, Point};
use crate::error::{Error, Result};

/// Rasterizes a contour onto the frame lattice.
pub fn rasterize(contour: &Contour, frame: &ImageFrame) -> Result<MaskGrid> {
    let mask = fill_polygon(&contour.points, frame.width, frame.height);
    if mask.is_empty() {
        return Err(Error::DegenerateContour(
            "no pixel center lies inside the polygon".into(),
        ));
    }
    Ok(mask)
}

/// Even-odd fill of a closed polygon. Never fails; may return an empty mask.
///
/// For the row sampled at `y = j + 0.5`, every edge whose endpoints lie on
/// opposite sides (one `> y`, the other `<= y`) contributes one crossing.
/// Pixel `i` is set when an odd number of crossings lie strictly right of
/// its center, i.e. the center falls in `[x_2k, x_2k+1)` of the sorted list.
pub fn fill_polygon(points: &[Point], width: u32, height: u32) -> MaskGrid {
    let mut mask = MaskGrid::empty(width, height);
    if points.len() < 3 {
        return mask;
    }
    let (ymin, ymax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    let row_lo = (ymin - 0.5).floor().max(0.0) as i64;
    let row_hi = ((ymax - 0.5).ceil() as i64).min(height as i64 - 1);

    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for row in row_lo..=row_hi {
        let py = row as f64 + 0.5;
        xs.clear();
        for k in 0..points.len() {
            let a = points[k];
            let b = points[(k + 1) % points.len()];
            if (a.y > py) != (b.y > py) {
                xs.push(edge_crossing_x(a, b, py));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let start = first_center_at_or_after(span[0]).max(0);
            let end = first_center_at_or_after(span[1]).min(width as i64);
            if end > start {
                mask.set_span(start as u32, row as u32, (end - start) as u32);
            }
        }
    }
    mask
}

/// x-coordinate where the edge `a-b` crosses the horizontal line `y = py`.
///
/// The edge is evaluated from its lower endpoint so the result does not
/// depend on traversal direction.
pub(crate) fn edge_crossing_x(a: Point, b: Point, py: f64) -> f64 {
    let (lo, hi) = if (a.y, a.x) <= (b.y, b.x) { (a, b) } else { (b, a) };
    lo.x + (py - lo.y) * (hi.x - lo.x) / (hi.y - lo.y)
}

/// Smallest pixel column `i` with `i + 0.5 >= x`.
fn first_center_at_or_after(x: f64) -> i64 {
    let mut i = (x - 0.5).ceil() as i64;
    while (i as f64) + 0.5 < x {
        i += 1;
    }
    while ((i - 1) as f64) + 0.5 >= x {
        i -= 1;
    }
    i
}
