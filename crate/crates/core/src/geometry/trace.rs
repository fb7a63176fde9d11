//! Boundary tracing on the pixel-corner grid.
//!
//! Every pixel side separating a set pixel from an unset one becomes a
//! directed unit edge (clockwise on screen around set pixels). The edge set
//! decomposes into closed loops: the outer boundary plus one loop per hole.
//! Loops are joined into a single ring with axis-aligned bridges that are
//! walked out and back, so under the even-odd rule the ring fills exactly
//! the original pixels.

use std::collections::BTreeMap;

use super::{MaskGrid, Point};
use crate::error::{Error, Result};

type Vertex = (i64, i64); // (y, x)

pub fn trace_outline(mask: &MaskGrid) -> Result<Vec<Point>> {
    let mut out_edges: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
    let mut add = |from: (i64, i64), to: (i64, i64)| {
        out_edges
            .entry((from.1, from.0))
            .or_default()
            .push((to.1, to.0));
    };
    for (px, py) in mask.iter_set() {
        let (x, y) = (px as i64, py as i64);
        if py == 0 || !mask.get(px, py - 1) {
            add((x, y), (x + 1, y));
        }
        if !mask.get(px + 1, py) {
            add((x + 1, y), (x + 1, y + 1));
        }
        if !mask.get(px, py + 1) {
            add((x + 1, y + 1), (x, y + 1));
        }
        if px == 0 || !mask.get(px - 1, py) {
            add((x, y + 1), (x, y));
        }
    }
    if out_edges.is_empty() {
        return Err(Error::EmptyMask);
    }

    let mut loops: Vec<Vec<Vertex>> = Vec::new();
    while let Some(start) = out_edges
        .iter()
        .find(|(_, v)| !v.is_empty())
        .map(|(k, _)| *k)
    {
        let mut ring = vec![start];
        let mut cur = start;
        loop {
            let next = out_edges
                .get_mut(&cur)
                .and_then(Vec::pop)
                .expect("boundary edges are balanced at every corner");
            if next == start {
                break;
            }
            ring.push(next);
            cur = next;
        }
        loops.push(corners_only(&ring));
    }

    let outer = &loops[0];
    let anchor = outer[0];
    let mut ring: Vec<Vertex> = outer.clone();
    for hole in &loops[1..] {
        let entry = hole[0];
        let elbow = (anchor.0, entry.1);
        ring.push(anchor);
        ring.push(elbow);
        ring.extend_from_slice(hole);
        ring.push(entry);
        ring.push(elbow);
    }
    ring.dedup();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    Ok(ring
        .into_iter()
        .map(|(y, x)| Point::new(x as f64, y as f64))
        .collect())
}

/// Drops vertices lying in the middle of a straight run.
fn corners_only(ring: &[Vertex]) -> Vec<Vertex> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let p = ring[(i + n - 1) % n];
            let c = ring[i];
            let q = ring[(i + 1) % n];
            !((p.0 == c.0 && c.0 == q.0) || (p.1 == c.1 && c.1 == q.1))
        })
        .map(|i| ring[i])
        .collect()
}
