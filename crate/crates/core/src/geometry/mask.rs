use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Inclusive pixel bounds of a non-empty mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

/// Binary occupancy over a `width x height` lattice, row-major, one bit per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskGrid {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl MaskGrid {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::empty(width, height);
        m.set_span(0, 0, (width as usize * height as usize) as u32);
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let i = self.index(x, y);
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Sets `len` consecutive bits starting at pixel `(x, y)` in row-major order.
    pub(crate) fn set_span(&mut self, x: u32, y: u32, len: u32) {
        let mut i = self.index(x, y);
        let end = i + len as usize;
        while i < end {
            let bit = i % 64;
            let take = (64 - bit).min(end - i);
            let bits = if take == 64 {
                u64::MAX
            } else {
                ((1u64 << take) - 1) << bit
            };
            self.words[i / 64] |= bits;
            i += take;
        }
    }

    fn check_lattice(&self, other: &MaskGrid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::FrameMismatch {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            });
        }
        Ok(())
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_area(&self, other: &MaskGrid) -> Result<usize> {
        self.check_lattice(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union(&self, other: &MaskGrid) -> Result<MaskGrid> {
        self.check_lattice(other)?;
        Ok(MaskGrid {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    pub fn union_area(&self, other: &MaskGrid) -> Result<usize> {
        self.check_lattice(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + b;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        let mut it = self.iter_set();
        let (x0, y0) = it.next().ok_or(Error::EmptyMask)?;
        let mut bb = BoundingBox {
            min_x: x0,
            min_y: y0,
            max_x: x0,
            max_y: y0,
        };
        for (x, y) in it {
            bb.min_x = bb.min_x.min(x);
            bb.max_x = bb.max_x.max(x);
            bb.max_y = y;
        }
        Ok(bb)
    }

    /// Mean of set pixel centers, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for (x, y) in self.iter_set() {
            sx += x as u64;
            sy += y as u64;
            n += 1;
        }
        (n > 0).then(|| {
            (
                sx as f64 / n as f64 + 0.5,
                sy as f64 / n as f64 + 0.5,
            )
        })
    }

    /// Largest 4-connected component and the total component count.
    ///
    /// Ties on size go to the component whose first pixel comes earliest in
    /// row-major order.
    pub fn largest_component(&self) -> (MaskGrid, usize) {
        let Ok(bb) = self.bounding_box() else {
            return (self.clone(), 0);
        };
        let bw = (bb.max_x - bb.min_x + 1) as usize;
        let bh = (bb.max_y - bb.min_y + 1) as usize;
        let mut labels = vec![0u32; bw * bh];
        let mut sizes: Vec<usize> = Vec::new();
        let mut queue = VecDeque::new();

        for ly in 0..bh {
            for lx in 0..bw {
                let (x, y) = (bb.min_x + lx as u32, bb.min_y + ly as u32);
                if labels[ly * bw + lx] != 0 || !self.get(x, y) {
                    continue;
                }
                sizes.push(0);
                let id = sizes.len() as u32;
                labels[ly * bw + lx] = id;
                queue.push_back((lx, ly));
                while let Some((cx, cy)) = queue.pop_front() {
                    sizes[id as usize - 1] += 1;
                    let neighbours = [
                        (cx.wrapping_sub(1), cy),
                        (cx + 1, cy),
                        (cx, cy.wrapping_sub(1)),
                        (cx, cy + 1),
                    ];
                    for (nx, ny) in neighbours {
                        if nx >= bw || ny >= bh || labels[ny * bw + nx] != 0 {
                            continue;
                        }
                        if self.get(bb.min_x + nx as u32, bb.min_y + ny as u32) {
                            labels[ny * bw + nx] = id;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
        }

        let count = sizes.len();
        if count == 1 {
            return (self.clone(), 1);
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i as u32 + 1)
            .unwrap_or(1);
        let mut out = MaskGrid::empty(self.width, self.height);
        for ly in 0..bh {
            for lx in 0..bw {
                if labels[ly * bw + lx] == best {
                    out.set(bb.min_x + lx as u32, bb.min_y + ly as u32);
                }
            }
        }
        (out, count)
    }
}
