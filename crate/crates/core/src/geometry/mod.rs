//! Contours, raster masks, and the mask algebra the ensembler is built on.
//!
//! All areas are pixel counts on the image lattice. A pixel `(i, j)` belongs
//! to a polygon when its center `(i + 0.5, j + 0.5)` passes the even-odd
//! crossing test.

mod mask;
mod raster;
mod trace;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::VertebraLabel;

pub use mask::{BoundingBox, MaskGrid};
pub use raster::{fill_polygon, rasterize};
pub use trace::trace_outline;

/// The image canvas contours live on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
    pub image_id: String,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32, image_id: impl Into<String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            image_id: image_id.into(),
        })
    }

    /// Errors unless both frames span the same lattice. The image id is not compared.
    pub fn check_same_lattice(&self, other: &ImageFrame) -> Result<()> {
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

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Which producer a contour came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    SemanticProvider,
    InstanceProvider,
    Ensemble,
    GroundTruth,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::SemanticProvider => "semantic_provider",
            Source::InstanceProvider => "instance_provider",
            Source::Ensemble => "ensemble",
            Source::GroundTruth => "ground_truth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "semantic_provider" => Source::SemanticProvider,
            "instance_provider" => Source::InstanceProvider,
            "ensemble" => Source::Ensemble,
            "ground_truth" => Source::GroundTruth,
            _ => return None,
        })
    }
}

/// A closed polygon in pixel coordinates. The last vertex connects back to
/// the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<Point>,
    pub label: Option<VertebraLabel>,
    pub score: Option<f64>,
    pub source: Source,
}

impl Contour {
    pub fn new(points: Vec<Point>, source: Source) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateContour(format!(
                "{} vertices, need at least 3",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegenerateContour("non-finite vertex".into()));
        }
        Ok(Self {
            points,
            label: None,
            score: None,
            source,
        })
    }

    pub fn with_label(mut self, label: Option<VertebraLabel>) -> Self {
        self.label = label;
        self
    }

    pub fn with_score(mut self, score: Option<f64>) -> Result<Self> {
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Format(format!("score {s} outside [0, 1]")));
            }
        }
        self.score = score;
        Ok(self)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`, clockwise on screen.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, source: Source) -> Result<Self> {
        Self::new(
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            source,
        )
    }

    fn clamped(mut self, frame: &ImageFrame) -> Self {
        let (w, h) = (frame.width as f64, frame.height as f64);
        for p in &mut self.points {
            p.x = p.x.clamp(0.0, w);
            p.y = p.y.clamp(0.0, h);
        }
        self
    }
}

/// Contours from one source on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub frame: ImageFrame,
    pub source: Source,
    pub contours: Vec<Contour>,
}

impl ContourSet {
    /// Clamps every contour into the frame and rejects contours that cover
    /// no pixel center or disagree with `source`.
    pub fn new(frame: ImageFrame, source: Source, contours: Vec<Contour>) -> Result<Self> {
        let mut out = Vec::with_capacity(contours.len());
        for (i, c) in contours.into_iter().enumerate() {
            if c.source != source {
                return Err(Error::Format(format!(
                    "contour {i} has source {} in a {} set",
                    c.source.as_str(),
                    source.as_str()
                )));
            }
            let c = c.clamped(&frame);
            let mask = rasterize(&c, &frame)
                .map_err(|_| Error::DegenerateContour(format!("contour {i} covers no pixel")))?;
            debug_assert!(mask.area() > 0);
            out.push(c);
        }
        Ok(Self {
            frame,
            source,
            contours: out,
        })
    }

    pub fn empty(frame: ImageFrame, source: Source) -> Self {
        Self {
            frame,
            source,
            contours: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn masks(&self) -> Result<Vec<MaskGrid>> {
        self.contours
            .iter()
            .map(|c| rasterize(c, &self.frame))
            .collect()
    }
}

/// Result of OR-ing two masks and keeping the largest 4-connected component.
#[derive(Debug, Clone)]
pub struct MergedMask {
    pub mask: MaskGrid,
    /// Number of 4-connected components in the raw union.
    pub components: usize,
}

pub fn merge_masks(a: &MaskGrid, b: &MaskGrid) -> Result<MergedMask> {
    let union = a.union(b)?;
    let (mask, components) = union.largest_component();
    if components == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(MergedMask { mask, components })
}

/// Union of two contours as a single ensemble contour.
///
/// When the union is disconnected only the largest 4-connected component
/// survives; the re-rasterized result equals that component exactly.
pub fn union_contour(a: &Contour, b: &Contour, frame: &ImageFrame) -> Result<Contour> {
    let ma = rasterize(a, frame)?;
    let mb = rasterize(b, frame)?;
    let merged = merge_masks(&ma, &mb)?;
    if merged.components > 1 {
        log::warn!(
            "union is disconnected ({} components); keeping the largest",
            merged.components
        );
    }
    Contour::new(trace_outline(&merged.mask)?, Source::Ensemble)
}

/// Sort key used to order masks down the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalKey {
    pub cy: f64,
    pub cx: f64,
    pub area: usize,
}

impl VerticalKey {
    pub fn of(mask: &MaskGrid) -> Self {
        let (cx, cy) = mask.centroid().unwrap_or((f64::INFINITY, f64::INFINITY));
        Self {
            cy,
            cx,
            area: mask.area(),
        }
    }

    pub fn ordering(&self, other: &Self) -> Ordering {
        self.cy
            .total_cmp(&other.cy)
            .then(self.cx.total_cmp(&other.cx))
            .then(self.area.cmp(&other.area))
    }
}

/// Indices of `masks` ordered top to bottom. Stable for equal keys.
pub fn vertical_order(masks: &[MaskGrid]) -> Vec<usize> {
    let keys: Vec<VerticalKey> = masks.iter().map(VerticalKey::of).collect();
    let mut idx: Vec<usize> = (0..masks.len()).collect();
    idx.sort_by(|&a, &b| keys[a].ordering(&keys[b]));
    idx
}

/// Orders contours by mask centroid y, then centroid x, then area.
pub fn vertical_sort(set: &ContourSet) -> Result<ContourSet> {
    let masks = set.masks()?;
    let order = vertical_order(&masks);
    Ok(ContourSet {
        frame: set.frame.clone(),
        source: set.source,
        contours: order.into_iter().map(|i| set.contours[i].clone()).collect(),
    })
}
