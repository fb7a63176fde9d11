//! Seeded synthetic spines and corrupted provider outputs.
//!
//! Vertebrae are convex quadrilaterals stacked down a column that widens
//! slightly toward the bottom. A cervical spine starts with a taller
//! cone-topped pentagon (C2); a lumbar spine ends with an inverted triangle
//! (S1). The whole column is rotated about the frame center by the tilt.
//!
//! Corruption reproduces the two provider failure modes: the instance
//! provider misses vertebrae, the semantic provider fuses neighbours into a
//! single blob.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Contour, ContourSet, ImageFrame, Point, Source};
use crate::labeling::{LabeledSpine, LabeledVertebra, ReferenceKind, VertebraLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Cervical,
    Lumbar,
}

impl Region {
    pub fn reference(self) -> ReferenceKind {
        match self {
            Region::Cervical => ReferenceKind::C2Reference,
            Region::Lumbar => ReferenceKind::S1Reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineSpec {
    pub seed: u64,
    pub region: Region,
    pub n_vertebrae: usize,
    pub frame: ImageFrame,
    pub vertebra_height: f64,
    pub gap: f64,
    pub tilt_degrees: f64,
}

const REGULAR_WIDTH: f64 = 1.6;
const WIDTH_GROWTH: f64 = 0.15;
const CORNER_NOISE: f64 = 0.08;
const C2_HEIGHT: f64 = 1.6;
const S1_HEIGHT: f64 = 1.8;
const S1_HALF_WIDTH: f64 = 0.72;

impl SpineSpec {
    /// Default geometry: 192x384 frame, 24 px vertebrae, 8 px gaps, no tilt.
    pub fn new(region: Region, n_vertebrae: usize, seed: u64) -> Self {
        Self {
            seed,
            region,
            n_vertebrae,
            frame: ImageFrame {
                width: 192,
                height: 384,
                image_id: format!("synth-{seed}"),
            },
            vertebra_height: 24.0,
            gap: 8.0,
            tilt_degrees: 0.0,
        }
    }

    pub fn with_tilt(mut self, degrees: f64) -> Self {
        self.tilt_degrees = degrees;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(3..=10).contains(&self.n_vertebrae) {
            return bad(format!("n_vertebrae {} outside [3, 10]", self.n_vertebrae));
        }
        if self.frame.width == 0 || self.frame.height == 0 {
            return bad("frame dimensions must be positive".into());
        }
        if !(self.vertebra_height >= 2.0 && self.vertebra_height.is_finite()) {
            return bad(format!("vertebra_height {} too small", self.vertebra_height));
        }
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return bad(format!("gap {} must be positive", self.gap));
        }
        if !(-15.0..=15.0).contains(&self.tilt_degrees) {
            return bad(format!("tilt {} outside [-15, 15]", self.tilt_degrees));
        }
        if self.n_vertebrae as f64 * (self.vertebra_height + self.gap) > self.frame.height as f64 {
            return bad("column does not fit the frame height".into());
        }
        Ok(())
    }

    fn labels(&self) -> Vec<VertebraLabel> {
        let n = self.n_vertebrae;
        match self.region {
            Region::Cervical => VertebraLabel::CHAIN[..n].to_vec(),
            Region::Lumbar => VertebraLabel::CHAIN[VertebraLabel::CHAIN.len() - n..].to_vec(),
        }
    }

    fn reference_index(&self) -> usize {
        match self.region {
            Region::Cervical => 0,
            Region::Lumbar => self.n_vertebrae - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpine {
    pub ground_truth: LabeledSpine,
    /// Labels top to bottom, in the order the contours were emitted.
    pub canonical_order: Vec<VertebraLabel>,
}

impl SyntheticSpine {
    pub fn ground_truth_set(&self) -> ContourSet {
        self.ground_truth.to_contour_set()
    }
}

pub fn generate(spec: &SpineSpec) -> Result<SyntheticSpine> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_vertebrae;
    let h = spec.vertebra_height;
    let ref_idx = spec.reference_index();

    let slot_height = |k: usize| match (spec.region, k == ref_idx) {
        (Region::Cervical, true) => C2_HEIGHT * h,
        (Region::Lumbar, true) => S1_HEIGHT * h,
        _ => h,
    };
    let total: f64 = (0..n).map(slot_height).sum::<f64>() + (n - 1) as f64 * spec.gap;
    let (cx, cy) = (spec.frame.width as f64 / 2.0, spec.frame.height as f64 / 2.0);
    let mut top = cy - total / 2.0;

    let (sin, cos) = spec.tilt_degrees.to_radians().sin_cos();
    let rotate = |p: Point| {
        let (dx, dy) = (p.x - cx, p.y - cy);
        Point::new(cx + dx * cos - dy * sin, cy + dx * sin + dy * cos)
    };

    let labels = spec.labels();
    let mut vertebrae = Vec::with_capacity(n);
    for (k, &label) in labels.iter().enumerate() {
        let sh = slot_height(k);
        let mid = top + sh / 2.0;
        top += sh + spec.gap;
        let w = REGULAR_WIDTH * h * (1.0 + WIDTH_GROWTH * k as f64 / (n - 1) as f64);
        let local: Vec<(f64, f64)> = if k == ref_idx && spec.region == Region::Cervical {
            vec![
                (0.0, -sh / 2.0),
                (w / 2.0, -sh / 6.0),
                (w / 2.0, sh / 2.0),
                (-w / 2.0, sh / 2.0),
                (-w / 2.0, -sh / 6.0),
            ]
        } else if k == ref_idx {
            vec![
                (-S1_HALF_WIDTH * w, -sh / 2.0),
                (S1_HALF_WIDTH * w, -sh / 2.0),
                (0.0, sh / 2.0),
            ]
        } else {
            let e = CORNER_NOISE * h;
            let mut jit = || rng.gen_range(-e..=e);
            vec![
                (-w / 2.0 + jit(), -sh / 2.0 + jit()),
                (w / 2.0 + jit(), -sh / 2.0 + jit()),
                (w / 2.0 + jit(), sh / 2.0 + jit()),
                (-w / 2.0 + jit(), sh / 2.0 + jit()),
            ]
        };
        let points: Vec<Point> = local
            .into_iter()
            .map(|(x, y)| rotate(Point::new(cx + x, mid + y)))
            .collect();
        let (fw, fh) = (spec.frame.width as f64, spec.frame.height as f64);
        if points.iter().any(|p| p.x < 0.0 || p.y < 0.0 || p.x > fw || p.y > fh) {
            return Err(Error::InvalidSpec(format!(
                "vertebra {k} leaves the frame at tilt {}",
                spec.tilt_degrees
            )));
        }
        let contour = Contour::new(points, Source::GroundTruth)?.with_label(Some(label));
        vertebrae.push(LabeledVertebra {
            contour,
            label: Some(label),
            flag: None,
        });
    }

    // Validates rasterization of every contour.
    ContourSet::new(
        spec.frame.clone(),
        Source::GroundTruth,
        vertebrae.iter().map(|v| v.contour.clone()).collect(),
    )?;

    Ok(SyntheticSpine {
        ground_truth: LabeledSpine {
            frame: spec.frame.clone(),
            vertebrae,
            reference: spec.region.reference(),
            reference_index: ref_idx,
        },
        canonical_order: labels,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Vertebra indices (top to bottom) the instance provider misses.
    pub drop_indices: BTreeSet<usize>,
    /// Adjacent index pairs the semantic provider fuses into one blob.
    pub merge_pairs: BTreeSet<(usize, usize)>,
    /// Uniform vertex noise amplitude in pixels.
    pub jitter_amplitude: f64,
    /// Whether the instance provider tags the reference vertebra.
    pub reference_visible: bool,
}

impl CorruptionSpec {
    /// No corruption; reference visible.
    pub fn clean() -> Self {
        Self {
            reference_visible: true,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCorruption(m));
        if let Some(&i) = self.drop_indices.iter().find(|&&i| i >= n) {
            return bad(format!("drop index {i} out of range for {n} vertebrae"));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.merge_pairs {
            if b != a + 1 || b >= n {
                return bad(format!("merge pair ({a}, {b}) is not an adjacent pair in range"));
            }
            if !seen.insert(a) || !seen.insert(b) {
                return bad(format!("merge pair ({a}, {b}) overlaps another pair"));
            }
        }
        if !(self.jitter_amplitude >= 0.0 && self.jitter_amplitude.is_finite()) {
            return bad(format!("jitter {} must be non-negative", self.jitter_amplitude));
        }
        Ok(())
    }
}

fn jitter(points: &[Point], amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    if amplitude == 0.0 {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| {
            Point::new(
                p.x + rng.gen_range(-amplitude..=amplitude),
                p.y + rng.gen_range(-amplitude..=amplitude),
            )
        })
        .collect()
}

/// Andrew's monotone chain; returns the hull clockwise on screen.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub const INSTANCE_SCORE: f64 = 0.9;
pub const REFERENCE_SCORE: f64 = 0.95;

/// Produces `(semantic, instance)` provider outputs from a ground truth.
pub fn corrupt(
    gt: &LabeledSpine,
    c: &CorruptionSpec,
    seed: u64,
) -> Result<(ContourSet, ContourSet)> {
    let n = gt.vertebrae.len();
    c.validate(n)?;
    let frame = &gt.frame;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instance = Vec::with_capacity(n);
    for (k, v) in gt.vertebrae.iter().enumerate() {
        if c.drop_indices.contains(&k) {
            continue;
        }
        let is_ref = k == gt.reference_index;
        let label = (is_ref && c.reference_visible).then(|| gt.reference.label());
        let score = if is_ref { REFERENCE_SCORE } else { INSTANCE_SCORE };
        instance.push(
            Contour::new(
                jitter(&v.contour.points, c.jitter_amplitude, &mut rng),
                Source::InstanceProvider,
            )?
            .with_label(label)
            .with_score(Some(score))?,
        );
    }

    rng.set_stream(1);
    let mut semantic = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        let pts = if c.merge_pairs.contains(&(k, k + 1)) {
            let both: Vec<Point> = gt.vertebrae[k]
                .contour
                .points
                .iter()
                .chain(&gt.vertebrae[k + 1].contour.points)
                .copied()
                .collect();
            k += 2;
            convex_hull(&both)
        } else {
            k += 1;
            gt.vertebrae[k - 1].contour.points.clone()
        };
        semantic.push(Contour::new(
            jitter(&pts, c.jitter_amplitude, &mut rng),
            Source::SemanticProvider,
        )?);
    }

    Ok((
        ContourSet::new(frame.clone(), Source::SemanticProvider, semantic)?,
        ContourSet::new(frame.clone(), Source::InstanceProvider, instance)?,
    ))
}
