#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vertx_core::ensemble::{run_ensemble, EnsembleConfig, EnsembleOutcome};
use vertx_core::geometry::{Contour, ContourSet, ImageFrame, MaskGrid, Point};
use vertx_core::labeling::{label_spine, LabeledSpine};
use vertx_core::metrics::{iou, mean_dice, per_class_dice};
use vertx_core::synthgen::{corrupt, generate, CorruptionSpec, Region, SpineSpec, SyntheticSpine};

/// Even seeds are cervical (7 vertebrae), odd seeds lumbar (8).
pub fn spine_for_seed(seed: u64) -> SyntheticSpine {
    let (region, n) = if seed.is_multiple_of(2) {
        (Region::Cervical, 7)
    } else {
        (Region::Lumbar, 8)
    };
    generate(&SpineSpec::new(region, n, seed)).unwrap()
}

fn scenario_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_5c3a)
}

/// Non-reference index in `0..n`.
fn pick_non_reference(rng: &mut ChaCha8Rng, n: usize, reference: usize) -> usize {
    loop {
        let k = rng.gen_range(0..n);
        if k != reference {
            return k;
        }
    }
}

/// Exactly one dropped instance mask or one merged semantic pair, jitter 1.
pub fn single_failure(spine: &SyntheticSpine, seed: u64) -> CorruptionSpec {
    let gt = &spine.ground_truth;
    let n = gt.vertebrae.len();
    let mut rng = scenario_rng(seed);
    let mut c = CorruptionSpec {
        jitter_amplitude: 1.0,
        ..CorruptionSpec::clean()
    };
    if rng.gen_bool(0.5) {
        c.drop_indices.insert(pick_non_reference(&mut rng, n, gt.reference_index));
    } else {
        let a = rng.gen_range(0..n - 1);
        c.merge_pairs.insert((a, a + 1));
    }
    c
}

/// One drop, one merge not containing the dropped index, jitter 2.
pub fn mixed_failure(spine: &SyntheticSpine, seed: u64) -> CorruptionSpec {
    let gt = &spine.ground_truth;
    let n = gt.vertebrae.len();
    let mut rng = scenario_rng(seed);
    let a = rng.gen_range(0..n - 1);
    let drop = loop {
        let k = pick_non_reference(&mut rng, n, gt.reference_index);
        if k != a && k != a + 1 {
            break k;
        }
    };
    CorruptionSpec {
        drop_indices: [drop].into(),
        merge_pairs: [(a, a + 1)].into(),
        jitter_amplitude: 2.0,
        reference_visible: true,
    }
}

pub struct Run {
    pub spine: SyntheticSpine,
    pub semantic: ContourSet,
    pub instance: ContourSet,
    pub outcome: EnsembleOutcome,
}

pub fn run_scenario(seed: u64, corruption: impl Fn(&SyntheticSpine, u64) -> CorruptionSpec, cfg: &EnsembleConfig) -> Run {
    let spine = spine_for_seed(seed);
    let c = corruption(&spine, seed);
    let (semantic, instance) = corrupt(&spine.ground_truth, &c, seed).unwrap();
    let outcome = run_ensemble(&semantic, &instance, cfg).unwrap();
    Run {
        spine,
        semantic,
        instance,
        outcome,
    }
}

/// Labels match the canonical order and each labeled mask sits on its
/// ground-truth vertebra.
pub fn labels_recovered(gt: &LabeledSpine, labeled: &LabeledSpine) -> bool {
    if labeled.vertebrae.len() != gt.vertebrae.len() {
        return false;
    }
    gt.vertebrae.iter().zip(&labeled.vertebrae).all(|(g, p)| {
        p.label == g.label && {
            let gm = vertx_core::geometry::rasterize(&g.contour, &gt.frame).unwrap();
            let pm = vertx_core::geometry::rasterize(&p.contour, &gt.frame).unwrap();
            iou(&pm, &gm).unwrap() > 0.5
        }
    })
}

/// Labels a provider or ensemble output from the instance reference and
/// returns its mean per-class Dice against the ground truth. Unlabelable
/// outputs score 0.
pub fn labeled_mean_dice(
    output: &ContourSet,
    instance: &ContourSet,
    gt: &LabeledSpine,
    cfg: &EnsembleConfig,
) -> f64 {
    match label_spine(instance, output, cfg) {
        Ok((spine, _)) => mean_dice(&per_class_dice(&spine.to_contour_set(), &gt.to_contour_set()).unwrap()),
        Err(_) => 0.0,
    }
}

/// Random simple-or-not polygon with 3..=8 vertices inside a `w`x`h` box,
/// on a quarter-pixel grid half the time so vertices hit pixel centers.
pub fn random_polygon(rng: &mut impl Rng, w: u32, h: u32) -> Vec<Point> {
    let n = rng.gen_range(3..=8);
    let snap = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            let mut x = rng.gen_range(-4.0..w as f64 + 4.0);
            let mut y = rng.gen_range(-4.0..h as f64 + 4.0);
            if snap {
                x = (x * 4.0).round() / 4.0;
                y = (y * 4.0).round() / 4.0;
            }
            Point::new(x, y)
        })
        .collect()
}

/// Per-pixel even-odd test at the pixel center, crossings evaluated from the
/// lower endpoint of each edge.
pub fn oracle_inside(points: &[Point], px: f64, py: f64) -> bool {
    let mut inside = false;
    let n = points.len();
    for i in 0..n {
        let (mut a, mut b) = (points[i], points[(i + 1) % n]);
        if (a.y > py) == (b.y > py) {
            continue;
        }
        if (b.y, b.x) < (a.y, a.x) {
            std::mem::swap(&mut a, &mut b);
        }
        let x = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
        if px >= x {
            inside = !inside;
        }
    }
    inside
}

pub fn oracle_mask(points: &[Point], w: u32, h: u32) -> MaskGrid {
    let mut m = MaskGrid::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            if oracle_inside(points, x as f64 + 0.5, y as f64 + 0.5) {
                m.set(x, y);
            }
        }
    }
    m
}

pub fn frame(w: u32, h: u32) -> ImageFrame {
    ImageFrame::new(w, h, "t").unwrap()
}

pub fn contour(points: Vec<Point>, source: vertx_core::geometry::Source) -> Contour {
    Contour::new(points, source).unwrap()
}
