//! Rule-based fusion of a semantic and an instance segmentation.
//!
//! Three stages run in order over vertically sorted inputs:
//!
//! 1. **Agreement.** A semantic/instance pair whose overlap over the larger
//!    area exceeds `eta` is replaced by the union of the two. Each contour
//!    takes part in at most one agreement.
//! 2. **Overlap resolution.** A remaining instance contour mostly covered by
//!    a remaining semantic contour (while the pair does not agree) is taken
//!    as is. The semantic contour stays available, so one merged blob can
//!    resolve against several instance contours.
//! 3. **Pickup.** Leftover contours whose area falls inside
//!    `mean +/- lambda * sd` of the ensembled areas, and which do not agree
//!    with anything already ensembled, are added.
//!
//! The result is sorted top to bottom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    merge_masks, rasterize, trace_outline, vertical_order, Contour, ContourSet, ImageFrame,
    MaskGrid, Source,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Agreement threshold, also used for the overlap ratio.
    pub eta: f64,
    /// Half-width of the pickup interval in standard deviations.
    pub lambda: f64,
    /// Use `>` (and open intervals) rather than `>=` for threshold tests.
    pub strict_greater: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            eta: 0.6,
            lambda: 2.0,
            strict_greater: true,
        }
    }
}

impl EnsembleConfig {
    pub fn new(eta: f64, lambda: f64) -> Result<Self> {
        let cfg = Self {
            eta,
            lambda,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `value > eta`, or `value >= eta` when comparisons are not strict.
    pub fn exceeds_eta(&self, value: f64) -> bool {
        if self.strict_greater {
            value > self.eta
        } else {
            value >= self.eta
        }
    }

    fn within(&self, value: f64, low: f64, high: f64) -> bool {
        if self.strict_greater {
            value > low && value < high
        } else {
            value >= low && value <= high
        }
    }
}

/// Intersection over the larger of the two areas.
pub fn agreement_of_masks(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let denom = a.area().max(b.area());
    if denom == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(inter as f64 / denom as f64)
}

/// Intersection over the instance contour's area.
pub fn overlap_of_masks(semantic: &MaskGrid, instance: &MaskGrid) -> Result<f64> {
    let inter = semantic.intersection_area(instance)?;
    let denom = instance.area();
    if denom == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(inter as f64 / denom as f64)
}

pub fn agreement(cu: &Contour, cm: &Contour, frame: &ImageFrame) -> Result<f64> {
    agreement_of_masks(&rasterize(cu, frame)?, &rasterize(cm, frame)?)
}

pub fn overlap_ratio(cu: &Contour, cm: &Contour, frame: &ImageFrame) -> Result<f64> {
    overlap_of_masks(&rasterize(cu, frame)?, &rasterize(cm, frame)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Semantic,
    Instance,
}

/// Which rule admitted an ensembled contour. Indices refer to positions in
/// the caller's input sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Provenance {
    Agreement { semantic: usize, instance: usize },
    OverlapResolution { instance: usize, semantic: usize },
    Pickup { provider: Provider, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    OutsideAreaInterval { area: usize, low: f64, high: f64 },
    Duplicate { agreement: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub provider: Provider,
    pub index: usize,
    pub contour: Contour,
    pub reason: RejectReason,
}

/// Mean and sample standard deviation of pixel areas. The deviation is zero
/// for fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AreaStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

impl AreaStats {
    pub fn of(areas: &[usize]) -> Self {
        let n = areas.len();
        if n == 0 {
            return Self::default();
        }
        let mean = areas.iter().sum::<usize>() as f64 / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            let ss: f64 = areas.iter().map(|&a| (a as f64 - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Self { count: n, mean, sd }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    /// Ensembled contours, top to bottom.
    pub ensembled: ContourSet,
    /// One record per ensembled contour, same order.
    pub provenance: Vec<Provenance>,
    pub rejected: Vec<Rejection>,
    /// Area statistics over the final ensembled list.
    pub stats: AreaStats,
    /// Statistics frozen after the overlap stage and used for pickup.
    pub pickup_stats: AreaStats,
    pub warnings: Vec<String>,
}

impl EnsembleOutcome {
    /// True when no contour survived any stage.
    pub fn is_empty(&self) -> bool {
        self.ensembled.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Provenance) -> bool) -> usize {
        self.provenance.iter().filter(|p| pred(p)).count()
    }
}

struct Item {
    index: usize,
    contour: Contour,
    mask: MaskGrid,
}

fn sorted_items(set: &ContourSet) -> Result<Vec<Item>> {
    let masks = set.masks()?;
    let order = vertical_order(&masks);
    let mut slots: Vec<Option<MaskGrid>> = masks.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| Item {
            index: i,
            contour: set.contours[i].clone(),
            mask: slots[i].take().expect("each index appears once"),
        })
        .collect())
}

struct Accepted {
    contour: Contour,
    mask: MaskGrid,
    provenance: Provenance,
}

pub fn run_ensemble(
    semantic: &ContourSet,
    instance: &ContourSet,
    cfg: &EnsembleConfig,
) -> Result<EnsembleOutcome> {
    cfg.validate()?;
    semantic.frame.check_same_lattice(&instance.frame)?;
    let frame = semantic.frame.clone();

    let sem = sorted_items(semantic)?;
    let ins = sorted_items(instance)?;
    let mut sem_used = vec![false; sem.len()];
    let mut ins_used = vec![false; ins.len()];
    let mut accepted: Vec<Accepted> = Vec::new();
    let mut warnings = Vec::new();

    // Pairwise ratios are reused by both pairing stages.
    let mut delta = vec![vec![0.0; ins.len()]; sem.len()];
    let mut delta_m = vec![vec![0.0; ins.len()]; sem.len()];
    for (i, s) in sem.iter().enumerate() {
        for (j, m) in ins.iter().enumerate() {
            let inter = s.mask.intersection_area(&m.mask)?;
            if inter == 0 {
                continue;
            }
            delta[i][j] = inter as f64 / s.mask.area().max(m.mask.area()) as f64;
            delta_m[i][j] = inter as f64 / m.mask.area() as f64;
        }
    }

    // Agreement, one-to-one in vertical priority.
    for (i, s) in sem.iter().enumerate() {
        for (j, m) in ins.iter().enumerate() {
            if sem_used[i] || ins_used[j] || !cfg.exceeds_eta(delta[i][j]) {
                continue;
            }
            let merged = merge_masks(&s.mask, &m.mask)?;
            if merged.components > 1 {
                let msg = format!(
                    "union of semantic {} and instance {} is disconnected ({} components); kept the largest",
                    s.index, m.index, merged.components
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let contour = Contour::new(trace_outline(&merged.mask)?, Source::Ensemble)?
                .with_score(m.contour.score)?;
            accepted.push(Accepted {
                contour,
                mask: merged.mask,
                provenance: Provenance::Agreement {
                    semantic: s.index,
                    instance: m.index,
                },
            });
            sem_used[i] = true;
            ins_used[j] = true;
        }
    }

    // Overlap resolution: instance side consumed, semantic side kept.
    for (j, m) in ins.iter().enumerate() {
        if ins_used[j] {
            continue;
        }
        let hit = (0..sem.len()).find(|&i| {
            !sem_used[i] && !cfg.exceeds_eta(delta[i][j]) && cfg.exceeds_eta(delta_m[i][j])
        });
        if let Some(i) = hit {
            accepted.push(Accepted {
                contour: m.contour.clone().with_source(Source::Ensemble).with_label(None),
                mask: m.mask.clone(),
                provenance: Provenance::OverlapResolution {
                    instance: m.index,
                    semantic: sem[i].index,
                },
            });
            ins_used[j] = true;
        }
    }

    // Pickup over whatever is left in either pool.
    let areas: Vec<usize> = accepted.iter().map(|a| a.mask.area()).collect();
    let pickup_stats = AreaStats::of(&areas);
    let mut leftovers: Vec<(Provider, &Item)> = sem
        .iter()
        .zip(&sem_used)
        .filter(|(_, &used)| !used)
        .map(|(it, _)| (Provider::Semantic, it))
        .chain(
            ins.iter()
                .zip(&ins_used)
                .filter(|(_, &used)| !used)
                .map(|(it, _)| (Provider::Instance, it)),
        )
        .collect();

    let interval = match pickup_stats.count {
        0 => {
            // Nothing to calibrate against: take leftovers largest first,
            // skipping any that agree with one already taken.
            leftovers.sort_by_key(|l| std::cmp::Reverse(l.1.mask.area()));
            None
        }
        1 => Some((0.5 * pickup_stats.mean, 1.5 * pickup_stats.mean)),
        _ => Some((
            pickup_stats.mean - cfg.lambda * pickup_stats.sd,
            pickup_stats.mean + cfg.lambda * pickup_stats.sd,
        )),
    };

    let mut rejected = Vec::new();
    for (provider, item) in leftovers {
        let area = item.mask.area();
        if let Some((low, high)) = interval {
            if !cfg.within(area as f64, low, high) {
                rejected.push(Rejection {
                    provider,
                    index: item.index,
                    contour: item.contour.clone(),
                    reason: RejectReason::OutsideAreaInterval { area, low, high },
                });
                continue;
            }
        }
        let mut worst = 0.0f64;
        for a in &accepted {
            worst = worst.max(agreement_of_masks(&item.mask, &a.mask)?);
        }
        if cfg.exceeds_eta(worst) {
            rejected.push(Rejection {
                provider,
                index: item.index,
                contour: item.contour.clone(),
                reason: RejectReason::Duplicate { agreement: worst },
            });
            continue;
        }
        accepted.push(Accepted {
            contour: item
                .contour
                .clone()
                .with_source(Source::Ensemble)
                .with_label(None),
            mask: item.mask.clone(),
            provenance: Provenance::Pickup {
                provider,
                index: item.index,
            },
        });
    }

    let masks: Vec<MaskGrid> = accepted.iter().map(|a| a.mask.clone()).collect();
    let order = vertical_order(&masks);
    let mut slots: Vec<Option<Accepted>> = accepted.into_iter().map(Some).collect();
    let mut contours = Vec::with_capacity(order.len());
    let mut provenance = Vec::with_capacity(order.len());
    let mut final_areas = Vec::with_capacity(order.len());
    for i in order {
        let a = slots[i].take().expect("each index appears once");
        final_areas.push(a.mask.area());
        contours.push(a.contour);
        provenance.push(a.provenance);
    }
    if contours.is_empty() {
        log::warn!("ensemble is empty after all stages");
    }

    Ok(EnsembleOutcome {
        ensembled: ContourSet {
            frame,
            source: Source::Ensemble,
            contours,
        },
        provenance,
        rejected,
        stats: AreaStats::of(&final_areas),
        pickup_stats,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> ImageFrame {
        ImageFrame::new(100, 120, "t").unwrap()
    }

    fn rect(x: f64, y: f64, w: f64, h: f64, source: Source) -> Contour {
        Contour::rect(x, y, x + w, y + h, source).unwrap()
    }

    fn column(n: usize, source: Source) -> Vec<Contour> {
        (0..n)
            .map(|k| rect(20.0, 5.0 + 20.0 * k as f64, 30.0, 15.0, source))
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(EnsembleConfig::new(0.0, 2.0).is_err());
        assert!(EnsembleConfig::new(1.0, 2.0).is_err());
        assert!(EnsembleConfig::new(0.5, -1.0).is_err());
        assert!(EnsembleConfig::new(0.5, 0.0).is_ok());
    }

    #[test]
    fn ratio_examples() {
        let f = frame();
        let a = rect(0.0, 0.0, 10.0, 10.0, Source::SemanticProvider);
        let b = rect(5.0, 0.0, 10.0, 10.0, Source::InstanceProvider);
        let far = rect(50.0, 50.0, 10.0, 10.0, Source::InstanceProvider);
        assert_eq!(agreement(&a, &a, &f).unwrap(), 1.0);
        assert_eq!(agreement(&a, &far, &f).unwrap(), 0.0);
        assert_eq!(agreement(&a, &b, &f).unwrap(), 0.5);
        assert!(!EnsembleConfig::default().exceeds_eta(0.5));

        let big = rect(0.0, 0.0, 20.0, 20.0, Source::SemanticProvider);
        let inside = rect(2.0, 2.0, 5.0, 5.0, Source::InstanceProvider);
        assert_eq!(overlap_ratio(&big, &inside, &f).unwrap(), 1.0);
        assert_eq!(overlap_ratio(&a, &far, &f).unwrap(), 0.0);
    }

    #[test]
    fn merged_blob_overlap_case() {
        // 220-pixel blob covering 95 of a 100-pixel instance mask.
        let f = frame();
        let blob = Contour::new(
            [(0., 0.), (15., 0.), (15., 1.), (10., 1.), (10., 21.), (5., 21.), (5., 22.), (0., 22.)]
                .iter()
                .map(|&(x, y)| crate::geometry::Point::new(x, y))
                .collect(),
            Source::SemanticProvider,
        )
        .unwrap();
        let inst = rect(0.0, 12.0, 10.0, 10.0, Source::InstanceProvider);
        assert_eq!(rasterize(&blob, &f).unwrap().area(), 220);
        let d = agreement(&blob, &inst, &f).unwrap();
        let dm = overlap_ratio(&blob, &inst, &f).unwrap();
        assert_eq!(dm, 0.95);
        assert_eq!(d, 95.0 / 220.0);
        let cfg = EnsembleConfig::default();
        assert!(!cfg.exceeds_eta(d) && cfg.exceeds_eta(dm));
    }

    #[test]
    fn full_agreement_returns_inputs() {
        let f = frame();
        let sem = ContourSet::new(f.clone(), Source::SemanticProvider, column(5, Source::SemanticProvider)).unwrap();
        let ins = ContourSet::new(f.clone(), Source::InstanceProvider, column(5, Source::InstanceProvider)).unwrap();
        let out = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
        assert_eq!(out.ensembled.len(), 5);
        assert!(out
            .provenance
            .iter()
            .all(|p| matches!(p, Provenance::Agreement { .. })));
        for (c, orig) in out.ensembled.contours.iter().zip(&sem.contours) {
            assert_eq!(rasterize(c, &f).unwrap(), rasterize(orig, &f).unwrap());
        }
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn empty_semantic_bootstraps_from_instance() {
        let f = frame();
        let sem = ContourSet::empty(f.clone(), Source::SemanticProvider);
        let ins = ContourSet::new(f, Source::InstanceProvider, column(5, Source::InstanceProvider)).unwrap();
        let out = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
        assert_eq!(out.ensembled.len(), 5);
        assert!(out
            .provenance
            .iter()
            .all(|p| matches!(p, Provenance::Pickup { provider: Provider::Instance, .. })));
    }

    #[test]
    fn bootstrap_drops_duplicates_preferring_larger() {
        let f = frame();
        let sem = ContourSet::empty(f.clone(), Source::SemanticProvider);
        let big = rect(10.0, 10.0, 20.0, 20.0, Source::InstanceProvider);
        let near = rect(10.0, 10.0, 20.0, 18.0, Source::InstanceProvider);
        let ins = ContourSet::new(f, Source::InstanceProvider, vec![near, big.clone()]).unwrap();
        let out = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
        assert_eq!(out.ensembled.len(), 1);
        assert_eq!(out.ensembled.contours[0].points, big.points);
        assert!(matches!(out.rejected[0].reason, RejectReason::Duplicate { .. }));
    }

    #[test]
    fn single_agreement_uses_half_width_interval() {
        let f = frame();
        let sem = ContourSet::new(
            f.clone(),
            Source::SemanticProvider,
            vec![
                rect(10.0, 5.0, 20.0, 10.0, Source::SemanticProvider),
                rect(10.0, 30.0, 20.0, 14.0, Source::SemanticProvider),
                rect(10.0, 60.0, 20.0, 19.0, Source::SemanticProvider),
            ],
        )
        .unwrap();
        let ins = ContourSet::new(
            f,
            Source::InstanceProvider,
            vec![rect(10.0, 5.0, 20.0, 10.0, Source::InstanceProvider)],
        )
        .unwrap();
        let out = run_ensemble(&sem, &ins, &EnsembleConfig::default()).unwrap();
        // mu = 200; interval (100, 300): 280 accepted, 380 rejected.
        assert_eq!(out.pickup_stats.mean, 200.0);
        assert_eq!(out.ensembled.len(), 2);
        assert_eq!(out.rejected.len(), 1);
        assert!(matches!(
            out.rejected[0].reason,
            RejectReason::OutsideAreaInterval { area: 380, .. }
        ));
    }

    #[test]
    fn both_empty_is_empty_outcome() {
        let f = frame();
        let out = run_ensemble(
            &ContourSet::empty(f.clone(), Source::SemanticProvider),
            &ContourSet::empty(f, Source::InstanceProvider),
            &EnsembleConfig::default(),
        )
        .unwrap();
        assert!(out.is_empty());
        assert_eq!(out.stats, AreaStats::default());
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let a = ContourSet::empty(ImageFrame::new(10, 10, "a").unwrap(), Source::SemanticProvider);
        let b = ContourSet::empty(ImageFrame::new(10, 12, "a").unwrap(), Source::InstanceProvider);
        assert!(matches!(
            run_ensemble(&a, &b, &EnsembleConfig::default()),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn area_stats_use_sample_deviation() {
        let s = AreaStats::of(&[2, 4, 4, 4, 5, 5, 7, 9]);
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(AreaStats::of(&[7]).sd, 0.0);
    }

    #[test]
    fn non_strict_mode_accepts_equality() {
        let cfg = EnsembleConfig {
            eta: 0.5,
            strict_greater: false,
            ..EnsembleConfig::default()
        };
        assert!(cfg.exceeds_eta(0.5));
        assert!(!EnsembleConfig { strict_greater: true, ..cfg }.exceeds_eta(0.5));
    }
}
