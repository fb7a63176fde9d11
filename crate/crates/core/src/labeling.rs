//! Anatomical labeling from a reference vertebra.
//!
//! The instance provider tags C2 (top of a cervical film) or S1 (bottom of a
//! lumbar film). The matching ensembled mask gets that label and the rest
//! of the vertically sorted column is labeled by walking the chain away from
//! it: successors downward from C2, predecessors upward from S1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ensemble::{agreement_of_masks, EnsembleConfig};
use crate::error::{Error, Result};
use crate::geometry::{rasterize, vertical_order, Contour, ContourSet, ImageFrame};

/// Vertebra names in head-to-tail order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertebraLabel {
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
    T9,
    T10,
    T11,
    T12,
    L1,
    L2,
    L3,
    L4,
    L5,
    S1,
}

use VertebraLabel::*;

impl VertebraLabel {
    pub const CHAIN: [VertebraLabel; 24] = [
        C2, C3, C4, C5, C6, C7, T1, T2, T3, T4, T5, T6, T7, T8, T9, T10, T11, T12, L1, L2, L3,
        L4, L5, S1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::CHAIN.get(i).copied()
    }

    /// Next label toward the sacrum.
    pub fn successor(self) -> Option<Self> {
        Self::from_index(self.index() + 1)
    }

    /// Next label toward the skull.
    pub fn predecessor(self) -> Option<Self> {
        self.index().checked_sub(1).and_then(Self::from_index)
    }

    /// Mid-thoracic labels that only arise from extending the chain past
    /// the ranges visible on cervical (C2..T1) and lumbar (T11..S1) films.
    pub fn is_extrapolated(self) -> bool {
        (T2.index()..=T10.index()).contains(&self.index())
    }

    pub fn as_str(self) -> &'static str {
        const NAMES: [&str; 24] = [
            "C2", "C3", "C4", "C5", "C6", "C7", "T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8",
            "T9", "T10", "T11", "T12", "L1", "L2", "L3", "L4", "L5", "S1",
        ];
        NAMES[self.index()]
    }
}

impl fmt::Display for VertebraLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VertebraLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::CHAIN
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for VertebraLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VertebraLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    C2Reference,
    S1Reference,
}

impl ReferenceKind {
    pub fn label(self) -> VertebraLabel {
        match self {
            ReferenceKind::C2Reference => C2,
            ReferenceKind::S1Reference => S1,
        }
    }

    fn of_label(label: VertebraLabel) -> Option<Self> {
        match label {
            C2 => Some(ReferenceKind::C2Reference),
            S1 => Some(ReferenceKind::S1Reference),
            _ => None,
        }
    }
}

/// A reference vertebra reported by the instance provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDetection {
    pub kind: ReferenceKind,
    pub contour: Contour,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum LabelWarning {
    /// Both C2 and S1 were detected; the higher score won.
    BothReferencesPresent { chosen: ReferenceKind, c2_score: f64, s1_score: f64 },
    /// No ensembled mask agreed with the reference; its contour was added.
    ReferenceInjected { best_agreement: f64 },
}

/// A reference detection bound to one contour of the ensembled column.
#[derive(Debug, Clone)]
pub struct ReferenceMatch {
    pub detection: ReferenceDetection,
    /// The ensembled column, with the reference contour added if needed.
    pub ensembled: ContourSet,
    pub index: usize,
    pub warnings: Vec<LabelWarning>,
}

/// Picks the best C2/S1 detection and locates it in the ensembled column.
pub fn find_reference(
    instance: &ContourSet,
    ensembled: &ContourSet,
    cfg: &EnsembleConfig,
) -> Result<ReferenceMatch> {
    instance.frame.check_same_lattice(&ensembled.frame)?;
    let mut best: [Option<ReferenceDetection>; 2] = [None, None];
    for c in &instance.contours {
        let Some(kind) = c.label.and_then(ReferenceKind::of_label) else {
            continue;
        };
        let score = c.score.unwrap_or(0.0);
        let slot = &mut best[kind as usize];
        if slot.as_ref().is_none_or(|b| score > b.score) {
            *slot = Some(ReferenceDetection {
                kind,
                contour: c.clone(),
                score,
            });
        }
    }
    let mut warnings = Vec::new();
    let (c2_score, s1_score) = (best_score(&best, 0), best_score(&best, 1));
    let detection = match best {
        [None, None] => return Err(Error::NoReferenceFound),
        [Some(d), None] | [None, Some(d)] => d,
        [Some(c2), Some(s1)] => {
            let chosen = if s1.score > c2.score { s1 } else { c2 };
            warnings.push(LabelWarning::BothReferencesPresent {
                chosen: chosen.kind,
                c2_score,
                s1_score,
            });
            log::warn!("both C2 and S1 detected; using {:?}", chosen.kind);
            chosen
        }
    };

    let frame = &ensembled.frame;
    let ref_mask = rasterize(&detection.contour, frame)?;
    let masks = ensembled.masks()?;
    let mut best_idx = None;
    let mut best_delta = 0.0;
    for (i, m) in masks.iter().enumerate() {
        let d = agreement_of_masks(&ref_mask, m)?;
        if d > best_delta {
            best_delta = d;
            best_idx = Some(i);
        }
    }
    if let Some(i) = best_idx.filter(|_| cfg.exceeds_eta(best_delta)) {
        return Ok(ReferenceMatch {
            detection,
            ensembled: ensembled.clone(),
            index: i,
            warnings,
        });
    }

    // Inject the reference contour and re-sort.
    let injected = detection
        .contour
        .clone()
        .with_source(ensembled.source)
        .with_label(None);
    let mut contours = ensembled.contours.clone();
    contours.push(injected);
    let mut all_masks = masks;
    all_masks.push(ref_mask);
    let order = vertical_order(&all_masks);
    let index = order
        .iter()
        .position(|&i| i == contours.len() - 1)
        .expect("injected contour is in the order");
    warnings.push(LabelWarning::ReferenceInjected {
        best_agreement: best_delta,
    });
    let contours = order.into_iter().map(|i| contours[i].clone()).collect();
    Ok(ReferenceMatch {
        detection,
        ensembled: ContourSet {
            frame: frame.clone(),
            source: ensembled.source,
            contours,
        },
        index,
        warnings,
    })
}

fn best_score(best: &[Option<ReferenceDetection>; 2], k: usize) -> f64 {
    best[k].as_ref().map_or(0.0, |d| d.score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFlag {
    /// Mask lies on the wrong side of the reference (above C2, below S1).
    AnatomicallyImpossible,
    /// More masks than labels left in the chain.
    ChainExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVertebra {
    pub contour: Contour,
    pub label: Option<VertebraLabel>,
    pub flag: Option<LabelFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSpine {
    pub frame: ImageFrame,
    /// Top to bottom.
    pub vertebrae: Vec<LabeledVertebra>,
    pub reference: ReferenceKind,
    pub reference_index: usize,
}

impl LabeledSpine {
    /// The column as a contour set with labels written onto the contours.
    pub fn to_contour_set(&self) -> ContourSet {
        let source = self
            .vertebrae
            .first()
            .map_or(crate::geometry::Source::Ensemble, |v| v.contour.source);
        ContourSet {
            frame: self.frame.clone(),
            source,
            contours: self
                .vertebrae
                .iter()
                .map(|v| v.contour.clone().with_label(v.label))
                .collect(),
        }
    }

    pub fn labels(&self) -> Vec<Option<VertebraLabel>> {
        self.vertebrae.iter().map(|v| v.label).collect()
    }
}

/// Zips labels along a vertically sorted column from the reference mask.
pub fn assign_labels(
    ensembled: &ContourSet,
    reference: ReferenceKind,
    reference_index: usize,
) -> Result<LabeledSpine> {
    let n = ensembled.len();
    if reference_index >= n {
        return Err(Error::Format(format!(
            "reference index {reference_index} out of range for {n} masks"
        )));
    }
    let mut vertebrae: Vec<LabeledVertebra> = ensembled
        .contours
        .iter()
        .map(|c| LabeledVertebra {
            contour: c.clone().with_label(None),
            label: None,
            flag: None,
        })
        .collect();

    let (toward, away): (Vec<usize>, Vec<usize>) = match reference {
        ReferenceKind::C2Reference => ((reference_index + 1..n).collect(), (0..reference_index).collect()),
        ReferenceKind::S1Reference => ((0..reference_index).rev().collect(), (reference_index + 1..n).collect()),
    };
    let step = |l: VertebraLabel| match reference {
        ReferenceKind::C2Reference => l.successor(),
        ReferenceKind::S1Reference => l.predecessor(),
    };

    let mut current = Some(reference.label());
    vertebrae[reference_index].label = current;
    for i in toward {
        current = current.and_then(step);
        match current {
            Some(l) => vertebrae[i].label = Some(l),
            None => vertebrae[i].flag = Some(LabelFlag::ChainExhausted),
        }
    }
    for i in away {
        vertebrae[i].flag = Some(LabelFlag::AnatomicallyImpossible);
    }
    for v in &mut vertebrae {
        v.contour.label = v.label;
    }

    Ok(LabeledSpine {
        frame: ensembled.frame.clone(),
        vertebrae,
        reference,
        reference_index,
    })
}

/// Finds the reference and labels the column in one step.
pub fn label_spine(
    instance: &ContourSet,
    ensembled: &ContourSet,
    cfg: &EnsembleConfig,
) -> Result<(LabeledSpine, Vec<LabelWarning>)> {
    let m = find_reference(instance, ensembled, cfg)?;
    let spine = assign_labels(&m.ensembled, m.detection.kind, m.index)?;
    Ok((spine, m.warnings))
}
