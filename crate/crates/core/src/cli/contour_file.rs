//! Versioned JSON interchange format for contour sets.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "image_id": "case-001",
//!   "width": 192,
//!   "height": 384,
//!   "source": "instance_provider",
//!   "contours": [
//!     { "points": [[10.0, 12.0], [40.0, 12.0], [40.0, 30.0]], "label": "S1", "score": 0.95 }
//!   ]
//! }
//! ```
//!
//! Unknown fields are rejected. The canonical form is the pretty-printed
//! output of [`ContourFile::to_canonical_string`], ending in a newline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Contour, ContourSet, ImageFrame, Point, Source};
use crate::labeling::VertebraLabel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourRecord {
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<VertebraLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourFile {
    pub schema_version: u32,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub source: String,
    pub contours: Vec<ContourRecord>,
}

impl ContourFile {
    pub fn from_set(set: &ContourSet) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image_id: set.frame.image_id.clone(),
            width: set.frame.width,
            height: set.frame.height,
            source: set.source.as_str().to_string(),
            contours: set
                .contours
                .iter()
                .map(|c| ContourRecord {
                    points: c.points.iter().map(|p| [p.x, p.y]).collect(),
                    label: c.label,
                    score: c.score,
                })
                .collect(),
        }
    }

    pub fn into_set(self) -> Result<ContourSet> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let source = Source::parse(&self.source)
            .ok_or_else(|| Error::Format(format!("unknown source {:?}", self.source)))?;
        let frame = ImageFrame::new(self.width, self.height, self.image_id)?;
        let contours = self
            .contours
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let points = r.points.into_iter().map(|[x, y]| Point::new(x, y)).collect();
                Contour::new(points, source)
                    .and_then(|c| c.with_score(r.score))
                    .map(|c| c.with_label(r.label))
                    .map_err(|e| Error::Format(format!("contour {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ContourSet::new(frame, source, contours)
    }

    pub fn parse_str(s: &str) -> Result<ContourSet> {
        let file: ContourFile = serde_json::from_str(s)?;
        file.into_set()
    }

    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("contour files always serialize");
        s.push('\n');
        s
    }
}

pub fn emit(set: &ContourSet) -> String {
    ContourFile::from_set(set).to_canonical_string()
}

pub fn read_contours(path: &Path) -> Result<ContourSet> {
    let text = fs::read_to_string(path)?;
    ContourFile::parse_str(&text)
}

pub fn write_contours(path: &Path, set: &ContourSet) -> Result<()> {
    fs::write(path, emit(set))?;
    Ok(())
}
