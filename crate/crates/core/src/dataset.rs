//! On-disk case collections.
//!
//! A dataset directory holds `manifest.json` plus raw volumes named after
//! each case: `case_0000.vol` (image), `case_0000.mask.vol` (ground truth)
//! and, once corrupted, `case_0000.prelim.vol` (preliminary mask). Paths in
//! the manifest are relative to its directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::skeletonize;
use crate::volume::{Mask3, Volume3};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prelim: Option<String>,
}

impl CaseEntry {
    /// Entry with the conventional file names for `id`.
    pub fn named(id: impl Into<String>, with_prelim: bool) -> Self {
        let id = id.into();
        Self {
            image: format!("{id}.vol"),
            mask: format!("{id}.mask.vol"),
            prelim: with_prelim.then(|| format!("{id}.prelim.vol")),
            id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub cases: Vec<CaseEntry>,
    /// Generation and corruption parameters, recorded as written.
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl DatasetManifest {
    pub fn new(cases: Vec<CaseEntry>, meta: serde_json::Value) -> Self {
        Self {
            schema: SCHEMA,
            cases,
            meta,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.schema != SCHEMA {
            return Err(Error::Format {
                path,
                detail: format!("manifest schema {} (expected {SCHEMA})", m.schema),
            });
        }
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Everything training needs about one case, in memory.
#[derive(Clone, Debug)]
pub struct TrainCase {
    pub id: String,
    pub ct: Volume3,
    pub prelim: Mask3,
    pub gt: Mask3,
    /// Skeleton of `gt`.
    pub centreline: Mask3,
}

impl TrainCase {
    /// Checks alignment and derives the centreline. Errors name the case.
    pub fn new(id: impl Into<String>, ct: Volume3, prelim: Mask3, gt: Mask3) -> Result<Self> {
        let id = id.into();
        let d = ct.dims();
        if prelim.dims() != d || gt.dims() != d {
            let detail = format!("image {d}, preliminary {}, ground truth {}", prelim.dims(), gt.dims());
            return Err(Error::case(id, Error::shape("train_case", detail)));
        }
        let centreline = skeletonize(&gt).mask;
        if centreline.count() == 0 {
            return Err(Error::case(id, Error::Domain("ground truth has an empty centreline".into())));
        }
        Ok(Self {
            id,
            ct,
            prelim,
            gt,
            centreline,
        })
    }
}

/// Loads every case of the dataset in `dir`; each needs a preliminary mask.
pub fn load_train_cases(dir: impl AsRef<Path>) -> Result<Vec<TrainCase>> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .cases
        .iter()
        .map(|c| {
            let wrap = |e| Error::case(&c.id, e);
            let prelim = c
                .prelim
                .as_ref()
                .ok_or_else(|| wrap(Error::InvalidArgument("no preliminary mask listed".into())))?;
            let ct = Volume3::read_raw(dir.join(&c.image)).map_err(wrap)?;
            let gt = Mask3::read_raw(dir.join(&c.mask)).map_err(wrap)?;
            let prelim = Mask3::read_raw(dir.join(prelim)).map_err(wrap)?;
            TrainCase::new(&c.id, ct, prelim, gt)
        })
        .collect()
}
