//! The descriptor database over a traversal and top-1 place queries with the
//! recency exclusion rule.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{read_descriptor_file, write_descriptor_file, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::geom::Point3;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// Entries closer in time than this to the query are excluded from the
    /// candidate set, so a query never matches its own recent past.
    pub exclusion_seconds: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            exclusion_seconds: 30.0,
        }
    }
}

/// One stored place: descriptor plus the metadata evaluation needs. The
/// position is ground truth used only for scoring, never for matching.
#[derive(Clone, Debug)]
pub struct DatabaseEntry {
    pub descriptor: GlobalDescriptor,
    pub timestamp: f64,
    pub position: Point3,
    pub frame_index: usize,
}

/// Top-1 query outcome. `distance` is present iff at least one candidate
/// survived the exclusion window.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub matched_index: Option<usize>,
    pub distance: Option<f64>,
    pub positive: bool,
}

/// Time-ordered descriptor database. Matching is an exact linear scan; any
/// accelerated index must return the identical argmin.
#[derive(Clone, Debug, Default)]
pub struct DescriptorDatabase {
    entries: Vec<DatabaseEntry>,
    exclusion_seconds: f64,
}

impl DescriptorDatabase {
    pub fn new(cfg: &RetrievalConfig) -> Self {
        DescriptorDatabase {
            entries: Vec::new(),
            exclusion_seconds: cfg.exclusion_seconds,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn exclusion_seconds(&self) -> f64 {
        self.exclusion_seconds
    }

    /// Appends an entry; timestamps must be non-decreasing.
    pub fn insert(&mut self, entry: DatabaseEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.timestamp < last.timestamp {
                return Err(Error::OutOfOrder {
                    last: last.timestamp,
                    new: entry.timestamp,
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    fn eligible(&self, query_time: f64) -> impl Iterator<Item = &DatabaseEntry> {
        self.entries
            .iter()
            .filter(move |e| query_time - e.timestamp >= self.exclusion_seconds)
    }

    /// Top-1 retrieval among eligible entries: the argmin of cosine
    /// distance, ties broken by the earlier frame index. The decision is
    /// positive iff the distance is below `threshold`.
    pub fn query(
        &self,
        descriptor: &GlobalDescriptor,
        query_time: f64,
        threshold: f64,
    ) -> QueryResult {
        let mut best: Option<(f64, usize)> = None;
        for e in self.eligible(query_time) {
            let d = descriptor.cosine_distance(&e.descriptor);
            let better = match &best {
                None => true,
                Some((bd, _)) => d < *bd,
            };
            if better {
                best = Some((d, e.frame_index));
            }
        }
        match best {
            None => QueryResult {
                matched_index: None,
                distance: None,
                positive: false,
            },
            Some((d, idx)) => QueryResult {
                matched_index: Some(idx),
                distance: Some(d),
                positive: d < threshold,
            },
        }
    }

    /// Whether any eligible entry lies within `radius` of `position`: the
    /// ground-truth notion of "a revisit existed" for recall accounting.
    pub fn revisit_exists(&self, query_time: f64, position: &Point3, radius: f64) -> bool {
        self.eligible(query_time)
            .any(|e| e.position.distance(position) <= radius)
    }

    /// The stored entry for a frame index.
    pub fn entry_by_frame(&self, frame_index: usize) -> Option<&DatabaseEntry> {
        self.entries.iter().find(|e| e.frame_index == frame_index)
    }

    /// Persists descriptors in the binary descriptor format plus a text
    /// sidecar of `frame_index timestamp x y z` lines.
    pub fn save(&self, descriptor_path: &Path, index_path: &Path, feature_dim: u32) -> Result<()> {
        let descriptors: Vec<GlobalDescriptor> =
            self.entries.iter().map(|e| e.descriptor.clone()).collect();
        write_descriptor_file(descriptor_path, feature_dim, &descriptors)?;
        let mut sidecar = String::new();
        for e in &self.entries {
            sidecar.push_str(&format!(
                "{} {:.9e} {:.9e} {:.9e} {:.9e}\n",
                e.frame_index, e.timestamp, e.position.x, e.position.y, e.position.z
            ));
        }
        fs::write(index_path, sidecar).map_err(|e| Error::io(index_path, e))
    }

    pub fn load(
        descriptor_path: &Path,
        index_path: &Path,
        cfg: &RetrievalConfig,
    ) -> Result<(u32, Self)> {
        let (dim, descriptors) = read_descriptor_file(descriptor_path)?;
        let text = fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
        let mut db = DescriptorDatabase::new(cfg);
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(Error::Format(format!(
                    "sidecar line {}: expected 5 fields, got {}",
                    lineno + 1,
                    toks.len()
                )));
            }
            let parse = |t: &str| -> Result<f64> {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("sidecar line {}: bad number", lineno + 1)))
            };
            rows.push((
                toks[0].parse::<usize>().map_err(|_| {
                    Error::Format(format!("sidecar line {}: bad frame index", lineno + 1))
                })?,
                parse(toks[1])?,
                Point3::new(parse(toks[2])?, parse(toks[3])?, parse(toks[4])?),
            ));
        }
        if rows.len() != descriptors.len() {
            return Err(Error::Format(format!(
                "sidecar has {} rows but descriptor file holds {}",
                rows.len(),
                descriptors.len()
            )));
        }
        for (descriptor, (frame_index, timestamp, position)) in
            descriptors.into_iter().zip(rows)
        {
            db.insert(DatabaseEntry {
                descriptor,
                timestamp,
                position,
                frame_index,
            })?;
        }
        Ok((dim, db))
    }
}
