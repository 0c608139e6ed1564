//! Per-level degree sequences with time bins.
//!
//! A corpus-wide [`EncodingSchema`] fixes the number of levels `K`, the
//! length of each level and the time bins. Each tree then becomes `K` rows of
//! `(degree, bin)` entries: sorted by degree (largest first, earlier adoption
//! first on ties) and padded with inactive zero-degree entries.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PaperId;
use crate::tree::CascadeTree;

/// Bin index reserved for padding entries.
pub const PAD_BIN: u32 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchema {
    /// Number of levels `K`.
    pub depth: usize,
    /// Entries per level, `L^1..L^K`.
    pub level_lengths: Vec<usize>,
    /// Number of time bins `L`.
    pub bin_count: usize,
    #[serde(rename = "window_T")]
    pub window_t: i64,
    /// `t_0 = 0 < t_1 < … < t_L = T`.
    pub bin_edges: Vec<f64>,
}

impl EncodingSchema {
    pub fn new(level_lengths: Vec<usize>, bin_count: usize, window_t: i64) -> Result<Self> {
        if bin_count == 0 {
            return Err(Error::Schema("bin count must be at least 1".into()));
        }
        let edges = (0..=bin_count)
            .map(|l| (l as i64 * window_t) as f64 / bin_count as f64)
            .collect();
        Self::with_edges(level_lengths, edges, window_t)
    }

    /// Schema with explicit bin edges.
    pub fn with_edges(level_lengths: Vec<usize>, bin_edges: Vec<f64>, window_t: i64) -> Result<Self> {
        let schema = EncodingSchema {
            depth: level_lengths.len(),
            bin_count: bin_edges.len().saturating_sub(1),
            level_lengths,
            window_t,
            bin_edges,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_t <= 0 {
            return Err(Error::Schema(format!("window must be positive, got {}", self.window_t)));
        }
        if self.depth == 0 || self.level_lengths.len() != self.depth {
            return Err(Error::Schema(format!(
                "depth {} with {} level lengths",
                self.depth,
                self.level_lengths.len()
            )));
        }
        if self.level_lengths.contains(&0) {
            return Err(Error::Schema("every level length must be at least 1".into()));
        }
        let e = &self.bin_edges;
        if self.bin_count == 0
            || e.len() != self.bin_count + 1
            || e[0] != 0.0
            || e[self.bin_count] != self.window_t as f64
            || e.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Schema(format!(
                "bin edges {e:?} must increase strictly from 0 to {}",
                self.window_t
            )));
        }
        Ok(())
    }

    pub fn total_length(&self) -> usize {
        self.level_lengths.iter().sum()
    }

    /// Human-readable list of differences from `other`; empty when equal.
    pub fn diff(&self, other: &EncodingSchema) -> Vec<String> {
        let mut out = Vec::new();
        if self.level_lengths != other.level_lengths {
            out.push(format!("level_lengths: {:?} vs {:?}", self.level_lengths, other.level_lengths));
        }
        if self.bin_count != other.bin_count {
            out.push(format!("bin_count: {} vs {}", self.bin_count, other.bin_count));
        }
        if self.window_t != other.window_t {
            out.push(format!("window_T: {} vs {}", self.window_t, other.window_t));
        }
        if self.bin_edges != other.bin_edges {
            out.push(format!("bin_edges: {:?} vs {:?}", self.bin_edges, other.bin_edges));
        }
        out
    }
}

/// `K` is the deepest tree; `L^k` the largest level `k` in the corpus.
pub fn schema_from_corpus(trees: &[CascadeTree], bin_count: usize, window_t: i64) -> Result<EncodingSchema> {
    if trees.is_empty() {
        return Err(Error::Schema("cannot build a schema from an empty corpus".into()));
    }
    let mut lengths: Vec<usize> = Vec::new();
    for t in trees {
        let levels = t.level_indices();
        if levels.len() > lengths.len() {
            lengths.resize(levels.len(), 0);
        }
        for (k, level) in levels.iter().enumerate() {
            lengths[k] = lengths[k].max(level.len());
        }
    }
    if lengths.is_empty() {
        return Err(Error::Schema("every cascade in the corpus is root-only".into()));
    }
    EncodingSchema::new(lengths, bin_count, window_t)
}

/// Interval index `l` with `t_{l-1} <= t < t_l`.
pub fn time_bin(t: i64, schema: &EncodingSchema) -> Result<u32> {
    if t < 0 || t >= schema.window_t {
        return Err(Error::Range {
            value: t as f64,
            upper: schema.window_t as f64,
        });
    }
    let x = t as f64;
    // Number of edges t_1..t_L at or below t.
    let passed = schema.bin_edges[1..].partition_point(|&e| e <= x);
    Ok(passed as u32 + 1)
}

/// Tree degree of `id`: children plus one for the parent edge of non-root nodes.
pub fn node_degree(tree: &CascadeTree, id: &PaperId) -> Result<usize> {
    tree.index_of(id)
        .map(|i| tree.degree(i))
        .ok_or_else(|| Error::Lookup(id.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub d: u32,
    pub bin: u32,
}

impl Entry {
    pub const PAD: Entry = Entry { d: 0, bin: PAD_BIN };

    pub fn is_pad(&self) -> bool {
        self.bin == PAD_BIN
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DegreeSequence {
    pub levels: Vec<Vec<Entry>>,
}

impl DegreeSequence {
    pub fn real_entries(&self) -> impl Iterator<Item = &Entry> {
        self.levels.iter().flatten().filter(|e| !e.is_pad())
    }

    pub fn conforms_to(&self, schema: &EncodingSchema) -> bool {
        self.levels.len() == schema.depth
            && self
                .levels
                .iter()
                .zip(&schema.level_lengths)
                .all(|(l, &n)| l.len() == n && l.iter().all(|e| e.bin as usize <= schema.bin_count))
    }
}

/// A node's contribution to its level before ordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelEntry {
    pub degree: u32,
    pub time: i64,
    pub id: PaperId,
}

/// Orders a level by degree (descending), then adoption time, then id.
pub fn sort_level(entries: &mut [LevelEntry]) {
    entries.sort_by(|a, b| {
        b.degree
            .cmp(&a.degree)
            .then(a.time.cmp(&b.time))
            .then_with(|| a.id.cmp(&b.id))
    });
}

/// Sorts, bins and pads one level to `length` entries. Entries beyond
/// `length` are dropped from the low-degree end; returns how many were.
pub fn arrange_level(mut entries: Vec<LevelEntry>, length: usize, schema: &EncodingSchema) -> Result<(Vec<Entry>, usize)> {
    sort_level(&mut entries);
    let dropped = entries.len().saturating_sub(length);
    entries.truncate(length);
    let mut out = Vec::with_capacity(length);
    for e in &entries {
        out.push(Entry {
            d: e.degree,
            bin: time_bin(e.time, schema)?,
        });
    }
    out.resize(length, Entry::PAD);
    Ok((out, dropped))
}

fn level_entries(tree: &CascadeTree, k: usize) -> Vec<LevelEntry> {
    tree.level_indices()
        .get(k)
        .map(|level| {
            level
                .iter()
                .map(|&i| {
                    let n = tree.node(i);
                    LevelEntry {
                        degree: tree.degree(i) as u32,
                        time: n.time,
                        id: n.id.clone(),
                    }
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Encodes a tree that fits the schema.
pub fn encode(tree: &CascadeTree, schema: &EncodingSchema) -> Result<DegreeSequence> {
    if tree.max_depth() > schema.depth {
        return Err(Error::SchemaOverflow(format!(
            "cascade {} has depth {} but the schema holds {} levels",
            tree.root(),
            tree.max_depth(),
            schema.depth
        )));
    }
    for (k, level) in tree.level_indices().iter().enumerate() {
        if level.len() > schema.level_lengths[k] {
            return Err(Error::SchemaOverflow(format!(
                "cascade {} has {} nodes at level {} but the schema holds {}",
                tree.root(),
                level.len(),
                k + 1,
                schema.level_lengths[k]
            )));
        }
    }
    let (seq, _) = encode_truncating(tree, schema)?;
    Ok(seq)
}

/// Encodes any tree, dropping levels beyond `K` and the lowest-degree
/// entries of over-long levels. Returns the number of nodes dropped.
pub fn encode_truncating(tree: &CascadeTree, schema: &EncodingSchema) -> Result<(DegreeSequence, usize)> {
    let mut dropped: usize = tree
        .level_indices()
        .iter()
        .skip(schema.depth)
        .map(Vec::len)
        .sum();
    let mut levels = Vec::with_capacity(schema.depth);
    for (k, &length) in schema.level_lengths.iter().enumerate() {
        let (level, cut) = arrange_level(level_entries(tree, k), length, schema)?;
        dropped += cut;
        levels.push(level);
    }
    if dropped > 0 {
        warn!("cascade {} truncated by {dropped} nodes to fit the schema", tree.root());
    }
    Ok((DegreeSequence { levels }, dropped))
}
