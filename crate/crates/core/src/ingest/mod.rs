//! Raw citation data to labelled per-paper cascades.
//!
//! A cascade of a root paper holds the papers that cite it directly, each
//! with its adoption time in days after the root's publication. A member's
//! parent candidates are the root plus every earlier member it also cites.

mod parse;
mod split;
mod stats;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{format_citation_files, parse_citation_files, CitationData};
pub use split::{split_dataset, Split};
pub use stats::{compute_stats, CorpusStats};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};

/// Opaque paper identifier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PaperId(String);

impl PaperId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Contract("paper id must be non-empty".into()));
        }
        Ok(PaperId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PaperId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        PaperId::new(s)
    }
}

impl From<PaperId> for String {
    fn from(p: PaperId) -> String {
        p.0
    }
}

impl fmt::Display for PaperId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `citing` cites `cited`; `time` is the citing paper's publication day.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CitationEvent {
    pub citing: PaperId,
    pub cited: PaperId,
    pub time: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeNode {
    pub id: PaperId,
    /// Days after the root's publication.
    pub t: i64,
    pub parents: Vec<PaperId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cascade {
    pub root: PaperId,
    pub root_time: i64,
    #[serde(rename = "window_T")]
    pub window_t: i64,
    /// Non-root members ordered by `(t, id)`.
    pub nodes: Vec<CascadeNode>,
}

impl Cascade {
    /// Number of parent-candidate links in the DAG.
    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.parents.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthLabel {
    /// Non-root members adopted before the window closes.
    pub observed: usize,
    /// Members adopted within the prediction horizon after the window.
    pub growth: u64,
}

impl GrowthLabel {
    pub fn final_size(&self) -> u64 {
        self.observed as u64 + self.growth
    }
}

/// One line of the cascade corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCascade {
    #[serde(flatten)]
    pub cascade: Cascade,
    pub label: GrowthLabel,
}

/// Extent of the labelling period after the observation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Horizon {
    /// Every citation up to the last date in the data.
    #[default]
    EndOfData,
    Days(i64),
}

impl Serialize for Horizon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::EndOfData => s.serialize_str("end"),
            Horizon::Days(d) => s.serialize_i64(*d),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Days(i64),
            Named(String),
        }
        match Repr::deserialize(d)? {
            Repr::Days(n) if n > 0 => Ok(Horizon::Days(n)),
            Repr::Days(n) => Err(serde::de::Error::custom(format!("horizon must be positive, got {n}"))),
            Repr::Named(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for Horizon {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "end" => Ok(Horizon::EndOfData),
            other => match other.parse::<i64>() {
                Ok(d) if d > 0 => Ok(Horizon::Days(d)),
                _ => Err(Error::Config(format!(
                    "horizon must be `end` or a positive number of days, got `{other}`"
                ))),
            },
        }
    }
}

/// A citing member before windowing: id, days after the root, and the ids it cites.
pub(crate) struct Citer<'a> {
    pub id: &'a PaperId,
    pub t: i64,
    pub cites: &'a BTreeSet<PaperId>,
}

/// Applies the observation window and horizon to one root's citers.
///
/// `horizon_end` is the exclusive upper bound on adoption time counted as
/// growth, or `None` for no bound. Citers at `t <= 0` are not part of the
/// cascade since they cannot follow the root.
pub(crate) fn observe<'a>(
    root: &PaperId,
    root_time: i64,
    citers: impl IntoIterator<Item = Citer<'a>>,
    window_t: i64,
    horizon_end: Option<i64>,
) -> LabeledCascade {
    let mut observed: Vec<Citer<'a>> = Vec::new();
    let mut growth = 0u64;
    for c in citers {
        if c.t <= 0 {
            continue;
        }
        if c.t < window_t {
            observed.push(c);
        } else if horizon_end.map_or(true, |end| c.t < end) {
            growth += 1;
        }
    }
    observed.sort_by(|a, b| (a.t, a.id).cmp(&(b.t, b.id)));
    let times: HashMap<&PaperId, i64> = observed.iter().map(|c| (c.id, c.t)).collect();
    let nodes: Vec<CascadeNode> = observed
        .iter()
        .map(|c| {
            let mut parents = vec![root.clone()];
            parents.extend(
                c.cites
                    .iter()
                    .filter(|p| *p != root && times.get(p).is_some_and(|&tp| tp < c.t))
                    .cloned(),
            );
            CascadeNode {
                id: c.id.clone(),
                t: c.t,
                parents,
            }
        })
        .collect();
    LabeledCascade {
        label: GrowthLabel {
            observed: nodes.len(),
            growth,
        },
        cascade: Cascade {
            root: root.clone(),
            root_time,
            window_t,
            nodes,
        },
    }
}

/// Builds one labelled cascade per cited paper with at least `min_observed`
/// citers inside the window, ordered by root id.
pub fn build_cascades(
    data: &CitationData,
    window_t: i64,
    horizon: Horizon,
    min_observed: usize,
) -> Result<Vec<LabeledCascade>> {
    if window_t <= 0 {
        return Err(Error::Config(format!("window_T must be positive, got {window_t}")));
    }
    if min_observed == 0 {
        return Err(Error::Config("min_observed must be at least 1".into()));
    }
    if let Horizon::Days(d) = horizon {
        if d <= 0 {
            return Err(Error::Config(format!("horizon must be positive, got {d}")));
        }
    }

    let mut references: HashMap<&PaperId, BTreeSet<PaperId>> = HashMap::new();
    let mut citers_of: BTreeMap<&PaperId, BTreeSet<&PaperId>> = BTreeMap::new();
    for e in &data.events {
        references.entry(&e.citing).or_default().insert(e.cited.clone());
        citers_of.entry(&e.cited).or_default().insert(&e.citing);
    }
    let empty = BTreeSet::new();

    let mut out = Vec::new();
    for (root, citers) in citers_of {
        let Some(&root_time) = data.publication.get(root) else {
            continue;
        };
        let horizon_end = match horizon {
            Horizon::EndOfData => None,
            Horizon::Days(d) => Some(window_t + d),
        };
        let members = citers.iter().filter_map(|&c| {
            data.publication.get(c).map(|&day| Citer {
                id: c,
                t: day - root_time,
                cites: references.get(c).unwrap_or(&empty),
            })
        });
        let labeled = observe(root, root_time, members, window_t, horizon_end);
        if labeled.label.observed >= min_observed {
            out.push(labeled);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> PaperId {
        PaperId::new(s).unwrap()
    }

    fn data(events: &[(&str, &str)], days: &[(&str, i64)]) -> CitationData {
        let publication: BTreeMap<PaperId, i64> = days.iter().map(|(p, d)| (id(p), *d)).collect();
        CitationData {
            events: events
                .iter()
                .map(|(a, b)| CitationEvent {
                    citing: id(a),
                    cited: id(b),
                    time: publication[&id(a)],
                })
                .collect(),
            publication,
            dropped_undated: 0,
        }
    }

    #[test]
    fn all_citations_inside_window() {
        let d = data(&[("a", "R"), ("b", "R")], &[("R", 0), ("a", 10), ("b", 200)]);
        let out = build_cascades(&d, 365, Horizon::Days(365), 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].cascade.nodes.len(), 2);
        assert_eq!(out[0].label.growth, 0);
    }

    #[test]
    fn growth_is_final_minus_observed() {
        let mut events = Vec::new();
        let mut days = vec![("R".to_string(), 0i64)];
        for i in 0..9 {
            let name = format!("c{i}");
            days.push((name.clone(), if i < 5 { 10 + i } else { 400 + i }));
            events.push((name, "R".to_string()));
        }
        let ev: Vec<(&str, &str)> = events.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dd: Vec<(&str, i64)> = days.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let out = build_cascades(&data(&ev, &dd), 365, Horizon::EndOfData, 1).unwrap();
        let label = out[0].label;
        assert_eq!(label.observed, 5);
        assert_eq!(label.final_size(), 9);
        assert_eq!(label.growth, 4);
    }

    #[test]
    fn parent_candidates_are_root_and_earlier_cited_members() {
        let d = data(
            &[("a", "R"), ("b", "R"), ("b", "a"), ("c", "R"), ("c", "b"), ("c", "x"), ("a", "c")],
            &[("R", 5), ("a", 6), ("b", 8), ("c", 9), ("x", 1)],
        );
        let out = build_cascades(&d, 100, Horizon::EndOfData, 1).unwrap();
        let r = out.iter().find(|c| c.cascade.root == id("R")).unwrap();
        let parents: Vec<Vec<&str>> = r
            .cascade
            .nodes
            .iter()
            .map(|n| n.parents.iter().map(|p| p.as_str()).collect())
            .collect();
        // a's citation of the later c is not a candidate; x is not a member.
        assert_eq!(parents, vec![vec!["R"], vec!["R", "a"], vec!["R", "b"]]);
        assert_eq!(r.cascade.nodes.iter().map(|n| n.t).collect::<Vec<_>>(), vec![1, 3, 4]);
    }

    #[test]
    fn horizon_splits_are_additive() {
        let days: Vec<(String, i64)> = std::iter::once(("R".to_string(), 0))
            .chain((1..60).map(|i| (format!("p{i:02}"), i * 17)))
            .collect();
        let events: Vec<(String, String)> = (1..60).map(|i| (format!("p{i:02}"), "R".into())).collect();
        let ev: Vec<(&str, &str)> = events.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dd: Vec<(&str, i64)> = days.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        let d = data(&ev, &dd);
        let g = |t: i64, h: i64| build_cascades(&d, t, Horizon::Days(h), 1).unwrap()[0].label.growth;
        assert_eq!(g(200, 150) + (g(350, 250) ), g(200, 400));
    }

    #[test]
    fn rejects_non_positive_window() {
        let d = data(&[], &[]);
        assert!(matches!(build_cascades(&d, 0, Horizon::EndOfData, 1), Err(Error::Config(_))));
    }

    #[test]
    fn horizon_parses() {
        assert_eq!("end".parse::<Horizon>().unwrap(), Horizon::EndOfData);
        assert_eq!("365".parse::<Horizon>().unwrap(), Horizon::Days(365));
        assert!("-3".parse::<Horizon>().is_err());
        let h: Horizon = serde_json::from_str("\"end\"").unwrap();
        assert_eq!(h, Horizon::EndOfData);
        assert_eq!(serde_json::to_string(&Horizon::Days(30)).unwrap(), "30");
    }
}
