//! Single-parent cascade trees built with the latest-parent rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Cascade, CascadeNode, PaperId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub id: PaperId,
    /// Index of the parent; `None` for the root.
    pub parent: Option<usize>,
    /// Days after the root's publication.
    pub time: i64,
    /// Child indices in insertion order.
    pub children: Vec<usize>,
    pub depth: usize,
}

/// Cascade tree with the root at index 0 and nodes in `(time, id)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CascadeTree {
    nodes: Vec<TreeNode>,
    index: HashMap<PaperId, usize>,
    /// `levels[k - 1]` holds the nodes at distance `k` from the root.
    levels: Vec<Vec<usize>>,
    dag_edges: usize,
}

/// Resolves each member to its latest-adopted parent candidate.
///
/// Equal adoption times are broken by the smallest id.
pub fn to_tree(c: &Cascade) -> Result<CascadeTree> {
    let mut order: Vec<&CascadeNode> = c.nodes.iter().collect();
    order.sort_by(|a, b| (a.t, &a.id).cmp(&(b.t, &b.id)));

    let mut nodes = Vec::with_capacity(order.len() + 1);
    let mut index = HashMap::with_capacity(order.len() + 1);
    nodes.push(TreeNode {
        id: c.root.clone(),
        parent: None,
        time: 0,
        children: Vec::new(),
        depth: 0,
    });
    index.insert(c.root.clone(), 0);
    let mut levels: Vec<Vec<usize>> = Vec::new();

    for node in order {
        if index.contains_key(&node.id) {
            return Err(Error::MalformedCascade(format!(
                "node {} appears more than once in cascade {}",
                node.id, c.root
            )));
        }
        if node.parents.is_empty() {
            return Err(Error::MalformedCascade(format!(
                "node {} of cascade {} has no parent candidates",
                node.id, c.root
            )));
        }
        let mut best: Option<(usize, i64, &PaperId)> = None;
        for cand in &node.parents {
            let Some(&ci) = index.get(cand) else {
                // Either unknown, or a member that has not been adopted yet.
                return match c.nodes.iter().find(|n| &n.id == cand) {
                    Some(later) => Err(Error::TimeViolation(format!(
                        "node {} (t={}) lists candidate {} (t={}) in cascade {}",
                        node.id, node.t, cand, later.t, c.root
                    ))),
                    None => Err(Error::MalformedCascade(format!(
                        "node {} lists {} which is not in cascade {}",
                        node.id, cand, c.root
                    ))),
                };
            };
            let ct = nodes[ci].time;
            if ct >= node.t {
                return Err(Error::TimeViolation(format!(
                    "node {} (t={}) lists candidate {} (t={ct}) in cascade {}",
                    node.id, node.t, cand, c.root
                )));
            }
            let better = match best {
                None => true,
                Some((_, bt, bid)) => ct > bt || (ct == bt && cand < bid),
            };
            if better {
                best = Some((ci, ct, cand));
            }
        }
        let (parent, _, _) = best.expect("candidate list is non-empty");
        let me = nodes.len();
        let depth = nodes[parent].depth + 1;
        nodes[parent].children.push(me);
        nodes.push(TreeNode {
            id: node.id.clone(),
            parent: Some(parent),
            time: node.t,
            children: Vec::new(),
            depth,
        });
        index.insert(node.id.clone(), me);
        if levels.len() < depth {
            levels.resize(depth, Vec::new());
        }
        levels[depth - 1].push(me);
    }

    Ok(CascadeTree {
        nodes,
        index,
        levels,
        dag_edges: c.edge_count(),
    })
}

impl CascadeTree {
    pub fn root(&self) -> &PaperId {
        &self.nodes[0].id
    }

    /// Node count including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &PaperId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent_of(&self, id: &PaperId) -> Option<&PaperId> {
        let i = self.index_of(id)?;
        self.nodes[i].parent.map(|p| &self.nodes[p].id)
    }

    /// Node indices per level, starting at distance 1.
    pub fn level_indices(&self) -> &[Vec<usize>] {
        &self.levels
    }

    /// Node ids per level, starting at distance 1.
    pub fn levels(&self) -> Vec<Vec<&PaperId>> {
        self.levels
            .iter()
            .map(|l| l.iter().map(|&i| &self.nodes[i].id).collect())
            .collect()
    }

    /// Largest distance with a non-empty level; 0 for a root-only tree.
    pub fn max_depth(&self) -> usize {
        self.levels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Parent-candidate links of the cascade this tree came from.
    pub fn dag_edges(&self) -> usize {
        self.dag_edges
    }

    /// Tree degree: children plus the parent edge for non-root nodes.
    pub fn degree(&self, i: usize) -> usize {
        let n = &self.nodes[i];
        n.children.len() + usize::from(n.parent.is_some())
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    /// Mean distance from the root over non-root nodes; 0 for a root-only tree.
    pub fn mean_depth(&self) -> f64 {
        if self.nodes.len() < 2 {
            return 0.0;
        }
        let total: usize = self.nodes.iter().map(|n| n.depth).sum();
        total as f64 / (self.nodes.len() - 1) as f64
    }

    /// Single-parent cascade describing this tree.
    pub fn to_cascade(&self, root_time: i64, window_t: i64) -> Cascade {
        Cascade {
            root: self.root().clone(),
            root_time,
            window_t,
            nodes: self.nodes[1..]
                .iter()
                .map(|n| CascadeNode {
                    id: n.id.clone(),
                    t: n.time,
                    parents: vec![self.nodes[n.parent.expect("non-root")].id.clone()],
                })
                .collect(),
        }
    }

    pub fn to_record(&self, root_time: i64, window_t: i64) -> TreeRecord {
        TreeRecord {
            root: self.root().clone(),
            root_time,
            window_t,
            nodes: self.nodes[1..]
                .iter()
                .map(|n| TreeRecordNode {
                    id: n.id.clone(),
                    t: n.time,
                    parent: self.nodes[n.parent.expect("non-root")].id.clone(),
                })
                .collect(),
        }
    }
}

/// Serialized tree: the cascade line layout with a single `parent`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub root: PaperId,
    pub root_time: i64,
    #[serde(rename = "window_T")]
    pub window_t: i64,
    pub nodes: Vec<TreeRecordNode>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeRecordNode {
    pub id: PaperId,
    pub t: i64,
    pub parent: PaperId,
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Tree whose node `i + 1` hangs under `parents[i]`, adopted at day `i + 1`.
    pub fn tree_from_parents(parents: &[usize]) -> CascadeTree {
        to_tree(&cascade_from_parents(parents)).unwrap()
    }

    pub fn cascade_from_parents(parents: &[usize]) -> Cascade {
        let name = |i: usize| PaperId::new(format!("n{i:04}")).unwrap();
        Cascade {
            root: name(0),
            root_time: 0,
            window_t: parents.len() as i64 + 1,
            nodes: parents
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    assert!(p <= i);
                    CascadeNode {
                        id: name(i + 1),
                        t: i as i64 + 1,
                        parents: vec![name(p)],
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> PaperId {
        PaperId::new(s).unwrap()
    }

    fn node(name: &str, t: i64, parents: &[&str]) -> CascadeNode {
        CascadeNode {
            id: id(name),
            t,
            parents: parents.iter().map(|p| id(p)).collect(),
        }
    }

    /// Six-node network where node 6 is reachable as 0-1-4-6 and 0-2-6.
    fn two_path_network() -> Cascade {
        Cascade {
            root: id("0"),
            root_time: 0,
            window_t: 100,
            nodes: vec![
                node("1", 1, &["0"]),
                node("2", 2, &["0"]),
                node("3", 3, &["0"]),
                node("4", 4, &["0", "1"]),
                node("5", 5, &["0", "3"]),
                node("6", 6, &["0", "2", "4"]),
            ],
        }
    }

    #[test]
    fn keeps_latest_parent() {
        let t = to_tree(&two_path_network()).unwrap();
        assert_eq!(t.parent_of(&id("6")), Some(&id("4")));
        assert_eq!(t.parent_of(&id("4")), Some(&id("1")));
        assert_eq!(t.edge_count(), 6);
        assert_eq!(t.dag_edges(), 10);
        let first: Vec<&str> = t.levels()[0].iter().map(|p| p.as_str()).collect();
        assert_eq!(first, vec!["1", "2", "3"]);
        assert_eq!(t.max_depth(), 3);
    }

    #[test]
    fn single_candidate_is_taken() {
        let c = Cascade {
            root: id("r"),
            root_time: 0,
            window_t: 10,
            nodes: vec![node("a", 3, &["r"])],
        };
        assert_eq!(to_tree(&c).unwrap().parent_of(&id("a")), Some(&id("r")));
    }

    #[test]
    fn equal_times_break_by_smallest_id() {
        let c = Cascade {
            root: id("r"),
            root_time: 0,
            window_t: 10,
            nodes: vec![
                node("b", 2, &["r"]),
                node("a", 2, &["r"]),
                node("c", 5, &["r", "b", "a"]),
            ],
        };
        assert_eq!(to_tree(&c).unwrap().parent_of(&id("c")), Some(&id("a")));
    }

    #[test]
    fn error_paths() {
        let mut c = two_path_network();
        c.nodes[2].parents.clear();
        assert!(matches!(to_tree(&c), Err(Error::MalformedCascade(_))));

        let mut c = two_path_network();
        c.nodes[0].parents.push(id("5"));
        assert!(matches!(to_tree(&c), Err(Error::TimeViolation(_))));

        let mut c = two_path_network();
        c.nodes[1].t = 1;
        c.nodes[1].parents = vec![id("1")];
        assert!(matches!(to_tree(&c), Err(Error::TimeViolation(_))));

        let mut c = two_path_network();
        c.nodes[1].parents = vec![id("zz")];
        assert!(matches!(to_tree(&c), Err(Error::MalformedCascade(_))));
    }

    #[test]
    fn root_only_and_chain() {
        let root_only = tree_from_parents(&[]);
        assert!(root_only.levels().is_empty());
        assert_eq!(root_only.max_depth(), 0);

        let chain = tree_from_parents(&[0, 1, 2, 3, 4, 5]);
        assert_eq!(chain.max_depth(), 6);
        assert!(chain.levels().iter().all(|l| l.len() == 1));
    }

    #[test]
    fn degree_convention() {
        let t = tree_from_parents(&[0, 1, 1]);
        assert_eq!(t.degree(0), 1);
        assert_eq!(t.degree(1), 3);
        assert_eq!(t.degree(2), 1);
    }

    fn random_parents() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(any::<prop::sample::Index>(), 0..60)
            .prop_map(|ix| ix.iter().enumerate().map(|(i, x)| x.index(i + 1)).collect())
    }

    proptest! {
        #[test]
        fn conversion_is_idempotent(parents in random_parents()) {
            let t = tree_from_parents(&parents);
            let again = to_tree(&t.to_cascade(0, parents.len() as i64 + 1)).unwrap();
            prop_assert_eq!(&again, &t);
        }

        #[test]
        fn levels_partition_non_root_nodes(parents in random_parents()) {
            let t = tree_from_parents(&parents);
            let mut seen: Vec<usize> = t.level_indices().iter().flatten().copied().collect();
            prop_assert_eq!(seen.len(), t.len() - 1);
            seen.sort_unstable();
            prop_assert_eq!(seen, (1..t.len()).collect::<Vec<_>>());
            for (k, level) in t.level_indices().iter().enumerate() {
                prop_assert!(!level.is_empty());
                for &i in level {
                    prop_assert_eq!(t.node(i).depth, k + 1);
                }
            }
        }
    }
}
