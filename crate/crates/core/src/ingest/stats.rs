use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::CascadeTree;

/// Corpus summary over tree-converted cascades.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub cascade_count: usize,
    /// Mean over cascades of the mean root distance of non-root nodes.
    pub avg_path_length: f64,
    /// Mean observed size (non-root members).
    pub avg_popularity: f64,
    /// Mean of 2(n−1)/n.
    pub avg_degree: f64,
    /// Mean edge count of the cascades before tree conversion.
    pub avg_edges: f64,
    /// Mean number of childless nodes.
    pub avg_leaf_count: f64,
}

pub fn compute_stats(trees: &[CascadeTree]) -> Result<CorpusStats> {
    if trees.is_empty() {
        return Err(Error::Stats("cannot summarise an empty corpus".into()));
    }
    let mut path = 0.0;
    let mut popularity = 0.0;
    let mut degree = 0.0;
    let mut edges = 0.0;
    let mut leaves = 0.0;
    for t in trees {
        let n = t.len() as f64;
        path += t.mean_depth();
        popularity += (t.len() - 1) as f64;
        degree += 2.0 * (n - 1.0) / n;
        edges += t.dag_edges() as f64;
        leaves += t.leaf_count() as f64;
    }
    let m = trees.len() as f64;
    Ok(CorpusStats {
        cascade_count: trees.len(),
        avg_path_length: path / m,
        avg_popularity: popularity / m,
        avg_degree: degree / m,
        avg_edges: edges / m,
        avg_leaf_count: leaves / m,
    })
}
