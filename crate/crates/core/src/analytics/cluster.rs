use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::AgreementMatrix;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("matrix is not square")]
    NotSquare,
    #[error("matrix is empty")]
    Empty,
    #[error("cell ({0}, {1}) is undefined")]
    Undefined(usize, usize),
    #[error("cells ({0}, {1}) and ({1}, {0}) differ")]
    Asymmetric(usize, usize),
}

/// One agglomeration step. Nodes `0..n` are leaves; merge `k` creates node `n + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
}

impl Dendrogram {
    /// Leaf indices under `node`, left subtree first.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let n = self.labels.len();
        if node < n {
            return vec![node];
        }
        let m = &self.merges[node - n];
        let mut out = self.leaves(m.left);
        out.extend(self.leaves(m.right));
        out
    }

    pub fn root(&self) -> usize {
        self.labels.len() + self.merges.len() - 1
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaf_order.iter().map(|&i| self.labels[i].as_str()).collect()
    }

    /// Nested tree: leaves are `{"name": ..}`, inner nodes
    /// `{"distance": .., "children": [left, right]}`.
    pub fn to_json(&self) -> Value {
        self.node_json(self.root())
    }

    fn node_json(&self, node: usize) -> Value {
        let n = self.labels.len();
        if node < n {
            return json!({ "name": self.labels[node] });
        }
        let m = &self.merges[node - n];
        json!({
            "distance": m.distance,
            "size": m.size,
            "children": [self.node_json(m.left), self.node_json(m.right)],
        })
    }
}

struct Cluster {
    node: usize,
    members: Vec<usize>,
}

impl Cluster {
    fn first(&self) -> usize {
        self.members[0]
    }
}

fn linkage_distance(d: &[Vec<f64>], a: &Cluster, b: &Cluster, linkage: Linkage) -> f64 {
    let mut pair: Vec<f64> = a.members.iter().flat_map(|&i| b.members.iter().map(move |&j| d[i][j])).collect();
    match linkage {
        Linkage::Single => pair.iter().copied().fold(f64::INFINITY, f64::min),
        Linkage::Complete => pair.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Linkage::Average => {
            // Summing in sorted order makes the result independent of the
            // order in which members were listed.
            pair.sort_by(f64::total_cmp);
            pair.iter().sum::<f64>() / pair.len() as f64
        }
    }
}

/// Agglomerative clustering on distances `1 − value`. Ties between candidate
/// pairs go to the pair whose smallest leaf indices are lowest.
#[allow(clippy::needless_range_loop)]
pub fn hierarchical_cluster(m: &AgreementMatrix, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let n = m.model_ids.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if m.values.len() != n || m.values.iter().any(|r| r.len() != n) {
        return Err(ClusterError::NotSquare);
    }
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = m.values[i][j];
            if !v.is_finite() {
                return Err(ClusterError::Undefined(i, j));
            }
            if (v - m.values[j][i]).abs() > SYMMETRY_TOLERANCE {
                return Err(ClusterError::Asymmetric(i, j));
            }
            d[i][j] = 1.0 - v;
        }
    }

    let mut active: Vec<Cluster> = (0..n).map(|i| Cluster { node: i, members: vec![i] }).collect();
    let mut merges = Vec::with_capacity(n - 1);
    while active.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let dist = linkage_distance(&d, &active[x], &active[y], linkage);
                let (a, b) = (active[x].first(), active[y].first());
                let key = (a.min(b), a.max(b));
                let better = match &best {
                    None => true,
                    Some((bd, bk, _, _)) => dist < *bd || (dist == *bd && key < *bk),
                };
                if better {
                    best = Some((dist, key, x, y));
                }
            }
        }
        let (dist, _, x, y) = best.expect("at least two clusters");
        let right = active.remove(y);
        let left = active.remove(x);
        let (left, right) = if left.first() <= right.first() { (left, right) } else { (right, left) };
        let mut members: Vec<usize> = left.members.iter().chain(&right.members).copied().collect();
        members.sort_unstable();
        merges.push(Merge { left: left.node, right: right.node, distance: dist, size: members.len() });
        active.push(Cluster { node: n + merges.len() - 1, members });
    }

    let mut dendro = Dendrogram { labels: m.model_ids.clone(), linkage, merges, leaf_order: Vec::new() };
    dendro.leaf_order = dendro.leaves(dendro.root());
    Ok(dendro)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::AgreementMetric;
    use crate::domain::FieldKind;

    fn matrix(values: Vec<Vec<f64>>) -> AgreementMatrix {
        AgreementMatrix {
            metric: AgreementMetric::PairwiseAgreement,
            field: FieldKind::Gender,
            model_ids: (0..values.len()).map(|i| format!("m{i}")).collect(),
            values,
        }
    }

    #[test]
    fn two_models_single_merge() {
        let d = hierarchical_cluster(&matrix(vec![vec![1.0, 0.4], vec![0.4, 1.0]]), Linkage::Average).unwrap();
        assert_eq!(d.merges, vec![Merge { left: 0, right: 1, distance: 0.6, size: 2 }]);
        assert_eq!(d.leaf_order, vec![0, 1]);
    }

    #[test]
    fn all_ones_merge_at_zero() {
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let d = hierarchical_cluster(&matrix(vec![vec![1.0; 4]; 4]), linkage).unwrap();
            assert_eq!(d.merges.len(), 3);
            assert!(d.merges.iter().all(|m| m.distance == 0.0));
        }
    }

    #[test]
    fn linkages_differ_as_expected() {
        // Distances: d01=0.1, d02=0.5, d12=0.9.
        let m = matrix(vec![vec![1.0, 0.9, 0.5], vec![0.9, 1.0, 0.1], vec![0.5, 0.1, 1.0]]);
        let last = |l| hierarchical_cluster(&m, l).unwrap().merges[1].distance;
        assert!((last(Linkage::Single) - 0.5).abs() < 1e-12);
        assert!((last(Linkage::Complete) - 0.9).abs() < 1e-12);
        assert!((last(Linkage::Average) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert_eq!(hierarchical_cluster(&matrix(vec![]), Linkage::Average), Err(ClusterError::Empty));
        let asym = matrix(vec![vec![1.0, 0.2], vec![0.3, 1.0]]);
        assert_eq!(hierarchical_cluster(&asym, Linkage::Average), Err(ClusterError::Asymmetric(0, 1)));
        let nan = matrix(vec![vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]);
        assert_eq!(hierarchical_cluster(&nan, Linkage::Average), Err(ClusterError::Undefined(0, 1)));
    }

    #[test]
    fn json_tree_shape() {
        let d = hierarchical_cluster(&matrix(vec![vec![1.0, 0.5], vec![0.5, 1.0]]), Linkage::Average).unwrap();
        assert_eq!(d.to_json(), json!({"distance": 0.5, "size": 2, "children": [{"name": "m0"}, {"name": "m1"}]}));
    }
}
