//! Phylogenetic comparative machinery: rooted trees with branch lengths,
//! the Brownian-motion covariance of shared path lengths, Pagel's lambda
//! with a likelihood-ratio test, and ML ancestral state reconstruction.

mod ancestral;
mod lambda;
mod newick;

pub use ancestral::ancestral_states;
pub use lambda::{pagels_lambda, LambdaReport};
pub use newick::{parse_newick, write_newick};

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Rooted tree with branch lengths; leaves carry unique species names.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Length of the edge to the parent; 0 at the root.
    pub branch_length: Vec<f64>,
    pub name: Vec<Option<String>>,
    pub root: usize,
}

impl PhyloTree {
    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| self.is_leaf(n)).collect()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves()
            .into_iter()
            .filter_map(|n| self.name[n].clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_length.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Validation("negative branch length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for leaf in self.leaves() {
            let Some(name) = &self.name[leaf] else {
                return Err(Error::Validation(format!("leaf {leaf} has no label")));
            };
            if !seen.insert(name.clone()) {
                return Err(Error::Validation(format!("duplicate leaf label `{name}`")));
            }
        }
        Ok(())
    }

    fn path_to_root(&self, mut node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.parent[node] {
            path.push(p);
            node = p;
        }
        path
    }

    /// Distance from the root to a node along branch lengths.
    pub fn depth(&self, node: usize) -> f64 {
        self.path_to_root(node)
            .iter()
            .map(|&n| self.branch_length[n])
            .sum()
    }

    /// Shared branch length from the root down to the MRCA of two leaves.
    pub fn shared_path(&self, a: usize, b: usize) -> f64 {
        let pa: std::collections::HashSet<usize> = self.path_to_root(a).into_iter().collect();
        let mut node = b;
        loop {
            if pa.contains(&node) {
                return self.depth(node);
            }
            match self.parent[node] {
                Some(p) => node = p,
                None => return 0.0,
            }
        }
    }

    /// Brownian-motion covariance over the given species order:
    /// C[i][j] = shared root-to-MRCA branch length, C[i][i] = leaf depth.
    pub fn bm_covariance(&self, species: &[String]) -> Result<DMatrix<f64>> {
        let leaves = self.leaves();
        let mut by_name = std::collections::HashMap::new();
        for &l in &leaves {
            if let Some(n) = &self.name[l] {
                by_name.insert(n.as_str(), l);
            }
        }
        let idx: Vec<usize> = species
            .iter()
            .map(|s| {
                by_name
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("species `{s}` not in tree")))
            })
            .collect::<Result<_>>()?;
        if species.len() != leaves.len() {
            return Err(Error::Validation(format!(
                "trait matrix has {} species, tree has {} leaves",
                species.len(),
                leaves.len()
            )));
        }
        let s = idx.len();
        let mut c = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let v = if i == j {
                    self.depth(idx[i])
                } else {
                    self.shared_path(idx[i], idx[j])
                };
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        Ok(c)
    }
}

/// Species-by-dimension trait matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitMatrix {
    pub species: Vec<String>,
    /// One row per species.
    pub data: Vec<Vec<f64>>,
}

impl TraitMatrix {
    pub fn new(species: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self> {
        if species.len() != data.len() {
            return Err(Error::DimensionMismatch {
                field: "traits",
                expected: species.len(),
                got: data.len(),
            });
        }
        let d = data.first().map(|r| r.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::Validation("trait matrix has no columns".into()));
        }
        for (s, row) in species.iter().zip(&data) {
            if row.len() != d {
                return Err(Error::Validation(format!("ragged trait row for `{s}`")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite trait for `{s}`")));
            }
        }
        Ok(TraitMatrix { species, data })
    }

    pub fn dims(&self) -> usize {
        self.data[0].len()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.data.iter().map(|r| r[d]).collect()
    }
}

/// Simulate Brownian motion along the tree for `dims` independent traits;
/// returns a trait matrix over the tree's leaves. Test and demo helper.
pub fn simulate_bm<R: rand::Rng>(tree: &PhyloTree, dims: usize, rate: f64, rng: &mut R) -> TraitMatrix {
    let n = tree.n_nodes();
    let mut values = vec![vec![0.0; dims]; n];
    // Parents before children in a preorder walk.
    let mut stack = vec![tree.root];
    let mut order = Vec::with_capacity(n);
    while let Some(k) = stack.pop() {
        order.push(k);
        for &c in &tree.children[k] {
            stack.push(c);
        }
    }
    for &k in &order {
        if let Some(p) = tree.parent[k] {
            let sd = (rate * tree.branch_length[k]).sqrt();
            for d in 0..dims {
                let z = crate::phylo::lambda::standard_normal(rng);
                values[k][d] = values[p][d] + sd * z;
            }
        }
    }
    let leaves = tree.leaves();
    TraitMatrix::new(
        leaves
            .iter()
            .map(|&l| tree.name[l].clone().unwrap_or_else(|| format!("leaf{l}")))
            .collect(),
        leaves.iter().map(|&l| values[l].clone()).collect(),
    )
    .expect("simulated traits are well-formed")
}

/// Random bifurcating tree over `n` named leaves: repeated random joins.
/// Leaf edges are short relative to internal edges so the shared-path
/// structure carries most of the variance. Deterministic per seed.
pub fn random_tree<R: rand::Rng>(names: &[String], rng: &mut R) -> PhyloTree {
    assert!(names.len() >= 2);
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut length: Vec<f64> = Vec::new();
    let mut name: Vec<Option<String>> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for n in names {
        parent.push(None);
        children.push(vec![]);
        length.push(rng.gen_range(0.05..0.2));
        name.push(Some(n.clone()));
        active.push(parent.len() - 1);
    }
    while active.len() > 1 {
        let i = rng.gen_range(0..active.len());
        let a = active.swap_remove(i);
        let j = rng.gen_range(0..active.len());
        let b = active.swap_remove(j);
        let node = parent.len();
        parent.push(None);
        children.push(vec![a, b]);
        length.push(rng.gen_range(0.8..2.0));
        name.push(None);
        parent[a] = Some(node);
        parent[b] = Some(node);
        active.push(node);
    }
    let root = active[0];
    length[root] = 0.0;
    PhyloTree {
        parent,
        children,
        branch_length: length,
        name,
        root,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_covariance_matches_path_calculation() {
        // ((a:1, b:2):3, (c:4, d:5):6); depths: a=4, b=5, c=10, d=11.
        let tree = parse_newick("((a:1,b:2):3,(c:4,d:5):6);").unwrap();
        let c = tree
            .bm_covariance(&["a".into(), "b".into(), "c".into(), "d".into()])
            .unwrap();
        let expect = [
            [4.0, 3.0, 0.0, 0.0],
            [3.0, 5.0, 0.0, 0.0],
            [0.0, 0.0, 10.0, 6.0],
            [0.0, 0.0, 6.0, 11.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c[(i, j)], expect[i][j], "C[{i}][{j}]");
            }
        }
    }

    #[test]
    fn random_tree_is_valid_and_deterministic() {
        use rand::SeedableRng;
        let names: Vec<String> = (0..16).map(|i| format!("sp{i:02}")).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let t1 = random_tree(&names, &mut rng);
        t1.validate().unwrap();
        assert_eq!(t1.leaves().len(), 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let t2 = random_tree(&names, &mut rng);
        assert_eq!(t1, t2);
    }

    #[test]
    fn rejects_duplicate_leaves() {
        // parse_newick validates on construction.
        assert!(parse_newick("((a:1,a:2):1,b:1);").is_err());
    }
}
