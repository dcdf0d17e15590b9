//! Maximum-likelihood Brownian-motion ancestral states.
//!
//! With leaves fixed at the observed traits, the ML internal states
//! minimize sum over edges of (x_child - x_parent)^2 / t_edge, a weighted
//! tree-Laplacian system solved per trait dimension. The root estimate
//! coincides with the GLS mean.

use super::{PhyloTree, TraitMatrix};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct AncestralStates {
    /// (node id, display label, trait values), internal nodes only,
    /// ordered by node id. The root is included.
    pub nodes: Vec<(usize, String, Vec<f64>)>,
}

impl AncestralStates {
    pub fn root_value<'a>(&'a self, tree: &PhyloTree) -> Option<&'a [f64]> {
        self.nodes
            .iter()
            .find(|(id, _, _)| *id == tree.root)
            .map(|(_, _, v)| v.as_slice())
    }
}

pub fn ancestral_states(tree: &PhyloTree, traits: &TraitMatrix) -> Result<AncestralStates> {
    tree.validate()?;
    let leaves = tree.leaves();
    if traits.species.len() != leaves.len() {
        return Err(Error::Validation(format!(
            "trait matrix has {} species, tree has {} leaves",
            traits.species.len(),
            leaves.len()
        )));
    }
    let mut leaf_traits: std::collections::HashMap<usize, &[f64]> = std::collections::HashMap::new();
    for (s, row) in traits.species.iter().zip(&traits.data) {
        let leaf = leaves
            .iter()
            .copied()
            .find(|&l| tree.name[l].as_deref() == Some(s.as_str()))
            .ok_or_else(|| Error::Validation(format!("species `{s}` not in tree")))?;
        leaf_traits.insert(leaf, row);
    }

    let internal: Vec<usize> = (0..tree.n_nodes()).filter(|&n| !tree.is_leaf(n)).collect();
    let index: std::collections::HashMap<usize, usize> =
        internal.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let ni = internal.len();
    let dims = traits.dims();

    let mut a = DMatrix::zeros(ni, ni);
    let mut b = vec![DVector::zeros(ni); dims];
    for child in 0..tree.n_nodes() {
        let Some(parent) = tree.parent[child] else {
            continue;
        };
        let w = 1.0 / tree.branch_length[child].max(1e-10);
        let pi = index[&parent];
        match index.get(&child) {
            Some(&ci) => {
                a[(ci, ci)] += w;
                a[(pi, pi)] += w;
                a[(ci, pi)] -= w;
                a[(pi, ci)] -= w;
            }
            None => {
                a[(pi, pi)] += w;
                let y = leaf_traits[&child];
                for (d, bd) in b.iter_mut().enumerate() {
                    bd[pi] += w * y[d];
                }
            }
        }
    }

    let lu = a.lu();
    let mut values = vec![vec![0.0; dims]; ni];
    for (d, bd) in b.iter().enumerate() {
        let x = lu
            .solve(bd)
            .ok_or_else(|| Error::Validation("singular ancestral-state system".into()))?;
        for i in 0..ni {
            values[i][d] = x[i];
        }
    }

    Ok(AncestralStates {
        nodes: internal
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let label = tree.name[n].clone().unwrap_or_else(|| format!("node{n}"));
                (n, label, values[i].clone())
            })
            .collect(),
    })
}
