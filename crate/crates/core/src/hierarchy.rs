//! Two-level prediction: an obverse (parent) model times a reverse (leaf) model,
//! restricted to consistent parent/leaf pairs.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::argmax;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    parents: Vec<String>,
    leaves: Vec<String>,
    parent_of: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchyTree {
    parents: Vec<String>,
    leaves: Vec<String>,
    /// Parent index per leaf index.
    parent_of: Vec<usize>,
}

impl HierarchyTree {
    pub fn new(parents: Vec<String>, leaves: Vec<String>, parent_of: Vec<usize>) -> Result<Self> {
        unique("parent", &parents)?;
        unique("leaf", &leaves)?;
        if parent_of.len() != leaves.len() {
            return Err(Error::LengthMismatch {
                what: "parent_of",
                expected: leaves.len(),
                actual: parent_of.len(),
            });
        }
        if let Some(&p) = parent_of.iter().find(|&&p| p >= parents.len()) {
            return Err(Error::Vocabulary(format!("parent index {p} out of range")));
        }
        for (e, name) in parents.iter().enumerate() {
            if !parent_of.contains(&e) {
                return Err(Error::Vocabulary(format!("parent {name:?} has no leaves")));
            }
        }
        Ok(HierarchyTree {
            parents,
            leaves,
            parent_of,
        })
    }

    /// Builds from named `(leaf, parent)` pairs; every leaf must appear once.
    pub fn from_pairs(
        parents: Vec<String>,
        leaves: Vec<String>,
        pairs: &BTreeMap<String, String>,
    ) -> Result<Self> {
        if let Some(extra) = pairs.keys().find(|k| !leaves.contains(k)) {
            return Err(Error::Vocabulary(format!("unknown leaf {extra:?} in parent_of")));
        }
        let parent_of = leaves
            .iter()
            .map(|leaf| {
                let parent = pairs
                    .get(leaf)
                    .ok_or_else(|| Error::Vocabulary(format!("leaf {leaf:?} has no parent")))?;
                parents
                    .iter()
                    .position(|p| p == parent)
                    .ok_or_else(|| Error::Vocabulary(format!("unknown parent {parent:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parents, leaves, parent_of)
    }

    pub fn parents(&self) -> &[String] {
        &self.parents
    }

    pub fn leaves(&self) -> &[String] {
        &self.leaves
    }

    pub fn parent_of(&self, leaf: usize) -> usize {
        self.parent_of[leaf]
    }

    pub fn parent_indices(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TreeFile {
            parents: self.parents.clone(),
            leaves: self.leaves.clone(),
            parent_of: self
                .leaves
                .iter()
                .zip(&self.parent_of)
                .map(|(l, &p)| (l.clone(), self.parents[p].clone()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TreeFile = serde_json::from_str(text)?;
        Self::from_pairs(f.parents, f.leaves, &f.parent_of)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn unique(what: &str, labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Vocabulary(format!("empty {what} label set")));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::Vocabulary(format!("duplicate {what} label {l:?}")));
        }
    }
    Ok(())
}

/// `score(r) = p(Pa(r) | obverse) * p(r | reverse)` for every leaf.
pub fn path_scores<T: Scalar>(parent_probs: &[T], leaf_probs: &[T], tree: &HierarchyTree) -> Result<Vec<T>> {
    if parent_probs.len() != tree.parents.len() {
        return Err(Error::LengthMismatch {
            what: "parent probabilities",
            expected: tree.parents.len(),
            actual: parent_probs.len(),
        });
    }
    if leaf_probs.len() != tree.leaves.len() {
        return Err(Error::LengthMismatch {
            what: "leaf probabilities",
            expected: tree.leaves.len(),
            actual: leaf_probs.len(),
        });
    }
    Ok(leaf_probs
        .iter()
        .zip(&tree.parent_of)
        .map(|(&p, &e)| parent_probs[e] * p)
        .collect())
}

/// Highest-scoring leaf from precomputed probabilities; ties go to the lowest index.
pub fn combine<T: Scalar>(parent_probs: &[T], leaf_probs: &[T], tree: &HierarchyTree) -> Result<(usize, T)> {
    let scores = path_scores(parent_probs, leaf_probs, tree)?;
    let best = argmax(&scores);
    Ok((best, scores[best]))
}

/// Checks a model's label order against a vocabulary.
pub trait Labelled {
    fn labels(&self) -> &[String];
}

impl<T> Labelled for crate::model::CoinModel<T> {
    fn labels(&self) -> &[String] {
        &self.labels
    }
}

fn check_vocab(what: &str, model: &[String], tree: &[String]) -> Result<()> {
    if model != tree {
        return Err(Error::Vocabulary(format!(
            "{what} model classes {model:?} differ from tree labels {tree:?}"
        )));
    }
    Ok(())
}

pub fn hierarchical_predict<T, P, L>(
    parent_model: &P,
    leaf_model: &L,
    obverse: &Image<T>,
    reverse: &Image<T>,
    tree: &HierarchyTree,
) -> Result<(usize, T)>
where
    T: Scalar,
    P: Classifier<T> + Labelled,
    L: Classifier<T> + Labelled,
{
    check_vocab("parent", parent_model.labels(), &tree.parents)?;
    check_vocab("leaf", leaf_model.labels(), &tree.leaves)?;
    combine(
        &parent_model.predict_proba(obverse)?,
        &leaf_model.predict_proba(reverse)?,
        tree,
    )
}

/// Reverse-only prediction over all leaves.
pub fn flat_predict<T: Scalar, L: Classifier<T> + ?Sized>(leaf_model: &L, reverse: &Image<T>) -> Result<usize> {
    leaf_model.predict(reverse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn tree() -> HierarchyTree {
        HierarchyTree::new(s(&["e1", "e2"]), s(&["r1", "r2", "r3"]), vec![0, 0, 1]).unwrap()
    }

    #[test]
    fn hand_enumerated_example() {
        let scores = path_scores(&[0.6f64, 0.4], &[0.5, 0.5, 0.9], &tree()).unwrap();
        for (a, b) in scores.iter().zip([0.30, 0.30, 0.36]) {
            assert!((a - b).abs() < 1e-12);
        }
        let (leaf, score) = combine(&[0.6f64, 0.4], &[0.5, 0.5, 0.9], &tree()).unwrap();
        assert_eq!(leaf, 2);
        assert!((score - 0.36).abs() < 1e-12);
    }

    #[test]
    fn degenerate_tree() {
        let t = HierarchyTree::new(s(&["e"]), s(&["r"]), vec![0]).unwrap();
        assert_eq!(combine(&[0.7], &[0.9], &t).unwrap(), (0, 0.7 * 0.9));
    }

    #[test]
    fn uniform_leaves_defer_to_parent() {
        let third = 1.0 / 3.0;
        assert_eq!(combine(&[0.3, 0.7], &[third; 3], &tree()).unwrap().0, 2);
        assert_eq!(combine(&[0.8, 0.2], &[third; 3], &tree()).unwrap().0, 0);
    }

    #[test]
    fn ties_pick_lowest_leaf() {
        assert_eq!(combine(&[0.5, 0.5], &[0.4, 0.4, 0.2], &tree()).unwrap().0, 0);
    }

    #[test]
    fn invalid_trees() {
        assert!(HierarchyTree::new(s(&["e1", "e2"]), s(&["r1"]), vec![0]).is_err());
        assert!(HierarchyTree::new(s(&["e1", "e1"]), s(&["r1", "r2"]), vec![0, 1]).is_err());
        assert!(HierarchyTree::new(s(&["e1"]), s(&["r1", "r1"]), vec![0, 0]).is_err());
        assert!(HierarchyTree::new(s(&["e1"]), s(&["r1"]), vec![3]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let t = tree();
        assert_eq!(HierarchyTree::from_json(&t.to_json().unwrap()).unwrap(), t);
        assert!(HierarchyTree::from_json(r#"{"parents":["e"],"leaves":["r"],"parent_of":{}}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn normalize(v: Vec<f64>) -> Vec<f64> {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        }

        proptest! {
            #[test]
            fn scores_are_bounded(
                pe in prop::collection::vec(0.01f64..1.0, 2),
                pr in prop::collection::vec(0.01f64..1.0, 3),
            ) {
                let scores = path_scores(&normalize(pe), &normalize(pr), &tree()).unwrap();
                prop_assert!(scores.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(scores.iter().sum::<f64>() <= 1.0 + 1e-12);
            }

            #[test]
            fn other_parents_do_not_matter(
                pr in prop::collection::vec(0.0f64..1.0, 3),
                a in 0.0f64..1.0,
                b in 0.0f64..1.0,
            ) {
                let s1 = path_scores(&[0.5, a], &pr, &tree()).unwrap();
                let s2 = path_scores(&[0.5, b], &pr, &tree()).unwrap();
                prop_assert_eq!(s1[0], s2[0]);
                prop_assert_eq!(s1[1], s2[1]);
            }
        }
    }
}
