use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Assignment of each asset to one of `J` groups, labelled `0..J`.
///
/// Assets of a group need not be contiguous in user order. The structure
/// keeps the per-group index lists, which double as the permutation to the
/// canonical (group-contiguous) ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    membership: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Every label in `0..J` must occur at least once, where `J = max + 1`.
    pub fn new(membership: Vec<usize>) -> Result<Self> {
        if membership.is_empty() {
            return Err(Error::InvalidInput("empty membership vector".into()));
        }
        let n_groups = membership.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); n_groups];
        for (i, &g) in membership.iter().enumerate() {
            members[g].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidInput(format!("group {empty} has no assets")));
        }
        Ok(GroupStructure {
            membership,
            members,
        })
    }

    /// A single group holding all `p` assets.
    pub fn single(p: usize) -> Result<Self> {
        Self::new(vec![0; p])
    }

    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let membership = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect();
        Self::new(membership)
    }

    /// Builds a structure from arbitrary labels. Distinct labels are sorted
    /// and numbered `0..J`; the sorted label list is returned alongside.
    pub fn from_labels<L: Ord + Clone>(labels: &[L]) -> Result<(Self, Vec<L>)> {
        let mut index: BTreeMap<L, usize> = BTreeMap::new();
        for l in labels {
            index.entry(l.clone()).or_insert(0);
        }
        let names: Vec<L> = index.keys().cloned().collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let membership = labels.iter().map(|l| index[l]).collect();
        Ok((Self::new(membership)?, names))
    }

    pub fn n_assets(&self) -> usize {
        self.membership.len()
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn group_of(&self, asset: usize) -> usize {
        self.membership[asset]
    }

    pub fn members(&self, group: usize) -> Result<&[usize]> {
        self.members
            .get(group)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownGroup {
                group,
                n_groups: self.n_groups(),
            })
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn min_group_size(&self) -> usize {
        self.members.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// `perm[c]` is the user index of the asset at canonical position `c`.
    pub fn canonical_permutation(&self) -> Vec<usize> {
        self.members.iter().flatten().copied().collect()
    }

    /// Reorders a user-order matrix into canonical (group-contiguous) order.
    pub fn to_canonical(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let perm = self.canonical_permutation();
        m.select_rows(&perm).select_columns(&perm)
    }

    /// Inverse of [`to_canonical`](Self::to_canonical).
    pub fn from_canonical(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let perm = self.canonical_permutation();
        let mut inv = vec![0; perm.len()];
        for (c, &u) in perm.iter().enumerate() {
            inv[u] = c;
        }
        m.select_rows(&inv).select_columns(&inv)
    }

    /// Structure for the assets listed in `perm`, in that order.
    pub fn permuted(&self, perm: &[usize]) -> Result<GroupStructure> {
        GroupStructure::new(perm.iter().map(|&i| self.membership[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_index_lists() {
        let g = GroupStructure::new(vec![1, 0, 1, 2, 0]).unwrap();
        assert_eq!(g.n_groups(), 3);
        assert_eq!(g.group_sizes(), vec![2, 2, 1]);
        assert_eq!(g.members(1).unwrap(), &[0, 2]);
        assert_eq!(g.canonical_permutation(), vec![1, 4, 0, 2, 3]);
        assert!(matches!(g.members(3), Err(Error::UnknownGroup { .. })));
    }

    #[test]
    fn rejects_empty_groups() {
        assert!(GroupStructure::new(vec![0, 2, 2]).is_err());
        assert!(GroupStructure::new(vec![]).is_err());
    }

    #[test]
    fn labels_are_sorted() {
        let (g, names) = GroupStructure::from_labels(&["us", "jp", "us", "de"]).unwrap();
        assert_eq!(names, vec!["de", "jp", "us"]);
        assert_eq!(g.membership(), &[2, 1, 2, 0]);
    }

    #[test]
    fn canonical_round_trip() {
        let g = GroupStructure::new(vec![1, 0, 1, 0]).unwrap();
        let m = DMatrix::from_fn(4, 4, |i, j| (10 * i + j) as f64);
        let c = g.to_canonical(&m);
        assert_eq!(c[(0, 0)], 11.0);
        assert_eq!(g.from_canonical(&c), m);
    }
}
