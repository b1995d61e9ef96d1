//! Elimination trees at block granularity.
//!
//! The tree records which block column must be eliminated before which: a
//! parent cannot be processed until all its children are done, so the tree
//! height is the minimum number of sequential elimination waves.

use crate::matrix::BlockPermutation;

/// Elimination tree over N block nodes (0-based, in *permuted* positions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationTree {
    parent: Vec<Option<usize>>,
}

impl EliminationTree {
    pub fn from_parents(parent: Vec<Option<usize>>) -> Self {
        let t = Self { parent };
        t.assert_valid();
        t
    }

    /// Chain tree of the natural block tridiagonal ordering: parent(i) = i+1.
    pub fn sequential_chain(nblocks: usize) -> Self {
        let parent = (0..nblocks)
            .map(|i| if i + 1 < nblocks { Some(i + 1) } else { None })
            .collect();
        Self::from_parents(parent)
    }

    /// Standard elimination-tree construction (path-compressed ancestor
    /// scan) on the permuted block tridiagonal pattern.
    pub fn from_permuted_tridiag(nblocks: usize, perm: &BlockPermutation) -> Self {
        assert_eq!(perm.len(), nblocks);
        let mut parent: Vec<Option<usize>> = vec![None; nblocks];
        let mut ancestor: Vec<Option<usize>> = vec![None; nblocks];
        for k in 0..nblocks {
            let old = perm.old_of(k);
            let mut row: Vec<usize> = Vec::with_capacity(2);
            if old > 0 {
                let i = perm.new_of(old - 1);
                if i < k {
                    row.push(i);
                }
            }
            if old + 1 < nblocks {
                let i = perm.new_of(old + 1);
                if i < k {
                    row.push(i);
                }
            }
            for i in row {
                let mut j = i;
                loop {
                    if j == k {
                        break;
                    }
                    let next = ancestor[j];
                    ancestor[j] = Some(k);
                    match next {
                        None => {
                            parent[j] = Some(k);
                            break;
                        }
                        Some(a) => j = a,
                    }
                }
            }
        }
        Self::from_parents(parent)
    }

    /// Generic symbolic elimination with explicit fill: eliminate nodes in
    /// order, connect the remaining neighbors of each eliminated node, and
    /// take the smallest later neighbor as parent. Quadratic and obviously
    /// correct; the reference the fast construction is checked against.
    pub fn by_symbolic_elimination(nblocks: usize, perm: &BlockPermutation) -> Self {
        assert_eq!(perm.len(), nblocks);
        let mut adj: Vec<std::collections::BTreeSet<usize>> =
            vec![std::collections::BTreeSet::new(); nblocks];
        for old in 0..nblocks.saturating_sub(1) {
            let a = perm.new_of(old);
            let b = perm.new_of(old + 1);
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let mut parent: Vec<Option<usize>> = vec![None; nblocks];
        for j in 0..nblocks {
            let later: Vec<usize> = adj[j].iter().copied().filter(|&i| i > j).collect();
            parent[j] = later.first().copied();
            for (x, &a) in later.iter().enumerate() {
                for &b in &later[x + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
        Self::from_parents(parent)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.parent[i].is_none())
            .collect()
    }

    /// Node level counted from the leaves: leaves are level 1, a parent is one
    /// above its highest child. Nodes of equal level are independent.
    pub fn node_levels(&self) -> Vec<usize> {
        let n = self.len();
        let mut level = vec![1usize; n];
        // children always precede parents in elimination order
        for i in 0..n {
            if let Some(p) = self.parent[i] {
                level[p] = level[p].max(level[i] + 1);
            }
        }
        level
    }

    /// Nodes grouped by level; `sets[l-1]` are the level-`l` nodes.
    pub fn level_sets(&self) -> Vec<Vec<usize>> {
        let levels = self.node_levels();
        let h = self.height();
        let mut sets = vec![Vec::new(); h];
        for (node, &l) in levels.iter().enumerate() {
            sets[l - 1].push(node);
        }
        sets
    }

    /// Tree height in nodes (a single node has height 1).
    pub fn height(&self) -> usize {
        self.node_levels().into_iter().max().unwrap_or(0)
    }

    fn assert_valid(&self) {
        let n = self.len();
        assert!(n >= 1);
        for i in 0..n {
            if let Some(p) = self.parent[i] {
                assert!(p > i, "parent must come later in elimination order");
                assert!(p < n);
            }
        }
        assert_eq!(
            self.roots().len(),
            1,
            "connected tridiagonal pattern must yield a single root"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{multi_stage_permutation, single_stage_permutation, BlockPermutation};

    #[test]
    fn chain_examples() {
        let t = EliminationTree::sequential_chain(1);
        assert_eq!(t.height(), 1);
        let t = EliminationTree::sequential_chain(3);
        assert_eq!(t.parents(), &[Some(1), Some(2), None]);
        assert_eq!(EliminationTree::sequential_chain(20).height(), 20);
    }

    #[test]
    fn identity_permutation_gives_chain() {
        for n in 1..=16 {
            let perm = BlockPermutation::identity(n);
            assert_eq!(
                EliminationTree::from_permuted_tridiag(n, &perm),
                EliminationTree::sequential_chain(n)
            );
        }
    }

    #[test]
    fn single_stage_n20_shape() {
        let perm = single_stage_permutation(20);
        let t = EliminationTree::from_permuted_tridiag(20, &perm);
        assert_eq!(t.height(), 11);
        // ten leaves (the odd columns), all parented into the even chain
        let leaves: Vec<usize> = (0..20)
            .filter(|&i| t.parents().iter().all(|p| *p != Some(i)))
            .collect();
        assert_eq!(leaves.len(), 10);
        assert!(leaves.iter().all(|&l| l < 10));
    }

    #[test]
    fn multi_stage_heights() {
        let t = EliminationTree::from_permuted_tridiag(20, &multi_stage_permutation(20));
        assert_eq!(t.height(), 5); // floor(log2 20) + 1

        for n in 1..=64usize {
            let t = EliminationTree::from_permuted_tridiag(n, &multi_stage_permutation(n));
            let expect = (usize::BITS - n.leading_zeros()) as usize;
            assert_eq!(t.height(), expect, "N={n}");
        }
    }

    #[test]
    fn single_stage_heights() {
        for n in 1..=64usize {
            let t = EliminationTree::from_permuted_tridiag(n, &single_stage_permutation(n));
            assert_eq!(t.height(), n / 2 + 1, "N={n}");
        }
    }

    #[test]
    fn fast_construction_matches_symbolic_reference() {
        for n in 1..=64usize {
            for perm in [
                BlockPermutation::identity(n),
                single_stage_permutation(n),
                multi_stage_permutation(n),
            ] {
                assert_eq!(
                    EliminationTree::from_permuted_tridiag(n, &perm),
                    EliminationTree::by_symbolic_elimination(n, &perm),
                    "N={n}"
                );
            }
        }
    }

    #[test]
    fn level_sets_partition_nodes() {
        let t = EliminationTree::from_permuted_tridiag(20, &multi_stage_permutation(20));
        let sets = t.level_sets();
        assert_eq!(sets.iter().map(Vec::len).sum::<usize>(), 20);
        assert_eq!(sets.len(), 5);
    }
}
