//! Directed graphs given as per-node parent sets.

use crate::varset::VarSet;

/// Edge list `(parent, child)` sorted lexicographically.
pub fn edges(parents: &[VarSet]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = parents
        .iter()
        .enumerate()
        .flat_map(|(child, pa)| pa.iter().map(move |p| (p, child)))
        .collect();
    out.sort_unstable();
    out
}

/// Kahn's algorithm. Returns `None` when the graph has a cycle or a parent
/// index out of range. Among ready nodes the smallest index goes first.
pub fn topological_order(parents: &[VarSet]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (child, pa) in parents.iter().enumerate() {
        for p in pa.iter() {
            if p >= n {
                return None;
            }
            indegree[child] += 1;
            children[p].push(child);
        }
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| std::cmp::Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(std::cmp::Reverse(c));
            }
        }
    }
    (order.len() == n).then_some(order)
}

pub fn is_acyclic(parents: &[VarSet]) -> bool {
    topological_order(parents).is_some()
}

/// True when `target` can be reached from `source` by following edges
/// parent -> child.
pub fn reaches(parents: &[VarSet], source: usize, target: usize) -> bool {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    for (child, pa) in parents.iter().enumerate() {
        for p in pa.iter() {
            children[p].push(child);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![source];
    while let Some(v) = stack.pop() {
        if v == target {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend(children[v].iter().copied());
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_and_cycle() {
        let chain = vec![VarSet::new(), VarSet::from([0]), VarSet::from([1])];
        assert_eq!(topological_order(&chain), Some(vec![0, 1, 2]));
        assert!(reaches(&chain, 0, 2));
        assert!(!reaches(&chain, 2, 0));

        let cyc = vec![VarSet::from([2]), VarSet::from([0]), VarSet::from([1])];
        assert!(!is_acyclic(&cyc));
        assert_eq!(edges(&cyc), vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn self_loop_is_cyclic() {
        assert!(!is_acyclic(&[VarSet::from([0])]));
    }

    #[test]
    fn empty_graph() {
        assert_eq!(topological_order(&[]), Some(vec![]));
        assert!(is_acyclic(&vec![VarSet::new(); 4]));
    }
}
