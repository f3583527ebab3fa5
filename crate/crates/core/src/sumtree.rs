//! Growable Fenwick tree over non-negative weights with proportional lookup.

/// Incremental updates accumulate rounding error in the internal nodes; the
/// tree is rebuilt from the exact leaves after this many updates.
const REBUILD_PERIOD: u32 = 1 << 16;

#[derive(Debug, Clone)]
pub struct SumTree {
    /// Exact leaf weights, `leaves.len() == capacity`.
    leaves: Vec<f64>,
    /// 1-based Fenwick array, `tree.len() == capacity + 1`.
    tree: Vec<f64>,
    updates: u32,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2).next_power_of_two();
        SumTree { leaves: vec![0.0; capacity], tree: vec![0.0; capacity + 1], updates: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.leaves.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.leaves.get(i).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        // With a power-of-two capacity the last node covers every leaf.
        self.tree[self.capacity()].max(0.0)
    }

    /// Sets leaf `i` to `value`, growing the tree when `i` is out of range.
    pub fn set(&mut self, i: usize, value: f64) {
        debug_assert!(value >= 0.0 && value.is_finite());
        if i >= self.capacity() {
            self.grow(i + 1);
        }
        let delta = value - self.leaves[i];
        if delta == 0.0 {
            return;
        }
        self.leaves[i] = value;
        self.updates += 1;
        if self.updates >= REBUILD_PERIOD {
            self.rebuild();
            return;
        }
        let n = self.capacity();
        let mut node = i + 1;
        while node <= n {
            self.tree[node] += delta;
            node += node & node.wrapping_neg();
        }
    }

    /// Index `i` such that the prefix sums satisfy
    /// `sum(leaves[..i]) <= target < sum(leaves[..=i])`, for
    /// `0 <= target < total()`. Returns `None` on an empty tree.
    pub fn find(&self, target: f64) -> Option<usize> {
        let n = self.capacity();
        let mut pos = 0;
        let mut rest = target;
        let mut step = n;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rest {
                pos = next;
                rest -= self.tree[next];
            }
            step >>= 1;
        }
        if pos < n && self.leaves[pos] > 0.0 {
            return Some(pos);
        }
        // Rounding sent us onto an empty slot: fall back to an exact scan.
        self.scan(target)
    }

    fn scan(&self, target: f64) -> Option<usize> {
        let mut acc = 0.0;
        let mut last = None;
        for (i, &w) in self.leaves.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last = Some(i);
                if target < acc {
                    return last;
                }
            }
        }
        last
    }

    pub fn rebuild(&mut self) {
        let n = self.capacity();
        self.tree.iter_mut().for_each(|x| *x = 0.0);
        for i in 1..=n {
            self.tree[i] += self.leaves[i - 1];
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
        self.updates = 0;
    }

    fn grow(&mut self, min_capacity: usize) {
        let capacity = min_capacity.next_power_of_two();
        self.leaves.resize(capacity, 0.0);
        self.tree = vec![0.0; capacity + 1];
        self.rebuild();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_respects_prefix_sums() {
        let mut t = SumTree::new(4);
        t.set(0, 1.0);
        t.set(2, 2.0);
        t.set(3, 0.5);
        assert_eq!(t.total(), 3.5);
        assert_eq!(t.find(0.0), Some(0));
        assert_eq!(t.find(0.999), Some(0));
        assert_eq!(t.find(1.0), Some(2));
        assert_eq!(t.find(2.999), Some(2));
        assert_eq!(t.find(3.0), Some(3));
        assert_eq!(t.find(3.49), Some(3));
    }

    #[test]
    fn grows_on_demand() {
        let mut t = SumTree::new(2);
        t.set(1, 1.0);
        t.set(9, 3.0);
        assert!(t.capacity() >= 10);
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(2.0), Some(9));
        assert_eq!(t.get(9), 3.0);
    }

    #[test]
    fn empty_tree_has_no_index() {
        let t = SumTree::new(8);
        assert_eq!(t.find(0.0), None);
        assert_eq!(t.total(), 0.0);
    }

    #[test]
    fn zeroed_leaves_are_never_selected() {
        let mut t = SumTree::new(8);
        for i in 0..8 {
            t.set(i, 0.1 * (i + 1) as f64);
        }
        for i in 0..8 {
            if i % 2 == 0 {
                t.set(i, 0.0);
            }
        }
        let total = t.total();
        for j in 0..1000 {
            let idx = t.find(total * j as f64 / 1000.0).unwrap();
            assert!(idx % 2 == 1, "picked empty leaf {idx}");
        }
    }

    #[test]
    fn drift_is_bounded_after_many_updates() {
        let mut t = SumTree::new(16);
        for step in 0..200_000u64 {
            let i = (step * 7 % 16) as usize;
            t.set(i, ((step % 13) as f64) * 0.37 + 1e-3);
        }
        let exact: f64 = (0..16).map(|i| t.get(i)).sum();
        assert!((t.total() - exact).abs() < 1e-9 * exact);
    }
}
