//! Size-bounded assignment as a min-cost flow.
//!
//! Network: source → point (cap 1) → cluster (cap 1, cost c_ij); each
//! cluster sends its mandatory `lower_j` units straight to the sink and up
//! to `upper_j − lower_j` optional units through an overflow node whose
//! link to the sink carries `n − Σ lower`. A flow of value `n` therefore
//! saturates every mandatory edge, and successive shortest paths with
//! Johnson potentials give the cheapest such flow.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }
}

#[derive(PartialEq)]
struct State {
    dist: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Assigns each row of `costs` (points × clusters) to a cluster so that
/// cluster `j` receives between `lower[j]` and `upper[j]` points and the
/// total cost is minimal. `None` when the bounds are infeasible.
pub fn min_cost_assignment(costs: &[Vec<f64>], lower: &[usize], upper: &[usize]) -> Option<Vec<usize>> {
    let n = costs.len();
    let k = lower.len();
    let mandatory: usize = lower.iter().sum();
    if mandatory > n || upper.iter().sum::<usize>() < n || lower.iter().zip(upper).any(|(l, u)| l > u) {
        return None;
    }
    let source = 0;
    let point = |i: usize| 1 + i;
    let cluster = |j: usize| 1 + n + j;
    let overflow = 1 + n + k;
    let sink = overflow + 1;
    let mut g = Graph::new(sink + 1);
    for (i, row) in costs.iter().enumerate() {
        g.add(source, point(i), 1, 0.0);
        for (j, &c) in row.iter().enumerate() {
            if upper[j] > 0 {
                g.add(point(i), cluster(j), 1, c);
            }
        }
    }
    for j in 0..k {
        if lower[j] > 0 {
            g.add(cluster(j), sink, lower[j] as i64, 0.0);
        }
        if upper[j] > lower[j] {
            g.add(cluster(j), overflow, (upper[j] - lower[j]) as i64, 0.0);
        }
    }
    g.add(overflow, sink, (n - mandatory) as i64, 0.0);

    let v = g.adj.len();
    // initial costs are non-negative, so zero potentials are valid
    let mut potential = vec![0.0; v];
    let mut flow = 0;
    while flow < n {
        let mut dist = vec![f64::INFINITY; v];
        let mut prev_edge = vec![usize::MAX; v];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([State { dist: 0.0, node: source }]);
        while let Some(State { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &g.adj[u] {
                let edge = &g.edges[e];
                if edge.cap <= 0 {
                    continue;
                }
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    prev_edge[edge.to] = e;
                    heap.push(State { dist: nd, node: edge.to });
                }
            }
        }
        if !dist[sink].is_finite() {
            return None;
        }
        for (p, d) in potential.iter_mut().zip(&dist) {
            if d.is_finite() {
                *p += d;
            }
        }
        let mut node = sink;
        while node != source {
            let e = prev_edge[node];
            g.edges[e].cap -= 1;
            g.edges[e ^ 1].cap += 1;
            node = g.edges[e ^ 1].to;
        }
        flow += 1;
    }

    let mut labels = vec![usize::MAX; n];
    for (i, label) in labels.iter_mut().enumerate() {
        for &e in &g.adj[point(i)] {
            let edge = &g.edges[e];
            if e % 2 == 0 && edge.to != source && edge.cap == 0 {
                *label = edge.to - 1 - n;
            }
        }
    }
    debug_assert!(labels.iter().all(|&l| l < k));
    Some(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(costs: &[Vec<f64>], lower: &[usize], upper: &[usize]) -> Option<f64> {
        let n = costs.len();
        let k = lower.len();
        let mut best: Option<f64> = None;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut sizes = vec![0; k];
            let mut cost = 0.0;
            for row in costs {
                let j = c % k;
                c /= k;
                sizes[j] += 1;
                cost += row[j];
            }
            if sizes.iter().zip(lower.iter().zip(upper)).all(|(s, (l, u))| s >= l && s <= u) {
                best = Some(best.map_or(cost, |b: f64| b.min(cost)));
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=7);
            let k = rng.random_range(1..=3);
            let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random::<f64>() * 10.0).collect()).collect();
            let lower: Vec<usize> = (0..k).map(|_| rng.random_range(0..=2)).collect();
            let upper: Vec<usize> = lower.iter().map(|l| l + rng.random_range(0..=4)).collect();
            let expected = brute_force(&costs, &lower, &upper);
            let got = min_cost_assignment(&costs, &lower, &upper);
            match (expected, got) {
                (None, None) => {}
                (Some(best), Some(labels)) => {
                    let cost: f64 = labels.iter().enumerate().map(|(i, &j)| costs[i][j]).sum();
                    assert!((cost - best).abs() < 1e-9, "cost {cost} vs {best}");
                    for j in 0..k {
                        let s = labels.iter().filter(|&&l| l == j).count();
                        assert!(s >= lower[j] && s <= upper[j]);
                    }
                }
                (e, g) => panic!("feasibility mismatch: brute {e:?} flow {g:?}"),
            }
        }
    }

    #[test]
    fn lower_bounds_force_expensive_moves() {
        let costs = vec![vec![0.0, 5.0], vec![0.0, 5.0], vec![0.0, 1.0]];
        let labels = min_cost_assignment(&costs, &[0, 1], &[3, 3]).unwrap();
        assert_eq!(labels, vec![0, 0, 1]);
        assert!(min_cost_assignment(&costs, &[2, 2], &[3, 3]).is_none());
    }
}
