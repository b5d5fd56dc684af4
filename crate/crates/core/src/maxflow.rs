//! Dinic's algorithm with real capacities.

use std::collections::VecDeque;

const EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    adj: Vec<Vec<Edge>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowNetwork {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    /// Adds `u -> v` and returns its handle `(u, index)` for reading the flow later.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) -> (usize, usize) {
        let iu = self.adj[u].len();
        let iv = self.adj[v].len() + usize::from(u == v);
        self.adj[u].push(Edge { to: v, cap, rev: iv });
        self.adj[v].push(Edge { to: u, cap: 0.0, rev: iu });
        (u, iu)
    }

    /// Flow currently routed through an edge handle.
    pub fn flow(&self, handle: (usize, usize)) -> f64 {
        let e = &self.adj[handle.0][handle.1];
        self.adj[e.to][e.rev].cap
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for e in &self.adj[u] {
                if e.cap > EPS && self.level[e.to] < 0 {
                    self.level[e.to] = self.level[u] + 1;
                    q.push_back(e.to);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.adj[u].len() {
            let i = self.iter[u];
            let (to, cap) = (self.adj[u][i].to, self.adj[u][i].cap);
            if cap > EPS && self.level[to] == self.level[u] + 1 {
                let d = self.dfs(to, t, pushed.min(cap));
                if d > EPS {
                    self.adj[u][i].cap -= d;
                    let rev = self.adj[u][i].rev;
                    self.adj[to][rev].cap += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return total;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph (source side of a minimum cut).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for e in &self.adj[u] {
                if e.cap > EPS && !seen[e.to] {
                    seen[e.to] = true;
                    q.push_back(e.to);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_network() {
        // CLRS example, max flow 23
        let mut g = FlowNetwork::new(6);
        for (u, v, c) in [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (1, 3, 12.0),
            (2, 1, 4.0),
            (2, 4, 14.0),
            (3, 2, 9.0),
            (3, 5, 20.0),
            (4, 3, 7.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(u, v, c);
        }
        assert!((g.max_flow(0, 5) - 23.0).abs() < 1e-12);
        let cut = g.source_side(0);
        assert!(cut[0] && !cut[5]);
    }

    #[test]
    fn fractional_bipartite() {
        let mut g = FlowNetwork::new(4);
        let a = g.add_edge(0, 1, 0.25);
        g.add_edge(1, 2, f64::INFINITY);
        g.add_edge(2, 3, 0.75);
        assert!((g.max_flow(0, 3) - 0.25).abs() < 1e-15);
        assert!((g.flow(a) - 0.25).abs() < 1e-15);
    }
}
