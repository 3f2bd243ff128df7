//! Network simplex for the dense transportation problem.
//!
//! The spanning-tree bookkeeping (parent, predecessor arc, thread order,
//! subtree sizes, last successors) follows the classical primal network
//! simplex with strongly feasible trees: the leaving arc is the last
//! blocking arc met when walking the cycle in its orientation, which rules
//! out cycling under degenerate pivots.
//!
//! Nodes `0..n` are sources, `n..n+m` targets and `n+m` is the artificial
//! root. Arc `i*m + j` joins source `i` to target `j`; arc `n*m + u` is the
//! artificial arc between node `u` and the root.

use alloc::vec;
use alloc::vec::Vec;

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i8 = 1;
const DIR_DOWN: i8 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Scan blocks of about `sqrt(arcs)` arcs, take the most negative reduced
    /// cost of the first block that has one.
    #[default]
    BlockSearch,
    /// First eligible arc in index order (Bland's rule).
    FirstEligible,
}

pub(crate) struct Solution {
    /// `(source, target, flow)` for every real arc with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    pub iterations: u64,
}

pub(crate) struct NetworkSimplex<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    art_cost: f64,
    node_num: usize,
    arc_num: usize,
    // arc data (real arcs are implicit for source/target/cost)
    flow: Vec<f64>,
    state: Vec<i8>,
    // artificial arcs
    art_forward: Vec<bool>,
    // tree
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<f64>,
    dirty_revs: Vec<usize>,
    // pivot data
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
    next_arc: usize,
    block_size: usize,
    rule: PivotRule,
}

const NONE: usize = usize::MAX;

impl<'a> NetworkSimplex<'a> {
    /// `cost` is the `n × m` row-major cost matrix; `supply` and `demand`
    /// must be positive with (nearly) equal sums.
    pub fn new(supply: &[f64], demand: &[f64], cost: &'a [f64], rule: PivotRule) -> Self {
        let n = supply.len();
        let m = demand.len();
        let node_num = n + m;
        let arc_num = n * m;
        let max_cost = cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let art_cost = (max_cost + 1.0) * node_num as f64;
        let root = node_num;
        let all = arc_num + node_num;

        let mut s = NetworkSimplex {
            n,
            m,
            cost,
            art_cost,
            node_num,
            arc_num,
            flow: vec![0.0; all],
            state: vec![STATE_LOWER; all],
            art_forward: vec![true; node_num],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![0; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pi: vec![0.0; node_num + 1],
            dirty_revs: Vec::new(),
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
            next_arc: 0,
            block_size: (libm::sqrt(arc_num as f64) as usize).max(10),
            rule,
        };
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = node_num + 1;
        s.last_succ[root] = root - 1;
        s.pi[root] = 0.0;
        for u in 0..node_num {
            let e = arc_num + u;
            let sup = if u < n { supply[u] } else { -demand[u - n] };
            s.parent[u] = root;
            s.pred[u] = e;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.succ_num[u] = 1;
            s.last_succ[u] = u;
            s.state[e] = STATE_TREE;
            if sup >= 0.0 {
                s.art_forward[u] = true;
                s.pred_dir[u] = DIR_UP;
                s.pi[u] = 0.0;
                s.flow[e] = sup;
            } else {
                s.art_forward[u] = false;
                s.pred_dir[u] = DIR_DOWN;
                s.pi[u] = art_cost;
                s.flow[e] = -sup;
            }
        }
        s
    }

    #[inline]
    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.m
        } else {
            let u = e - self.arc_num;
            if self.art_forward[u] {
                u
            } else {
                self.node_num
            }
        }
    }

    #[inline]
    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.n + e % self.m
        } else {
            let u = e - self.arc_num;
            if self.art_forward[u] {
                self.node_num
            } else {
                u
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.arc_num {
            self.cost[e]
        } else if self.art_forward[e - self.arc_num] {
            0.0
        } else {
            self.art_cost
        }
    }

    #[inline]
    fn reduced(&self, e: usize) -> (f64, f64) {
        let i = e / self.m;
        let j = self.n + e % self.m;
        let c = self.cost[e];
        let (ps, pt) = (self.pi[i], self.pi[j]);
        let scale = c.abs().max(ps.abs()).max(pt.abs()).max(1e-300);
        (self.state[e] as f64 * (c + ps - pt), scale)
    }

    const EPS: f64 = 1e-13;

    fn find_entering_arc(&mut self) -> bool {
        match self.rule {
            PivotRule::FirstEligible => {
                for e in 0..self.arc_num {
                    let (c, scale) = self.reduced(e);
                    if c < -Self::EPS * scale {
                        self.in_arc = e;
                        return true;
                    }
                }
                false
            }
            PivotRule::BlockSearch => {
                let mut min = 0.0;
                let mut found = false;
                let mut cnt = self.block_size;
                let total = self.arc_num;
                let mut e = self.next_arc;
                for _ in 0..total {
                    let (c, scale) = self.reduced(e);
                    if c < -Self::EPS * scale && c < min {
                        min = c;
                        self.in_arc = e;
                        found = true;
                    }
                    e += 1;
                    if e == total {
                        e = 0;
                    }
                    cnt -= 1;
                    if cnt == 0 {
                        if found {
                            self.next_arc = e;
                            return true;
                        }
                        cnt = self.block_size;
                    }
                }
                if found {
                    self.next_arc = e;
                }
                found
            }
        }
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        // Entering arcs are always at their lower bound (capacities are
        // infinite), so the cycle is oriented along the entering arc.
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[e];
                if d < self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[e];
                if d <= self.delta {
                    self.delta = d;
                    self.u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            self.flow[self.in_arc] += val;
            let mut u = self.source(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        let out = self.pred[self.u_out];
        self.flow[out] = 0.0;
        self.state[self.in_arc] = STATE_TREE;
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];
        let in_dir = if u_in == self.source(in_arc) { DIR_UP } else { DIR_DOWN };

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    pub fn solve(mut self, max_iterations: u64) -> Option<Solution> {
        let mut iterations = 0u64;
        while self.find_entering_arc() {
            if iterations >= max_iterations {
                return None;
            }
            self.find_join_node();
            if !self.find_leaving_arc() {
                // Unbounded: impossible for a complete bipartite graph with
                // nonnegative costs.
                return None;
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            iterations += 1;
            #[cfg(test)]
            if self.node_num <= 24 {
                self.check_tree();
            }
        }
        let mut flows = Vec::new();
        for e in 0..self.arc_num {
            if self.flow[e] > 0.0 {
                flows.push((e / self.m, e % self.m, self.flow[e]));
            }
        }
        Some(Solution { flows, iterations })
    }

    #[cfg(test)]
    fn check_tree(&self) {
        let root = self.node_num;
        // Thread visits every node once, starting at the root.
        let mut seen = vec![false; root + 1];
        let mut u = root;
        for _ in 0..=root {
            assert!(!seen[u]);
            seen[u] = true;
            assert_eq!(self.rev_thread[self.thread[u]], u);
            u = self.thread[u];
        }
        assert_eq!(u, root);
        for v in 0..root {
            // Subtree of v is contiguous in thread order and has succ_num nodes.
            let mut count = 1;
            let mut w = v;
            while w != self.last_succ[v] {
                w = self.thread[w];
                count += 1;
                let mut a = w;
                while a != v {
                    a = self.parent[a];
                    assert_ne!(a, NONE, "thread left the subtree");
                }
            }
            assert_eq!(count, self.succ_num[v]);
            // Tree arcs have zero reduced cost.
            let e = self.pred[v];
            let (s, t) = (self.source(e), self.target(e));
            let rc = self.arc_cost(e) + self.pi[s] - self.pi[t];
            assert!(rc.abs() < 1e-7 * (1.0 + self.art_cost), "reduced cost {rc}");
            assert!(self.flow[e] >= 0.0);
            if self.pred_dir[v] == DIR_UP {
                assert_eq!(s, v);
                assert_eq!(t, self.parent[v]);
            } else {
                assert_eq!(t, v);
                assert_eq!(s, self.parent[v]);
            }
        }
    }
}
