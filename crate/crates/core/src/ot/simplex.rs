//! Primal network simplex for the balanced transportation problem.
//!
//! Sources `0..n` carry supply `a_i`, sinks `n..n+m` carry demand `b_j`, and an
//! artificial root is joined to every node. The spanning tree is kept strongly
//! feasible, which rules out cycling under degenerate pivots. Entering arcs are
//! chosen by block search.

const UP: f64 = 1.0;
const DOWN: f64 = -1.0;
const NONE: usize = usize::MAX;

/// Optimal flow on the real arcs plus dual certificates.
#[derive(Debug, Clone)]
pub struct Solution {
    /// `(i, j, flow)` for every arc with positive flow, row-major order.
    pub flows: Vec<(usize, usize, f64)>,
    pub objective: f64,
    /// Value of the dual program at the terminal potentials.
    pub dual_objective: f64,
    /// Kantorovich potentials with `f_i + g_j ≤ c_ij`, tight on the support.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Largest flow left on an artificial arc.
    pub artificial_residual: f64,
    pub pivots: usize,
}

#[derive(Debug)]
pub struct Stalled {
    pub pivots: usize,
}

struct Solver<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    art_cost: f64,
    supply: Vec<f64>,
    // arcs: real `i*m + j` for `i→n+j`, artificial `n*m + u`
    flow: Vec<f64>,
    art_src: Vec<usize>,
    art_tgt: Vec<usize>,
    in_tree: Vec<bool>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    mark: Vec<u64>,
    stamp: u64,
    next_arc: usize,
    block: usize,
    eps: f64,
}

impl<'a> Solver<'a> {
    fn real(&self) -> usize {
        self.n * self.m
    }

    fn root(&self) -> usize {
        self.n + self.m
    }

    fn src(&self, e: usize) -> usize {
        if e < self.real() {
            e / self.m
        } else {
            self.art_src[e - self.real()]
        }
    }

    fn tgt(&self, e: usize) -> usize {
        if e < self.real() {
            self.n + e % self.m
        } else {
            self.art_tgt[e - self.real()]
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real() {
            self.cost[e]
        } else if self.art_tgt[e - self.real()] == self.root() {
            0.0
        } else {
            self.art_cost
        }
    }

    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let nodes = n + m + 1;
        let root = n + m;
        let max_cost = cost.iter().copied().fold(0.0, f64::max);
        let supply: Vec<f64> = a.iter().copied().chain(b.iter().map(|x| -x)).collect();
        let mut s = Solver {
            n,
            m,
            cost,
            art_cost: (max_cost + 1.0) * nodes as f64,
            supply,
            flow: vec![0.0; n * m + n + m],
            art_src: vec![0; n + m],
            art_tgt: vec![0; n + m],
            in_tree: vec![false; n * m + n + m],
            pi: vec![0.0; nodes],
            parent: vec![NONE; nodes],
            pred: vec![NONE; nodes],
            pred_dir: vec![0.0; nodes],
            first_child: vec![NONE; nodes],
            next_sib: vec![NONE; nodes],
            prev_sib: vec![NONE; nodes],
            mark: vec![0; nodes],
            stamp: 0,
            next_arc: 0,
            block: ((n * m) as f64).sqrt().ceil().max(10.0) as usize,
            eps: 1e-12 * (1.0 + max_cost),
        };
        for u in 0..n + m {
            let e = n * m + u;
            s.in_tree[e] = true;
            s.pred[u] = e;
            if s.supply[u] >= 0.0 {
                s.pred_dir[u] = UP;
                s.art_src[u] = u;
                s.art_tgt[u] = root;
                s.flow[e] = s.supply[u];
                s.pi[u] = 0.0;
            } else {
                s.pred_dir[u] = DOWN;
                s.art_src[u] = root;
                s.art_tgt[u] = u;
                s.flow[e] = -s.supply[u];
                s.pi[u] = s.art_cost;
            }
            s.attach(u, root);
        }
        s
    }

    fn attach(&mut self, u: usize, p: usize) {
        self.parent[u] = p;
        let head = self.first_child[p];
        self.next_sib[u] = head;
        self.prev_sib[u] = NONE;
        if head != NONE {
            self.prev_sib[head] = u;
        }
        self.first_child[p] = u;
    }

    fn detach(&mut self, u: usize) {
        let p = self.parent[u];
        let (prev, next) = (self.prev_sib[u], self.next_sib[u]);
        if prev == NONE {
            self.first_child[p] = next;
        } else {
            self.next_sib[prev] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.parent[u] = NONE;
        self.next_sib[u] = NONE;
        self.prev_sib[u] = NONE;
    }

    fn reduced(&self, e: usize) -> f64 {
        self.arc_cost(e) + self.pi[self.src(e)] - self.pi[self.tgt(e)]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let arcs = self.real();
        let mut best = -self.eps;
        let mut found = None;
        let mut cnt = self.block;
        for k in 0..arcs {
            let e = (self.next_arc + k) % arcs;
            if !self.in_tree[e] {
                let c = self.cost[e] + self.pi[e / self.m] - self.pi[self.n + e % self.m];
                if c < best {
                    best = c;
                    found = Some(e);
                }
            }
            cnt -= 1;
            if cnt == 0 {
                if found.is_some() {
                    self.next_arc = (e + 1) % arcs;
                    return found;
                }
                cnt = self.block;
            }
        }
        found
    }

    fn find_join(&mut self, a: usize, b: usize) -> usize {
        self.stamp += 1;
        let mut u = a;
        while u != NONE {
            self.mark[u] = self.stamp;
            u = self.parent[u];
        }
        let mut v = b;
        while self.mark[v] != self.stamp {
            v = self.parent[v];
        }
        v
    }

    fn pivot(&mut self, ein: usize) {
        let first = self.src(ein);
        let second = self.tgt(ein);
        let join = self.find_join(first, second);

        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    side = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    side = 2;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(side != 0, "unbounded cycle in a nonnegative-cost network");
        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };

        if delta > 0.0 {
            self.flow[ein] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] * delta;
                u = self.parent[u];
            }
            u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] * delta;
                u = self.parent[u];
            }
        }
        // the leaving arc is exactly zero by construction; clear rounding noise
        let e_out = self.pred[u_out];
        self.flow[e_out] = 0.0;
        self.in_tree[e_out] = false;
        self.in_tree[ein] = true;

        let sigma = self.reduced(ein);
        let shift = if u_in == first { -sigma } else { sigma };

        // reverse the path u_in → … → u_out and hang it below v_in
        let mut path = Vec::new();
        let mut w = u_in;
        loop {
            path.push(w);
            if w == u_out {
                break;
            }
            w = self.parent[w];
        }
        let old_pred: Vec<usize> = path.iter().map(|&w| self.pred[w]).collect();
        let old_dir: Vec<f64> = path.iter().map(|&w| self.pred_dir[w]).collect();
        for &w in &path {
            self.detach(w);
        }
        self.attach(u_in, v_in);
        self.pred[u_in] = ein;
        self.pred_dir[u_in] = if self.src(ein) == u_in { UP } else { DOWN };
        for k in 1..path.len() {
            let (child, par) = (path[k], path[k - 1]);
            self.attach(child, par);
            self.pred[child] = old_pred[k - 1];
            self.pred_dir[child] = -old_dir[k - 1];
        }

        if shift != 0.0 {
            let mut stack = vec![u_in];
            while let Some(x) = stack.pop() {
                self.pi[x] += shift;
                let mut c = self.first_child[x];
                while c != NONE {
                    stack.push(c);
                    c = self.next_sib[c];
                }
            }
        }
    }
}

/// Solves `min Σ c_ij x_ij` over couplings of `a` (length n) and `b`
/// (length m); `cost` is row-major `n × m`. Both marginals must carry the
/// same total mass.
pub fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Solution, Stalled> {
    let (n, m) = (a.len(), b.len());
    assert_eq!(cost.len(), n * m, "cost matrix size");
    let mut s = Solver::new(a, b, cost);
    let limit = 100 * (n * m + n + m) + 10_000;
    let mut pivots = 0;
    while let Some(e) = s.find_entering() {
        s.pivot(e);
        pivots += 1;
        if pivots > limit {
            return Err(Stalled { pivots });
        }
    }
    let mut flows = Vec::new();
    let mut objective = 0.0;
    for e in 0..n * m {
        let f = s.flow[e];
        if f > 0.0 {
            flows.push((e / m, e % m, f));
            objective += f * cost[e];
        }
    }
    let dual_objective = -(0..n + m).map(|u| s.supply[u] * s.pi[u]).sum::<f64>();
    let artificial_residual = s.flow[n * m..].iter().copied().fold(0.0, f64::max);
    let f = (0..n).map(|i| -s.pi[i]).collect();
    let g = (0..m).map(|j| s.pi[n + j]).collect();
    Ok(Solution {
        flows,
        objective,
        dual_objective,
        f,
        g,
        artificial_residual,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_swap() {
        let cost = [1.0, 0.0, 0.0, 1.0];
        let s = solve(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert!(s.objective.abs() < 1e-15);
        assert_eq!(s.flows, vec![(0, 1, 0.5), (1, 0, 0.5)]);
    }

    #[test]
    fn unbalanced_shapes() {
        // one source split over three sinks
        let s = solve(&[1.0], &[0.2, 0.3, 0.5], &[1.0, 2.0, 3.0]).unwrap();
        assert!((s.objective - (0.2 + 0.6 + 1.5)).abs() < 1e-12);
        assert!((s.dual_objective - s.objective).abs() < 1e-9);
    }

    #[test]
    fn zero_mass_nodes_are_harmless() {
        let s = solve(&[0.0, 1.0], &[1.0, 0.0], &[5.0, 5.0, 2.0, 7.0]).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert!(s.artificial_residual < 1e-15);
    }
}
