//! Bipartite transportation problem `max sum r_ij y_ij` subject to supply and
//! demand caps, solved as a min-cost flow by successive shortest paths.

use std::collections::VecDeque;

use super::simplex::{solve_lp, LpProblem, Relation};

const COST_TOL: f64 = 1e-12;
const INTEGRAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Transport {
    pub value: f64,
    /// `flow[i][j]`, DC-major.
    pub flow: Vec<Vec<f64>>,
    /// Multipliers of the supply rows `sum_j y_ij <= supply_i`.
    pub supply_duals: Vec<f64>,
    /// Multipliers of the demand rows `sum_i y_ij <= demand_j`.
    pub demand_duals: Vec<f64>,
}

/// `rewards` is `n` rows of length `m`.
pub fn solve_transportation(rewards: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> Transport {
    let integral = supply.iter().chain(demand).all(|v| (v - v.round()).abs() <= INTEGRAL_TOL);
    if integral {
        let s: Vec<i64> = supply.iter().map(|v| v.round().max(0.0) as i64).collect();
        let d: Vec<i64> = demand.iter().map(|v| v.round().max(0.0) as i64).collect();
        solve_integral(rewards, &s, &d)
    } else {
        solve_via_lp(rewards, supply, demand)
    }
}

/// Builds the transportation LP: variable `i*m + j` is `y_ij`, rows `0..n`
/// are supplies and rows `n..n+m` are demands.
pub fn transportation_lp(rewards: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> LpProblem {
    let n = rewards.len();
    let m = demand.len();
    let mut p = LpProblem::new(n * m);
    for (i, row) in rewards.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            p.set_objective(i * m + j, r);
        }
    }
    for (i, &s) in supply.iter().enumerate() {
        p.add_constraint((0..m).map(|j| (i * m + j, 1.0)).collect(), Relation::Le, s);
    }
    for (j, &d) in demand.iter().enumerate() {
        p.add_constraint((0..n).map(|i| (i * m + j, 1.0)).collect(), Relation::Le, d);
    }
    p
}

fn solve_via_lp(rewards: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> Transport {
    let n = rewards.len();
    let m = demand.len();
    let sol = solve_lp(&transportation_lp(rewards, supply, demand));
    let flow = (0..n).map(|i| sol.primal[i * m..(i + 1) * m].to_vec()).collect();
    Transport {
        value: sol.objective,
        flow,
        supply_duals: sol.duals[..n].to_vec(),
        demand_duals: sol.duals[n..].to_vec(),
    }
}

#[derive(Clone, Copy)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
    rev: usize,
}

struct Graph {
    adj: Vec<Vec<Arc>>,
}

impl Graph {
    fn new(nodes: usize) -> Self {
        Graph { adj: vec![Vec::new(); nodes] }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> (usize, usize) {
        let a = self.adj[from].len();
        let b = self.adj[to].len() + usize::from(from == to);
        self.adj[from].push(Arc { to, cap, cost, rev: b });
        self.adj[to].push(Arc { to: from, cap: 0, cost: -cost, rev: a });
        (from, a)
    }

    /// Label-correcting shortest paths from every node in `sources` at distance 0.
    fn distances(&self, sources: &[usize]) -> (Vec<f64>, Vec<Option<(usize, usize)>>) {
        let nodes = self.adj.len();
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![None; nodes];
        let mut queued = vec![false; nodes];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0.0;
            queued[s] = true;
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            for (k, arc) in self.adj[u].iter().enumerate() {
                if arc.cap > 0 && dist[u] + arc.cost < dist[arc.to] - COST_TOL {
                    dist[arc.to] = dist[u] + arc.cost;
                    prev[arc.to] = Some((u, k));
                    if !queued[arc.to] {
                        queued[arc.to] = true;
                        queue.push_back(arc.to);
                    }
                }
            }
        }
        (dist, prev)
    }
}

fn solve_integral(rewards: &[Vec<f64>], supply: &[i64], demand: &[i64]) -> Transport {
    let n = rewards.len();
    let m = demand.len();
    let src = 0;
    let dc = |i: usize| 1 + i;
    let ty = |j: usize| 1 + n + j;
    let sink = 1 + n + m;
    let mut g = Graph::new(sink + 1);
    for (i, &s) in supply.iter().enumerate() {
        g.add(src, dc(i), s, 0.0);
    }
    // Pair arcs are uncapacitated so their dual constraints stay in the residual graph.
    let big: i64 = i64::MAX / 4;
    let mut pair_arcs = Vec::new();
    for (i, row) in rewards.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            if r > 0.0 {
                pair_arcs.push((i, j, g.add(dc(i), ty(j), big, -r)));
            }
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        g.add(ty(j), sink, d, 0.0);
    }

    loop {
        let (dist, prev) = g.distances(&[src]);
        if !(dist[sink] < -COST_TOL) {
            break;
        }
        let mut bottleneck = i64::MAX;
        let mut v = sink;
        while let Some((u, k)) = prev[v] {
            bottleneck = bottleneck.min(g.adj[u][k].cap);
            v = u;
        }
        let mut v = sink;
        while let Some((u, k)) = prev[v] {
            g.adj[u][k].cap -= bottleneck;
            let rev = g.adj[u][k].rev;
            g.adj[v][rev].cap += bottleneck;
            v = u;
        }
    }

    let mut flow = vec![vec![0.0; m]; n];
    let mut value = 0.0;
    for &(i, j, (u, k)) in &pair_arcs {
        let units = big - g.adj[u][k].cap;
        if units > 0 {
            flow[i][j] = units as f64;
            value += rewards[i][j] * units as f64;
        }
    }

    // Potentials: close the circulation with a free t->s arc and take shortest
    // distances from a virtual root attached to every node.
    let shipped: i64 = pair_arcs.iter().map(|&(_, _, (u, k))| big - g.adj[u][k].cap).sum();
    let (u, k) = g.add(sink, src, i64::MAX / 4, 0.0);
    let rev = g.adj[u][k].rev;
    g.adj[src][rev].cap = shipped;
    let all: Vec<usize> = (0..=sink).collect();
    let (d, _) = g.distances(&all);
    let supply_duals = (0..n).map(|i| clean((d[dc(i)] - d[src]).max(0.0))).collect();
    let demand_duals = (0..m).map(|j| clean((d[sink] - d[ty(j)]).max(0.0))).collect();
    Transport { value, flow, supply_duals, demand_duals }
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.4], vec![0.0, 0.7]]
    }

    #[test]
    fn one_unit_each() {
        let t = solve_transportation(&small(), &[1.0, 1.0], &[1.0, 1.0]);
        assert!((t.value - 1.7).abs() < 1e-12);
        assert_eq!(t.flow, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn first_dc_serves_both() {
        let t = solve_transportation(&small(), &[2.0, 0.0], &[1.0, 1.0]);
        assert!((t.value - 1.4).abs() < 1e-12);
    }

    #[test]
    fn zero_demand() {
        let t = solve_transportation(&small(), &[3.0, 2.0], &[0.0, 0.0]);
        assert_eq!(t.value, 0.0);
    }

    #[test]
    fn duals_certify_optimum() {
        let r = small();
        for (s, d) in [([1.0, 1.0], [1.0, 1.0]), ([2.0, 0.0], [1.0, 1.0]), ([3.0, 1.0], [1.0, 2.0])] {
            let t = solve_transportation(&r, &s, &d);
            let dual: f64 = s.iter().zip(&t.supply_duals).map(|(a, b)| a * b).sum::<f64>()
                + d.iter().zip(&t.demand_duals).map(|(a, b)| a * b).sum::<f64>();
            assert!((dual - t.value).abs() < 1e-9, "{dual} vs {}", t.value);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(t.supply_duals[i] + t.demand_duals[j] >= r[i][j] - 1e-9);
                }
            }
        }
    }

    #[test]
    fn fractional_supply_matches_lp() {
        let t = solve_transportation(&small(), &[0.5, 1.5], &[1.0, 1.0]);
        assert!((t.value - 1.2).abs() < 1e-9);
        let lp = solve_lp(&transportation_lp(&small(), &[0.5, 1.5], &[1.0, 1.0]));
        assert!((t.value - lp.objective).abs() < 1e-9);
    }

    #[test]
    fn saturated_pair_keeps_its_dual() {
        let t = solve_transportation(&[vec![0.05]], &[2.0], &[1.0]);
        assert_eq!(t.supply_duals, vec![0.0]);
        assert!((t.demand_duals[0] - 0.05).abs() < 1e-12);
    }
}
