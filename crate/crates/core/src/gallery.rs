//! Analytic worst-case families: the integrality-gap family with `C(n, d)`
//! demand types and the grid on which greedy placement stalls at
//! `1 - (1 - 1/Q)^Q`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::model::{DemandScenario, NetworkInstance, Placement};
use crate::placement::{greedy_place, GreedyTrace};
use crate::surrogate::{saa_placement, OffEvaluator};

/// Largest number of demand types a tight instance may have.
pub const MAX_TIGHT_TYPES: u128 = 1_000_000;
/// Largest number of integer placements searched exhaustively.
pub const MAX_BRUTE_FORCE: u128 = 100_000;
/// Bonus per column warehouse index that breaks the greedy ties toward
/// columns.
pub const GRID_PERTURBATION: f64 = 1e-9;

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(pos) = (0..k).rev().find(|&p| cur[p] < n - k + p) else {
            return out;
        };
        cur[pos] += 1;
        for p in pos + 1..k {
            cur[p] = cur[p - 1] + 1;
        }
    }
}

/// All nonnegative integer vectors of length `n` summing to `q`.
fn compositions(n: usize, q: u64) -> Vec<Vec<u64>> {
    fn rec(prefix: &mut Vec<u64>, n: usize, left: u64, out: &mut Vec<Vec<u64>>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in (0..=left).rev() {
            prefix.push(v);
            rec(prefix, n, left - v, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(&mut Vec::with_capacity(n), n, q, &mut out);
    }
    out
}

fn one_hot_set(m: usize) -> Result<ScenarioSet> {
    ScenarioSet::new((0..m).map(|j| DemandScenario::one_hot(m, j)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightFamilyInstance {
    pub n: usize,
    pub d: usize,
    pub q: u64,
    /// Server set of each demand type.
    pub server_sets: Vec<Vec<usize>>,
    pub instance: NetworkInstance,
    /// One scenario per type, each with a single unit of demand.
    #[serde(skip)]
    pub scenarios: Option<ScenarioSet>,
}

/// `n` warehouses, one demand type per `d`-subset served at reward 1, and
/// `Q = n / d` units.
pub fn build_tight(n: usize, d: usize) -> Result<TightFamilyInstance> {
    if d == 0 || n == 0 || !n.is_multiple_of(d) {
        return Err(Error::InvalidArgument(format!("n = {n} must be a positive multiple of d = {d}")));
    }
    let types = binomial(n as u64, d as u64);
    if types > MAX_TIGHT_TYPES {
        return Err(Error::CountExceedsLimit { count: types, limit: MAX_TIGHT_TYPES });
    }
    let server_sets = subsets(n, d);
    let m = server_sets.len();
    let mut rewards = vec![vec![0.0; m]; n];
    for (j, set) in server_sets.iter().enumerate() {
        for &i in set {
            rewards[i][j] = 1.0;
        }
    }
    let q = (n / d) as u64;
    Ok(TightFamilyInstance {
        n,
        d,
        q,
        server_sets,
        instance: NetworkInstance::new(rewards, q)?,
        scenarios: Some(one_hot_set(m)?),
    })
}

/// `1 - prod_{l<d} (n - n/d - l) / (n - l)`.
pub fn tight_closed_form(n: usize, d: usize) -> f64 {
    let q = n / d;
    1.0 - (0..d).map(|l| (n - q - l) as f64 / (n - l) as f64).product::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightGap {
    pub integer_opt: f64,
    pub fractional_opt: f64,
    pub ratio: f64,
    pub closed_form: f64,
    /// False when the integer optimum was taken from the closed form.
    pub exhaustive: bool,
    pub best_placement: Option<Placement>,
}

/// Integer optimum by exhaustive search when feasible, the fractional
/// optimum at `x = 1/d` everywhere, and their ratio.
pub fn tight_gap(n: usize, d: usize) -> Result<TightGap> {
    let fam = build_tight(n, d)?;
    let set = fam.scenarios.as_ref().expect("built with scenarios");
    let eval = OffEvaluator::new(&fam.instance);
    let uniform = vec![1.0 / d as f64; n];
    let fractional_opt = eval.expected(&uniform, set);
    let closed_form = tight_closed_form(n, d);

    let count = binomial((n as u64) + fam.q - 1, fam.q);
    let (integer_opt, best_placement, exhaustive) = if count <= MAX_BRUTE_FORCE {
        let (v, x) = compositions(n, fam.q)
            .into_par_iter()
            .map(|x| {
                let reals: Vec<f64> = x.iter().map(|&u| u as f64).collect();
                (eval.expected(&reals, set), x)
            })
            .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a })
            .expect("at least one placement");
        (v, Some(Placement::new(x, fam.q)?), true)
    } else {
        log::warn!("{count} placements exceed the search limit; integer optimum from the closed form");
        (closed_form, None, false)
    };
    Ok(TightGap {
        integer_opt,
        fractional_opt,
        ratio: integer_opt / fractional_opt,
        closed_form,
        exhaustive,
        best_placement,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyGridInstance {
    pub q: usize,
    /// Column rewards before scaling; `r_Q = (Q-1)^(Q-1)` and
    /// `Q r_i = sum_{j>=i} r_j`.
    pub column_rewards: Vec<u64>,
    /// Multiplier applied to every reward, `1 / Q^(Q-1)`.
    pub scale: f64,
    /// Warehouses `0..Q` serve rows, `Q..2Q-1` serve the first `Q-1` columns.
    /// Location `(row, col)` is demand type `row * Q + col`.
    pub instance: NetworkInstance,
    /// Greedy comparison bonus per warehouse.
    pub perturbation: Vec<f64>,
    #[serde(skip)]
    pub scenarios: Option<ScenarioSet>,
}

pub const MAX_GRID_Q: usize = 8;

pub fn grid_column_rewards(q: usize) -> Result<Vec<u64>> {
    if !(2..=MAX_GRID_Q).contains(&q) {
        return Err(Error::InvalidArgument(format!("grid size {q} outside 2..={MAX_GRID_Q}")));
    }
    let mut r = vec![0u64; q];
    r[q - 1] = ((q - 1) as u64).pow(q as u32 - 1);
    let mut tail = r[q - 1];
    for i in (0..q - 1).rev() {
        if !tail.is_multiple_of(q as u64 - 1) {
            return Err(Error::InvalidInstance(format!("column reward {i} is not integral")));
        }
        r[i] = tail / (q as u64 - 1);
        tail += r[i];
    }
    Ok(r)
}

pub fn build_greedy_grid(q: usize) -> Result<GreedyGridInstance> {
    let column_rewards = grid_column_rewards(q)?;
    let scale = 1.0 / (q as f64).powi(q as i32 - 1);
    let m = q * q;
    let mut rewards = vec![vec![0.0; m]; 2 * q - 1];
    for row in 0..q {
        for col in 0..q {
            let v = column_rewards[col] as f64 * scale;
            rewards[row][row * q + col] = v;
            if col + 1 < q {
                rewards[q + col][row * q + col] = v;
            }
        }
    }
    let mut perturbation = vec![0.0; 2 * q - 1];
    for c in 0..q - 1 {
        perturbation[q + c] = (c + 1) as f64 * GRID_PERTURBATION;
    }
    Ok(GreedyGridInstance {
        q,
        column_rewards,
        scale,
        instance: NetworkInstance::new(rewards, q as u64)?,
        perturbation,
        scenarios: Some(one_hot_set(m)?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyGap {
    pub greedy_value: f64,
    pub optimal_value: f64,
    pub ratio: f64,
    /// Optimum of the sample-average LP over fractional placements.
    pub lp_value: f64,
    pub trace: GreedyTrace,
}

/// Greedy placement on the perturbed grid against one unit per row.
pub fn greedy_gap(q: usize) -> Result<GreedyGap> {
    let grid = build_greedy_grid(q)?;
    let set = grid.scenarios.as_ref().expect("built with scenarios");
    let trace = greedy_place(&grid.instance, set, q as u64, Some(&grid.perturbation));
    let mut rows = vec![1.0; q];
    rows.extend(std::iter::repeat_n(0.0, q - 1));
    let optimal_value = OffEvaluator::new(&grid.instance).expected(&rows, set);
    let lp_value = saa_placement(&grid.instance, set, q as u64)?.value;
    Ok(GreedyGap {
        greedy_value: trace.value,
        optimal_value,
        ratio: trace.value / optimal_value,
        lp_value,
        trace,
    })
}
