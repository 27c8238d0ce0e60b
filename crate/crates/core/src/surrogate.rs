//! The hindsight-optimal fulfillment LP `OFF(x, D)`, its sample average over
//! scenarios, and the placement LPs built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, solve_transportation, LpProblem, Relation};
use crate::model::{DemandScenario, FractionalPlacement, NetworkInstance, StarShape};

/// Largest scenario count assembled into one placement LP.
pub const MAX_SAA_SCENARIOS: usize = 200;

const TIE_PENALTY: f64 = 1e-9;
const FACE_SLACK: f64 = 1e-9;
const DUAL_TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffResult {
    pub value: f64,
    /// `flow[i][j]` units of type `j` served from DC `i`.
    pub flow: Vec<Vec<f64>>,
    /// Multipliers of the inventory constraints, one per DC.
    pub duals: Vec<f64>,
}

/// Hindsight-optimal fulfillment value of inventory `x` against demand `d`.
///
/// # Panics
/// If `x` or `d` do not match the instance dimensions.
pub fn off_value(inst: &NetworkInstance, x: &[f64], d: &DemandScenario) -> OffResult {
    off_value_real(inst, x, &d.as_reals())
}

/// [`off_value`] with real-valued demand.
pub fn off_value_real(inst: &NetworkInstance, x: &[f64], d: &[f64]) -> OffResult {
    assert_eq!(x.len(), inst.n(), "placement length");
    assert_eq!(d.len(), inst.m(), "demand length");
    let t = solve_transportation(&inst.reward_matrix(), x, d);
    OffResult { value: t.value, flow: t.flow, duals: t.supply_duals }
}

/// Closed-form `OFF` on a star: FDCs serve their own district, the RDC serves
/// district 0 first and spills its remainder to unmet FDC demand.
pub fn star_off_value(shape: &StarShape, x: &[f64], d: &[f64]) -> f64 {
    let local0 = x[0].min(d[0]);
    let mut local = 0.0;
    let mut unmet = 0.0;
    for i in 1..=shape.n_fdc {
        let served = x[i].min(d[i]);
        local += served;
        unmet += d[i] - served;
    }
    let spill = (x[0] - local0).min(unmet).max(0.0);
    shape.rdc_local * local0 + local + shape.spill * spill
}

/// Evaluates `OFF(x, D)` values, using the star closed form when it applies.
#[derive(Clone, Debug)]
pub struct OffEvaluator<'a> {
    inst: &'a NetworkInstance,
    star: Option<StarShape>,
    rewards: Vec<Vec<f64>>,
}

impl<'a> OffEvaluator<'a> {
    pub fn new(inst: &'a NetworkInstance) -> Self {
        OffEvaluator { inst, star: inst.star_shape(), rewards: inst.reward_matrix() }
    }

    /// Forces the generic transportation solver.
    pub fn generic(inst: &'a NetworkInstance) -> Self {
        OffEvaluator { inst, star: None, rewards: inst.reward_matrix() }
    }

    pub fn instance(&self) -> &NetworkInstance {
        self.inst
    }

    pub fn value(&self, x: &[f64], d: &DemandScenario) -> f64 {
        self.value_real(x, &d.as_reals())
    }

    pub fn value_real(&self, x: &[f64], d: &[f64]) -> f64 {
        match &self.star {
            Some(shape) => star_off_value(shape, x, d),
            None => solve_transportation(&self.rewards, x, d).value,
        }
    }

    /// Sample average over the scenarios of `set`.
    pub fn expected(&self, x: &[f64], set: &ScenarioSet) -> f64 {
        let values: Vec<f64> = set.scenarios().par_iter().map(|d| self.value(x, d)).collect();
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// `(1/K) sum_k OFF(x, D^k)`.
pub fn off_expected(inst: &NetworkInstance, x: &[f64], set: &ScenarioSet) -> f64 {
    OffEvaluator::new(inst).expected(x, set)
}

/// Preference used to break ties among optimal placements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// DC 0 first, then by index.
    #[default]
    Rdc,
    /// DCs `1..n` by index, DC 0 last.
    Fdc,
    /// No secondary objective.
    None,
}

impl TieBreak {
    fn penalty(self, i: usize, n: usize) -> f64 {
        let rank = match self {
            TieBreak::None => return 0.0,
            TieBreak::Rdc => i,
            TieBreak::Fdc => {
                if i == 0 {
                    n - 1
                } else {
                    i - 1
                }
            }
        };
        TIE_PENALTY * rank as f64 / (n.max(2) - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaaSolution {
    pub x_hat: FractionalPlacement,
    /// Sample-average hindsight value at `x_hat`.
    pub value: f64,
    /// `flows[k][i][j]`.
    pub flows: Vec<Vec<Vec<f64>>>,
    /// `duals[k][i]`: multiplier of scenario `k`'s inventory row for DC `i` in
    /// the `1/K`-weighted program.
    pub duals: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaaOptions {
    pub tie_break: TieBreak,
    pub max_scenarios: usize,
}

impl Default for SaaOptions {
    fn default() -> Self {
        SaaOptions { tie_break: TieBreak::Rdc, max_scenarios: MAX_SAA_SCENARIOS }
    }
}

/// Joint LP over the placement and one flow per scenario.
pub fn saa_placement(inst: &NetworkInstance, set: &ScenarioSet, q: u64) -> Result<SaaSolution> {
    saa_placement_with(inst, set, q, &SaaOptions::default())
}

pub fn saa_placement_with(
    inst: &NetworkInstance,
    set: &ScenarioSet,
    q: u64,
    opts: &SaaOptions,
) -> Result<SaaSolution> {
    if set.m() != inst.m() {
        return Err(Error::DimensionMismatch(format!("scenarios have {} types, instance {}", set.m(), inst.m())));
    }
    let set = set.subsample(opts.max_scenarios);
    let demands: Vec<Vec<f64>> = set.scenarios().iter().map(DemandScenario::as_reals).collect();
    let sol = placement_lp(inst, &demands, q, opts.tie_break)?;
    let k = demands.len() as f64;
    Ok(SaaSolution {
        x_hat: sol.x,
        value: sol.value,
        flows: sol.flows,
        duals: sol.duals.into_iter().map(|row| row.into_iter().map(|v| v / k).collect()).collect(),
    })
}

/// Placement LP against the mean demand vector.
pub fn fluid_placement_lp(
    inst: &NetworkInstance,
    mean_demand: &[f64],
    q: u64,
    tie_break: TieBreak,
) -> Result<(FractionalPlacement, f64)> {
    if mean_demand.len() != inst.m() {
        return Err(Error::DimensionMismatch("mean demand length".into()));
    }
    if mean_demand.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("mean demand must be non-negative".into()));
    }
    let sol = placement_lp(inst, &[mean_demand.to_vec()], q, tie_break)?;
    Ok((sol.x, sol.value))
}

struct PlacementLp {
    x: FractionalPlacement,
    value: f64,
    flows: Vec<Vec<Vec<f64>>>,
    /// Unweighted per-scenario inventory duals.
    duals: Vec<Vec<f64>>,
}

/// `max sum_k sum_ij r_ij y^k_ij - penalties(x)` with `sum x = Q`,
/// `sum_j y^k_ij <= x_i` and `sum_i y^k_ij <= D^k_j`. Edges with zero reward
/// or zero demand are omitted.
fn placement_lp(inst: &NetworkInstance, demands: &[Vec<f64>], q: u64, tie: TieBreak) -> Result<PlacementLp> {
    let n = inst.n();
    let m = inst.m();
    let mut p = LpProblem::new(n);
    for i in 0..n {
        p.set_objective(i, -tie.penalty(i, n));
    }
    p.add_constraint((0..n).map(|i| (i, 1.0)).collect(), Relation::Eq, q as f64);

    let mut edges: Vec<Vec<(usize, usize, usize)>> = Vec::with_capacity(demands.len());
    let mut supply_rows: Vec<Vec<Option<usize>>> = Vec::with_capacity(demands.len());
    for d in demands {
        let mut vars = Vec::new();
        for i in 0..n {
            for j in 0..m {
                let r = inst.reward(i, j);
                if r > 0.0 && d[j] > 0.0 {
                    vars.push((i, j, p.add_var(r)));
                }
            }
        }
        let mut rows = vec![None; n];
        for (i, row) in rows.iter_mut().enumerate() {
            let mut coeffs: Vec<(usize, f64)> =
                vars.iter().filter(|e| e.0 == i).map(|e| (e.2, 1.0)).collect();
            if !coeffs.is_empty() {
                coeffs.push((i, -1.0));
                *row = Some(p.add_constraint(coeffs, Relation::Le, 0.0));
            }
        }
        for (j, &dj) in d.iter().enumerate() {
            let coeffs: Vec<(usize, f64)> = vars.iter().filter(|e| e.1 == j).map(|e| (e.2, 1.0)).collect();
            if !coeffs.is_empty() {
                p.add_constraint(coeffs, Relation::Le, dj);
            }
        }
        edges.push(vars);
        supply_rows.push(rows);
    }

    let sol = solve_lp(&p);
    if !sol.is_optimal() {
        return Err(Error::InvalidInstance(format!("placement LP ended {:?}", sol.status)));
    }
    let x = tidy_placement(&sol.primal[..n], q)?;
    let k = demands.len() as f64;
    let mut total = 0.0;
    let mut flows = Vec::with_capacity(demands.len());
    for vars in &edges {
        let mut flow = vec![vec![0.0; m]; n];
        for &(i, j, v) in vars {
            flow[i][j] = sol.primal[v];
            total += inst.reward(i, j) * sol.primal[v];
        }
        flows.push(flow);
    }
    let duals = supply_rows
        .iter()
        .map(|rows| rows.iter().map(|r| r.map_or(0.0, |c| sol.duals[c])).collect())
        .collect();
    Ok(PlacementLp { x, value: total / k, flows, duals })
}

/// Clamps solver noise and restores the exact total before validation.
fn tidy_placement(raw: &[f64], q: u64) -> Result<FractionalPlacement> {
    let mut x: Vec<f64> = raw
        .iter()
        .map(|&v| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r.max(0.0)
            } else {
                v.max(0.0)
            }
        })
        .collect();
    let drift = q as f64 - x.iter().sum::<f64>();
    if drift.abs() > 0.0 && drift.abs() < 1e-6 {
        if let Some(big) = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a))) {
            x[big] = (x[big] + drift).max(0.0);
        }
    }
    FractionalPlacement::new(x, q)
}

/// Whether `|OFF(x,D) - OFF(x',D)| <= ||x - x'||_1 + 1e-9`.
pub fn lipschitz_check(inst: &NetworkInstance, d: &DemandScenario, x: &[f64], x_prime: &[f64]) -> bool {
    let a = off_value(inst, x, d).value;
    let b = off_value(inst, x_prime, d).value;
    let l1: f64 = x.iter().zip(x_prime).map(|(u, v)| (u - v).abs()).sum();
    (a - b).abs() <= l1 + 1e-9
}

/// Smallest optimal multiplier of the RDC inventory row on a star with the
/// placement fixed.
pub fn star_rdc_dual(shape: &StarShape, x: &[f64], d: &[f64]) -> f64 {
    let unmet: f64 = (1..=shape.n_fdc).map(|i| (d[i] - x[i]).max(0.0)).sum();
    let x0 = x[0];
    let d0 = d[0];
    if x0 < d0 - DUAL_TIE_TOL {
        shape.rdc_local
    } else if unmet > DUAL_TIE_TOL && x0 < d0 + unmet - DUAL_TIE_TOL {
        shape.spill
    } else {
        0.0
    }
}

/// Inventory multipliers of `OFF(x, d)` chosen on the optimal dual face to
/// minimize `sum_i weights_i * v_i`.
pub fn canonical_supply_duals(inst: &NetworkInstance, x: &[f64], d: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = inst.n();
    let m = inst.m();
    let opt = solve_transportation(&inst.reward_matrix(), x, d).value;
    // Variables: v_0..v_n, then u_0..u_m.
    let mut p = LpProblem::new(n + m);
    for (i, &w) in weights.iter().enumerate() {
        p.set_objective(i, -w);
    }
    for i in 0..n {
        for j in 0..m {
            let r = inst.reward(i, j);
            if r > 0.0 {
                p.add_constraint(vec![(i, 1.0), (n + j, 1.0)], Relation::Ge, r);
            }
        }
    }
    let mut face: Vec<(usize, f64)> = x.iter().enumerate().map(|(i, &v)| (i, v)).collect();
    face.extend(d.iter().enumerate().map(|(j, &v)| (n + j, v)));
    p.add_constraint(face, Relation::Le, opt + FACE_SLACK);
    let sol = solve_lp(&p);
    debug_assert!(sol.is_optimal());
    sol.primal[..n].iter().map(|&v| if v.abs() < 1e-12 { 0.0 } else { v }).collect()
}
