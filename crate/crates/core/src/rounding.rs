//! Dependent randomized rounding on a star, the high/low probability split of
//! a DC's fractional assignment row, the two-stage rounded assignment and a
//! Monte Carlo certificate for the `1 - (1 - 1/d)^d` guarantee.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::model::{DemandScenario, FractionalPlacement, NetworkInstance, Placement};
use crate::rng::stream;
use crate::surrogate::{off_value, OffEvaluator, OffResult};

/// Placement components this close to an integer are not randomized.
pub const SNAP_TOL: f64 = 1e-6;

const BIT_TOL: f64 = 1e-9;

/// Rounds each `w_i` in `[0, 1]` to a bit so that `P(W_i = 1) = w_i`, the bit
/// count is `floor` or `ceil` of `sum w`, and the bits are negatively
/// correlated.
pub fn dependent_round<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Vec<bool> {
    let mut v: Vec<f64> = w.iter().map(|&p| snap_bit(p.clamp(0.0, 1.0))).collect();
    let mut carrier: Option<usize> = None;
    for k in 0..v.len() {
        if is_bit(v[k]) {
            continue;
        }
        let Some(i) = carrier else {
            carrier = Some(k);
            continue;
        };
        let up = (1.0 - v[i]).min(v[k]);
        let down = v[i].min(1.0 - v[k]);
        if rng.gen::<f64>() * (up + down) < down {
            v[i] += up;
            v[k] -= up;
        } else {
            v[i] -= down;
            v[k] += down;
        }
        v[i] = snap_bit(v[i]);
        v[k] = snap_bit(v[k]);
        if is_bit(v[i]) {
            carrier = if is_bit(v[k]) { None } else { Some(k) };
        }
    }
    if let Some(i) = carrier {
        v[i] = if rng.gen::<f64>() < v[i] { 1.0 } else { 0.0 };
    }
    v.iter().map(|&b| b > 0.5).collect()
}

fn snap_bit(p: f64) -> f64 {
    if p < BIT_TOL {
        0.0
    } else if p > 1.0 - BIT_TOL {
        1.0
    } else {
        p
    }
}

fn is_bit(p: f64) -> bool {
    p == 0.0 || p == 1.0
}

/// Snaps near-integral components, then rounds the fractional parts jointly.
pub fn round_placement<R: Rng + ?Sized>(x: &FractionalPlacement, q: u64, rng: &mut R) -> Result<Placement> {
    let snapped: Vec<f64> = x
        .values()
        .iter()
        .map(|&v| if (v - v.round()).abs() <= SNAP_TOL { v.round() } else { v })
        .collect();
    let floors: Vec<u64> = snapped.iter().map(|v| v.floor() as u64).collect();
    let fracs: Vec<f64> = snapped.iter().map(|v| v - v.floor()).collect();
    let bits = dependent_round(&fracs, rng);
    let units: Vec<u64> = floors.iter().zip(&bits).map(|(&f, &b)| f + u64::from(b)).collect();
    Placement::new(units, q)
}

/// Low and high assignment probabilities for one DC row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YhlSplit {
    pub y_low: Vec<f64>,
    pub y_high: Vec<f64>,
}

/// Splits `y` (one DC's fractional assignment) into the probabilities used
/// when the DC is rounded down (`y_low`) or up (`y_high`), so that
/// `f y_high + (1-f) y_low = y`, `0 <= y_low <= y_high <= 1`,
/// `sum y_low <= floor(x)` and `sum y_high <= floor(x) + 1`, where `f` is the
/// fractional part of `x`.
///
/// `y_low` starts at `max(0, (y - f) / (1 - f))`, the smallest value keeping
/// `y_high <= 1`, and is moved toward `y` by a common fraction just far
/// enough for the `y_high` budget to hold.
pub fn split_yhl(y: &[f64], x: f64) -> Result<YhlSplit> {
    if y.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
        return Err(Error::InvalidArgument("assignment probabilities must lie in [0,1]".into()));
    }
    let total: f64 = y.iter().sum();
    if total > x + 1e-9 {
        return Err(Error::InvalidArgument(format!("row sum {total} exceeds inventory {x}")));
    }
    let floor = x.floor();
    let xf = x - floor;
    if total <= floor + 1e-12 || xf <= 0.0 {
        return Ok(YhlSplit { y_low: y.to_vec(), y_high: y.to_vec() });
    }
    let lo: Vec<f64> = y.iter().map(|&v| ((v - xf) / (1.0 - xf)).max(0.0)).collect();
    let lo_sum: f64 = lo.iter().sum();
    let needed = (total - xf * (floor + 1.0)) / (1.0 - xf);
    let slack = total - lo_sum;
    let theta = if needed > lo_sum && slack > 0.0 { ((needed - lo_sum) / slack).min(1.0) } else { 0.0 };
    let y_low: Vec<f64> = y.iter().zip(&lo).map(|(&v, &l)| l + theta * (v - l)).collect();
    let y_high = y
        .iter()
        .zip(&y_low)
        .map(|(&v, &l)| ((v - (1.0 - xf) * l) / xf).clamp(0.0, 1.0))
        .collect();
    Ok(YhlSplit { y_low, y_high })
}

/// Outcome of one two-stage rounded assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub placement: Placement,
    /// Serving DC for each unit request, grouped by type in index order.
    pub served_by: Vec<Option<usize>>,
    /// Demand type of each unit request.
    pub unit_types: Vec<usize>,
    pub reward: f64,
}

/// Rounds `x` and converts the fractional optimal flow into an integral
/// assignment feasible for the rounded placement.
pub fn two_stage_assign<R: Rng + ?Sized>(
    inst: &NetworkInstance,
    x: &FractionalPlacement,
    d: &DemandScenario,
    off: &OffResult,
    rng: &mut R,
) -> Result<Assignment> {
    let placement = round_placement(x, inst.q(), rng)?;
    let units = UnitFlow::new(d, &off.flow);
    assign_with_placement(inst, x, &units, placement, rng)
}

/// Per-unit split of an optimal flow: each type `j` becomes `D_j` unit types
/// filled in DC order so integral flows stay integral.
#[derive(Clone, Debug)]
pub struct UnitFlow {
    unit_types: Vec<usize>,
    /// `rows[i][u]`: fraction of unit `u` served by DC `i`.
    rows: Vec<Vec<f64>>,
}

impl UnitFlow {
    pub fn new(d: &DemandScenario, flow: &[Vec<f64>]) -> Self {
        let n = flow.len();
        let unit_types: Vec<usize> = d
            .counts()
            .iter()
            .enumerate()
            .flat_map(|(j, &c)| std::iter::repeat_n(j, c as usize))
            .collect();
        let mut rows = vec![vec![0.0; unit_types.len()]; n];
        let mut start = 0;
        for (j, &c) in d.counts().iter().enumerate() {
            let c = c as usize;
            let mut unit = 0;
            let mut room = 1.0;
            for (i, row) in rows.iter_mut().enumerate() {
                let mut left = flow[i][j];
                while left > 1e-12 && unit < c {
                    let take = left.min(room);
                    row[start + unit] += take;
                    left -= take;
                    room -= take;
                    if room <= 1e-12 {
                        unit += 1;
                        room = 1.0;
                    }
                }
            }
            start += c;
        }
        UnitFlow { unit_types, rows }
    }
}

fn assign_with_placement<R: Rng + ?Sized>(
    inst: &NetworkInstance,
    x: &FractionalPlacement,
    units: &UnitFlow,
    placement: Placement,
    rng: &mut R,
) -> Result<Assignment> {
    let t = units.unit_types.len();
    let mut best: Vec<Option<usize>> = vec![None; t];
    for i in 0..inst.n() {
        let xi = x.values()[i];
        let row_sum: f64 = units.rows[i].iter().sum();
        let split = split_yhl(&units.rows[i], xi.max(row_sum))?;
        let rounded_up = placement.units()[i] as f64 > xi.floor();
        let probs = if rounded_up { &split.y_high } else { &split.y_low };
        let bits = dependent_round(probs, rng);
        for (u, &b) in bits.iter().enumerate() {
            if b {
                let j = units.unit_types[u];
                let r = inst.reward(i, j);
                let better = match best[u] {
                    None => true,
                    Some(k) => r > inst.reward(k, j),
                };
                if better {
                    best[u] = Some(i);
                }
            }
        }
    }
    let reward = best
        .iter()
        .zip(&units.unit_types)
        .map(|(b, &j)| b.map_or(0.0, |i| inst.reward(i, j)))
        .sum();
    Ok(Assignment { placement, served_by: best, unit_types: units.unit_types.clone(), reward })
}

/// `1 - (1 - 1/d)^d`, with `d = 0` mapped to 1.
pub fn rounding_bound(d: usize) -> f64 {
    if d == 0 {
        return 1.0;
    }
    let d = d as f64;
    1.0 - (1.0 - 1.0 / d).powf(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Mean re-solved `OFF(R(x))` over `OFF(x)`.
    pub ratio_hat: f64,
    pub stderr: f64,
    /// Same ratio using the two-stage assignment reward instead of re-solving.
    pub witness_ratio: f64,
    pub witness_stderr: f64,
    pub bound: f64,
    pub fractional_value: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Certificate {
    /// `ratio_hat >= bound - 3 stderr`.
    pub fn holds(&self) -> bool {
        self.ratio_hat >= self.bound - 3.0 * self.stderr
    }
}

/// Monte Carlo estimate of `E[OFF(R(x))] / OFF(x)` over `trials` independent
/// roundings. Trial `t` draws from stream `t` of `seed`.
pub fn certify_theorem1(
    inst: &NetworkInstance,
    x: &FractionalPlacement,
    set: &ScenarioSet,
    trials: usize,
    seed: u64,
) -> Result<Certificate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("certification needs at least one trial".into()));
    }
    let bound = rounding_bound(inst.degree_profile().max);
    let offs: Vec<OffResult> = set.scenarios().par_iter().map(|d| off_value(inst, x.values(), d)).collect();
    let fractional = offs.iter().map(|o| o.value).sum::<f64>() / offs.len() as f64;
    if fractional <= 0.0 {
        return Ok(Certificate {
            ratio_hat: 1.0,
            stderr: 0.0,
            witness_ratio: 1.0,
            witness_stderr: 0.0,
            bound,
            fractional_value: 0.0,
            trials,
            seed,
        });
    }
    let unit_flows: Vec<UnitFlow> = set.scenarios().iter().zip(&offs).map(|(d, o)| UnitFlow::new(d, &o.flow)).collect();

    // One rounding plus a witness assignment per scenario for every trial.
    let draws: Vec<(Placement, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(Placement, f64)> {
            let mut rng = stream(seed, t as u64);
            let placement = round_placement(x, inst.q(), &mut rng)?;
            let mut witness = 0.0;
            for units in &unit_flows {
                witness += assign_with_placement(inst, x, units, placement.clone(), &mut rng)?.reward;
            }
            Ok((placement, witness / unit_flows.len() as f64))
        })
        .collect::<Result<_>>()?;

    let mut distinct: Vec<Placement> = draws.iter().map(|(p, _)| p.clone()).collect();
    distinct.sort_by(|a, b| a.units().cmp(b.units()));
    distinct.dedup();
    let eval = OffEvaluator::new(inst);
    let values: HashMap<Placement, f64> = distinct
        .into_par_iter()
        .map(|p| {
            let v = eval.expected(&p.as_reals(), set);
            (p, v)
        })
        .collect();

    let resolved: Vec<f64> = draws.iter().map(|(p, _)| values[p]).collect();
    let witness: Vec<f64> = draws.iter().map(|(_, w)| *w).collect();
    let (m1, s1) = mean_stderr(&resolved);
    let (m2, s2) = mean_stderr(&witness);
    Ok(Certificate {
        ratio_hat: m1 / fractional,
        stderr: s1 / fractional,
        witness_ratio: m2 / fractional,
        witness_stderr: s2 / fractional,
        bound,
        fractional_value: fractional,
        trials,
        seed,
    })
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&v| v == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical law of [`dependent_round`] on one weight vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundingStats {
    pub weights: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Empirical `P(W_i = 1)`.
    pub marginals: Vec<f64>,
    /// Empirical `P(W_i = 1, W_k = 1)`, row-major `n x n`.
    pub both_one: Vec<f64>,
    /// Empirical `P(W_i = 0, W_k = 0)`, row-major `n x n`.
    pub both_zero: Vec<f64>,
    /// Trials whose bit count left `{floor(sum w), ceil(sum w)}`.
    pub sum_violations: usize,
}

pub fn rounding_stats(w: &[f64], trials: usize, seed: u64) -> RoundingStats {
    let n = w.len();
    let total: f64 = w.iter().sum();
    let (lo, hi) = ((total - 1e-9).floor().max(0.0) as usize, (total + 1e-9).ceil() as usize);
    let mut ones = vec![0usize; n];
    let mut both_one = vec![0usize; n * n];
    let mut both_zero = vec![0usize; n * n];
    let mut violations = 0;
    let mut rng = stream(seed, 0);
    for _ in 0..trials {
        let bits = dependent_round(w, &mut rng);
        let count = bits.iter().filter(|&&b| b).count();
        if count < lo || count > hi {
            violations += 1;
        }
        for i in 0..n {
            ones[i] += usize::from(bits[i]);
            for k in (i + 1)..n {
                if bits[i] && bits[k] {
                    both_one[i * n + k] += 1;
                }
                if !bits[i] && !bits[k] {
                    both_zero[i * n + k] += 1;
                }
            }
        }
    }
    let f = |c: usize| c as f64 / trials as f64;
    RoundingStats {
        weights: w.to_vec(),
        trials,
        seed,
        marginals: ones.into_iter().map(f).collect(),
        both_one: both_one.into_iter().map(f).collect(),
        both_zero: both_zero.into_iter().map(f).collect(),
        sum_violations: violations,
    }
}

impl RoundingStats {
    /// Coordinates whose empirical marginal lies within three binomial sigmas.
    pub fn marginals_within_3sigma(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.marginals)
            .filter(|(&w, &m)| (m - w).abs() <= 3.0 * (w * (1.0 - w) / self.trials as f64).sqrt() + 1e-12)
            .count()
    }

    /// Pairs violating `P(both b) <= P(W_i=b) P(W_k=b) + 3 sigma` for some `b`.
    pub fn correlation_violations(&self) -> Vec<(usize, usize)> {
        let n = self.weights.len();
        let t = self.trials as f64;
        let mut bad = Vec::new();
        for i in 0..n {
            for k in (i + 1)..n {
                let (pi, pk) = (self.marginals[i], self.marginals[k]);
                let checks = [(self.both_one[i * n + k], pi * pk), (self.both_zero[i * n + k], (1.0 - pi) * (1.0 - pk))];
                for (joint, product) in checks {
                    let sigma = (product * (1.0 - product) / t).sqrt();
                    if joint > product + 3.0 * sigma + 1e-12 {
                        bad.push((i, k));
                        break;
                    }
                }
            }
        }
        bad
    }
}
