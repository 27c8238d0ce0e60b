//! Placement procedures mapping training demand to an integer placement.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::fulfillment::myopic_decide;
use crate::model::{ArrivalSequence, NetworkInstance, Placement};
use crate::rng::stream;
use crate::rounding::round_placement;
use crate::surrogate::{fluid_placement_lp, saa_placement_with, OffEvaluator, SaaOptions, TieBreak};

const IMPROVE_TOL: f64 = 1e-9;
const GREEDY_TIE_TOL: f64 = 1e-12;

/// Integer vector summing to `q` closest to `q * w / sum(w)`: floors first,
/// then leftover units to the largest remainders, lower index on ties.
pub fn largest_remainder(weights: &[f64], q: u64) -> Placement {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Placement::concentrated(0, 0, 0);
    }
    if !(total > 0.0) {
        return Placement::concentrated(weights.len(), 0, q);
    }
    let shares: Vec<f64> = weights.iter().map(|&w| q as f64 * w.max(0.0) / total).collect();
    let mut units: Vec<u64> = shares.iter().map(|s| (s + 1e-9).floor() as u64).collect();
    let mut left = q.saturating_sub(units.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - units[a] as f64;
        let rb = shares[b] - units[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        units[i] += 1;
        left -= 1;
    }
    Placement::new(units, q).expect("largest remainder preserves the total")
}

/// Inventory proportional to mean demand, district by district.
pub fn proportional_place(mean_demand: &[f64], q: u64) -> Placement {
    largest_remainder(mean_demand, q)
}

/// Sample-average placement LP followed by dependent rounding.
pub fn offline_place(inst: &NetworkInstance, train: &ScenarioSet, q: u64, seed: u64) -> Result<Placement> {
    offline_place_with(inst, train, q, seed, &SaaOptions::default())
}

pub fn offline_place_with(
    inst: &NetworkInstance,
    train: &ScenarioSet,
    q: u64,
    seed: u64,
    opts: &SaaOptions,
) -> Result<Placement> {
    let sol = saa_placement_with(&inst.with_q(q), train, q, opts)?;
    round_placement(&sol.x_hat, q, &mut stream(seed, 0))
}

/// Fluid placement LP with largest-remainder integerization.
pub fn fluid_place(inst: &NetworkInstance, mean_demand: &[f64], q: u64, tie: TieBreak) -> Result<Placement> {
    let (x, _) = fluid_placement_lp(&inst.with_q(q), mean_demand, q, tie)?;
    Ok(largest_remainder(x.values(), q))
}

/// Reward of the myopic policy on one sequence, without tracing.
pub fn myopic_reward(inst: &NetworkInstance, x: &Placement, seq: &ArrivalSequence) -> f64 {
    let mut inv = x.units().to_vec();
    let mut reward = 0.0;
    for j in seq.types() {
        if let Some(i) = myopic_decide(inst, &inv, j) {
            inv[i] -= 1;
            reward += inst.reward(i, j);
        }
    }
    reward
}

/// Mean myopic reward over the training sequences.
pub fn myopic_value(inst: &NetworkInstance, x: &Placement, seqs: &[ArrivalSequence]) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    seqs.iter().map(|s| myopic_reward(inst, x, s)).sum::<f64>() / seqs.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Take the single-unit move with the largest gain.
    #[default]
    BestImprovement,
    /// Take the first improving move in `(from, to)` order.
    FirstImprovement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MyopicSearch {
    pub placement: Placement,
    pub value: f64,
    /// Training value after each accepted move, starting with the initial one.
    pub path: Vec<f64>,
}

/// Local search over single-unit moves against the myopic policy's mean
/// training reward.
pub fn myopic_place(
    inst: &NetworkInstance,
    seqs: &[ArrivalSequence],
    init: Placement,
    mode: SearchMode,
) -> MyopicSearch {
    let mut x = init;
    let mut value = myopic_value(inst, &x, seqs);
    let mut path = vec![value];
    if seqs.iter().all(ArrivalSequence::is_empty) {
        return MyopicSearch { placement: x, value, path };
    }
    let n = x.len();
    loop {
        let moves: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && x.units()[a] > 0)
            .collect();
        let next = match mode {
            SearchMode::BestImprovement => {
                let scored: Vec<(f64, Placement)> = moves
                    .par_iter()
                    .map(|&(a, b)| {
                        let y = x.moved(a, b).expect("source holds a unit");
                        (myopic_value(inst, &y, seqs), y)
                    })
                    .collect();
                let mut best: Option<(f64, Placement)> = None;
                for (v, y) in scored {
                    if v > value + IMPROVE_TOL && best.as_ref().is_none_or(|b| v > b.0) {
                        best = Some((v, y));
                    }
                }
                best
            }
            SearchMode::FirstImprovement => moves.iter().find_map(|&(a, b)| {
                let y = x.moved(a, b).expect("source holds a unit");
                let v = myopic_value(inst, &y, seqs);
                (v > value + IMPROVE_TOL).then_some((v, y))
            }),
        };
        match next {
            Some((v, y)) => {
                x = y;
                value = v;
                path.push(v);
            }
            None => return MyopicSearch { placement: x, value, path },
        }
    }
}

/// True when no single-unit move improves the myopic training value.
pub fn is_myopic_local_optimum(inst: &NetworkInstance, seqs: &[ArrivalSequence], x: &Placement) -> bool {
    let base = myopic_value(inst, x, seqs);
    let n = x.len();
    (0..n).all(|a| {
        (0..n).all(|b| match x.moved(a, b) {
            Some(y) if a != b => myopic_value(inst, &y, seqs) <= base + IMPROVE_TOL,
            _ => true,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub placement: Placement,
    /// DC receiving each successive unit.
    pub order: Vec<usize>,
    pub value: f64,
}

/// Adds one unit at a time to the DC with the largest gain in sample-average
/// hindsight value. `bonus[i]` is added to DC `i`'s gain when comparing;
/// remaining ties go to the lowest index.
pub fn greedy_place(inst: &NetworkInstance, train: &ScenarioSet, q: u64, bonus: Option<&[f64]>) -> GreedyTrace {
    let n = inst.n();
    let eval = OffEvaluator::new(inst);
    let mut units = vec![0u64; n];
    let mut order = Vec::with_capacity(q as usize);
    let mut current = 0.0;
    for _ in 0..q {
        let gains: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut x: Vec<f64> = units.iter().map(|&u| u as f64).collect();
                x[i] += 1.0;
                eval.expected(&x, train)
            })
            .collect();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, &v) in gains.iter().enumerate() {
            let score = v - current + bonus.map_or(0.0, |b| b[i]);
            if score > best_score + GREEDY_TIE_TOL {
                best = i;
                best_score = score;
            }
        }
        units[best] += 1;
        current = gains[best];
        order.push(best);
    }
    GreedyTrace { placement: Placement::new(units, q).expect("q units placed"), order, value: current }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    Proportional,
    Fluid,
    Offline,
    Myopic,
    Greedy,
}

impl Procedure {
    pub fn label(self) -> &'static str {
        match self {
            Procedure::Proportional => "Proportional",
            Procedure::Fluid => "Fluid",
            Procedure::Offline => "Offline",
            Procedure::Myopic => "Myopic",
            Procedure::Greedy => "Greedy",
        }
    }
}

impl std::str::FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proportional" => Ok(Procedure::Proportional),
            "fluid" => Ok(Procedure::Fluid),
            "offline" => Ok(Procedure::Offline),
            "myopic" => Ok(Procedure::Myopic),
            "greedy" => Ok(Procedure::Greedy),
            other => Err(Error::InvalidArgument(format!("unknown procedure {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub procedure: Procedure,
    pub x: Placement,
    /// Sample-average hindsight value of `x` on the training scenarios.
    pub training_value: f64,
    pub wall_clock_ms: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceOptions {
    pub tie_break: TieBreak,
    pub search: SearchMode,
}

/// Runs one procedure on the training set. Proportional and myopic placement
/// map demand type `i` to DC `i` and need `n == m`.
pub fn place(
    procedure: Procedure,
    inst: &NetworkInstance,
    train: &ScenarioSet,
    q: u64,
    seed: u64,
    opts: &PlaceOptions,
) -> Result<PlacementReport> {
    let started = Instant::now();
    let mean = train.mean_demand();
    let needs_square = matches!(procedure, Procedure::Proportional | Procedure::Myopic);
    if needs_square && inst.n() != inst.m() {
        return Err(Error::InvalidInstance(format!("{} placement needs one DC per demand type", procedure.label())));
    }
    let x = match procedure {
        Procedure::Proportional => proportional_place(&mean, q),
        Procedure::Fluid => fluid_place(inst, &mean, q, opts.tie_break)?,
        Procedure::Offline => {
            let saa = SaaOptions { tie_break: opts.tie_break, ..SaaOptions::default() };
            offline_place_with(inst, train, q, seed, &saa)?
        }
        Procedure::Myopic => {
            let seqs: Vec<ArrivalSequence> = match train.sequences() {
                Some(s) => s.to_vec(),
                None => train.scenarios().iter().map(ArrivalSequence::from_scenario).collect(),
            };
            myopic_place(inst, &seqs, proportional_place(&mean, q), opts.search).placement
        }
        Procedure::Greedy => greedy_place(&inst.with_q(q), train, q, None).placement,
    };
    let training_value = OffEvaluator::new(inst).expected(&x.as_reals(), train);
    Ok(PlacementReport {
        procedure,
        x,
        training_value,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemandScenario, StarNetwork};

    #[test]
    fn proportional_examples() {
        assert_eq!(proportional_place(&[2.0, 3.0, 1.0], 6).units(), &[2, 3, 1]);
        assert_eq!(proportional_place(&[1.0, 1.0], 3).units(), &[2, 1]);
        assert_eq!(proportional_place(&[1.0, 4.0], 0).units(), &[0, 0]);
        assert_eq!(proportional_place(&[0.0, 0.0, 0.0], 4).units(), &[4, 0, 0]);
    }

    #[test]
    fn offline_examples() {
        let inst = NetworkInstance::new(vec![vec![1.0, 0.4], vec![0.0, 0.7]], 2).unwrap();
        let set = ScenarioSet::new(vec![DemandScenario::new(vec![1, 1])]).unwrap();
        assert_eq!(offline_place(&inst, &set, 2, 1).unwrap().units(), &[1, 1]);
        assert_eq!(offline_place(&inst, &set, 0, 1).unwrap().units(), &[0, 0]);

        let star = StarNetwork::new(1, 0.5).expand(1).unwrap();
        let set = ScenarioSet::new(vec![DemandScenario::new(vec![1, 0]), DemandScenario::new(vec![0, 1])]).unwrap();
        assert_eq!(offline_place(&star, &set, 1, 1).unwrap().units(), &[1, 0]);
    }

    #[test]
    fn fluid_examples() {
        let inst = StarNetwork::new(2, 0.5).expand(6).unwrap();
        assert_eq!(fluid_place(&inst, &[2.0, 3.0, 1.0], 6, TieBreak::Rdc).unwrap().units(), &[2, 3, 1]);
        assert_eq!(fluid_place(&inst, &[0.0; 3], 3, TieBreak::Rdc).unwrap().units(), &[3, 0, 0]);
        assert_eq!(fluid_place(&inst, &[0.0; 3], 3, TieBreak::Fdc).unwrap().units(), &[0, 3, 0]);
    }

    #[test]
    fn myopic_search_from_proportional_start() {
        let inst = StarNetwork::new(1, 0.5).expand(2).unwrap();
        let seqs = vec![ArrivalSequence::from_types(&[1, 1, 0])];
        let init = proportional_place(&[1.0, 2.0], 2);
        assert_eq!(init.units(), &[1, 1]);
        // Exhaustive values: (2,0) -> 1.0, (1,1) -> 1.5, (0,2) -> 2.0.
        for (x, v) in [([2, 0], 1.0), ([1, 1], 1.5), ([0, 2], 2.0)] {
            let p = Placement::new(x.to_vec(), 2).unwrap();
            assert!((myopic_value(&inst, &p, &seqs) - v).abs() < 1e-12);
        }
        for mode in [SearchMode::BestImprovement, SearchMode::FirstImprovement] {
            let found = myopic_place(&inst, &seqs, init.clone(), mode);
            assert_eq!(found.placement.units(), &[0, 2]);
            assert!((found.value - 2.0).abs() < 1e-12);
            assert!(found.path.windows(2).all(|w| w[1] >= w[0]));
            assert!(is_myopic_local_optimum(&inst, &seqs, &found.placement));
        }
    }

    #[test]
    fn myopic_single_district() {
        let inst = StarNetwork::new(2, 0.5).expand(3).unwrap();
        let seqs = vec![ArrivalSequence::from_types(&[2, 2, 2, 2])];
        let found = myopic_place(&inst, &seqs, Placement::new(vec![1, 1, 1], 3).unwrap(), SearchMode::BestImprovement);
        assert_eq!(found.placement.units(), &[0, 0, 3]);
        let seqs = vec![ArrivalSequence::from_types(&[0, 0, 0])];
        let found = myopic_place(&inst, &seqs, Placement::new(vec![0, 2, 1], 3).unwrap(), SearchMode::BestImprovement);
        assert_eq!(found.placement.units(), &[3, 0, 0]);
    }

    #[test]
    fn myopic_without_demand_keeps_init() {
        let inst = StarNetwork::new(2, 0.5).expand(3).unwrap();
        let init = Placement::new(vec![0, 2, 1], 3).unwrap();
        let found = myopic_place(&inst, &[ArrivalSequence::default()], init.clone(), SearchMode::BestImprovement);
        assert_eq!(found.placement, init);
    }

    #[test]
    fn greedy_single_unit_is_exhaustive() {
        let inst = StarNetwork::new(2, 0.3).expand(1).unwrap();
        let set = ScenarioSet::new(vec![
            DemandScenario::new(vec![0, 2, 1]),
            DemandScenario::new(vec![1, 1, 0]),
            DemandScenario::new(vec![0, 3, 0]),
        ])
        .unwrap();
        let g = greedy_place(&inst, &set, 1, None);
        let eval = OffEvaluator::new(&inst);
        let best = (0..3)
            .max_by(|&a, &b| {
                let va = eval.expected(&Placement::concentrated(3, a, 1).as_reals(), &set);
                let vb = eval.expected(&Placement::concentrated(3, b, 1).as_reals(), &set);
                va.total_cmp(&vb).then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(g.order, vec![best]);
        assert_eq!(offline_place(&inst, &set, 1, 0).unwrap().units()[best], 1);
    }
}
