//! Online fulfillment policies: myopic, bid-price (shadow-price) policies
//! driven by fluid or sample-average duals, and the clairvoyant hindsight
//! follower used as an evaluation baseline.

use serde::{Deserialize, Serialize};

use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::model::{day_start, ArrivalSequence, NetworkInstance, Placement};
use crate::surrogate::{canonical_supply_duals, off_value, star_rdc_dual};

/// What a policy can observe when a request arrives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FulfillmentState {
    pub inventory: Vec<u64>,
    pub time: f64,
    pub day: u32,
    /// Requests served per type so far.
    pub served: Vec<u64>,
    /// Requests observed per type so far, including rejected ones.
    pub arrived: Vec<u64>,
}

impl FulfillmentState {
    pub fn new(x: &Placement, m: usize) -> Self {
        FulfillmentState {
            inventory: x.units().to_vec(),
            time: 0.0,
            day: 0,
            served: vec![0; m],
            arrived: vec![0; m],
        }
    }
}

/// An online fulfillment rule. One instance drives one simulation run.
pub trait Policy: Send {
    fn name(&self) -> String;

    /// Called once before the first request. Only non-admissible policies may
    /// look at `arrivals`.
    fn start(&mut self, inst: &NetworkInstance, x: &Placement, arrivals: &ArrivalSequence);

    /// Called when the clock enters a new day, before that day's first request.
    fn new_day(&mut self, _inst: &NetworkInstance, _state: &FulfillmentState) {}

    /// DC to serve a type-`j` request from, or `None` to reject.
    fn decide(&mut self, inst: &NetworkInstance, state: &FulfillmentState, j: usize) -> Option<usize>;

    /// False for policies that peek at future arrivals.
    fn admissible(&self) -> bool {
        true
    }

    /// Bid prices in force, per day, for policies that use them.
    fn price_history(&self) -> &[(u32, Vec<f64>)] {
        &[]
    }
}

/// Stocked DC with the largest positive reward for `j`, lowest index on ties.
pub fn myopic_decide(inst: &NetworkInstance, inventory: &[u64], j: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &stock) in inventory.iter().enumerate() {
        let r = inst.reward(i, j);
        if stock > 0 && r > 0.0 && best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// Serves locally whenever a top-reward DC for `j` is stocked; otherwise
/// accepts the stocked DC maximizing `r_ij - lambda_i` if that margin is
/// strictly positive.
pub fn sp_decide(inst: &NetworkInstance, inventory: &[u64], j: usize, lambda: &[f64]) -> Option<usize> {
    let top = inst.top_reward(j);
    if top <= 0.0 {
        return None;
    }
    let local = (0..inst.n()).find(|&i| inventory[i] > 0 && inst.reward(i, j) == top);
    if local.is_some() {
        return local;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &stock) in inventory.iter().enumerate() {
        let r = inst.reward(i, j);
        if stock > 0 && r > 0.0 && r > lambda[i] {
            let margin = r - lambda[i];
            if best.is_none_or(|(_, b)| margin > b) {
                best = Some((i, margin));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// How per-scenario duals of the sample-average program are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaAggregation {
    /// Sum of the duals of the `1/K`-weighted program.
    #[default]
    WeightedSum,
    /// Mean of the per-scenario duals of the unweighted programs.
    UnweightedMean,
}

/// Inventory shadow prices of the fluid program with the placement fixed.
pub fn fluid_prices(inst: &NetworkInstance, mean_demand: &[f64], x: &[f64]) -> Vec<f64> {
    scenario_prices(inst, mean_demand, x)
}

fn scenario_prices(inst: &NetworkInstance, d: &[f64], x: &[f64]) -> Vec<f64> {
    match inst.star_shape() {
        Some(shape) => {
            let mut prices = vec![0.0; inst.n()];
            prices[0] = star_rdc_dual(&shape, x, d);
            prices
        }
        None => canonical_supply_duals(inst, x, d, &vec![1.0; inst.n()]),
    }
}

/// Inventory shadow prices of the sample-average program with the placement
/// fixed. The program separates by scenario, so each scenario is priced on
/// its own.
pub fn stoch_prices(inst: &NetworkInstance, set: &ScenarioSet, x: &[f64], agg: LambdaAggregation) -> Vec<f64> {
    let k = set.len() as f64;
    let mut prices = vec![0.0; inst.n()];
    for d in set.scenarios() {
        let unweighted = scenario_prices(inst, &d.as_reals(), x);
        for (p, v) in prices.iter_mut().zip(unweighted) {
            match agg {
                LambdaAggregation::WeightedSum => *p += v / k,
                LambdaAggregation::UnweightedMean => *p += v,
            }
        }
    }
    if agg == LambdaAggregation::UnweightedMean {
        prices.iter_mut().for_each(|p| *p /= k);
    }
    prices
}

fn require_star(inst: &NetworkInstance) -> Result<()> {
    inst.star_shape()
        .map(|_| ())
        .ok_or_else(|| Error::InvalidInstance("single-threshold prices need a star network".into()))
}

/// RDC shadow price of the fluid program on a star.
pub fn compute_lambda_fluid(inst: &NetworkInstance, mean_demand: &[f64], x: &Placement) -> Result<f64> {
    require_star(inst)?;
    Ok(fluid_prices(inst, mean_demand, &x.as_reals())[0])
}

/// RDC shadow price of the sample-average program on a star.
pub fn compute_lambda_stoch(
    inst: &NetworkInstance,
    set: &ScenarioSet,
    x: &Placement,
    agg: LambdaAggregation,
) -> Result<f64> {
    require_star(inst)?;
    Ok(stoch_prices(inst, set, &x.as_reals(), agg)[0])
}

/// `OFF(x, aggregate(J))`.
pub fn oracle_reward(inst: &NetworkInstance, x: &Placement, seq: &ArrivalSequence) -> f64 {
    off_value(inst, &x.as_reals(), &seq.aggregate(inst.m())).value
}

pub struct Myopic;

impl Policy for Myopic {
    fn name(&self) -> String {
        "Myopic".into()
    }

    fn start(&mut self, _inst: &NetworkInstance, _x: &Placement, _arrivals: &ArrivalSequence) {}

    fn decide(&mut self, inst: &NetworkInstance, state: &FulfillmentState, j: usize) -> Option<usize> {
        myopic_decide(inst, &state.inventory, j)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolve {
    #[default]
    Static,
    Daily,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceSource {
    Fluid,
    Stoch,
}

/// Bid-price policy whose prices come from training scenarios.
pub struct ShadowPrice {
    source: PriceSource,
    resolve: Resolve,
    aggregation: LambdaAggregation,
    train: ScenarioSet,
    prices: Vec<f64>,
    history: Vec<(u32, Vec<f64>)>,
}

impl ShadowPrice {
    pub fn new(source: PriceSource, resolve: Resolve, aggregation: LambdaAggregation, train: ScenarioSet) -> Self {
        if resolve == Resolve::Daily && train.sequences().is_none() {
            log::warn!("daily re-solving without training sequences keeps the initial prices");
        }
        ShadowPrice { source, resolve, aggregation, train, prices: Vec::new(), history: Vec::new() }
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    fn solve(&self, inst: &NetworkInstance, x: &[f64], window: &ScenarioSet) -> Vec<f64> {
        match self.source {
            PriceSource::Fluid => fluid_prices(inst, &window.mean_demand(), x),
            PriceSource::Stoch => stoch_prices(inst, window, x, self.aggregation),
        }
    }
}

impl Policy for ShadowPrice {
    fn name(&self) -> String {
        let src = match self.source {
            PriceSource::Fluid => "F",
            PriceSource::Stoch => "S",
        };
        let res = match self.resolve {
            Resolve::Static => "s",
            Resolve::Daily => "r",
        };
        format!("{src}-SP-{res}")
    }

    fn start(&mut self, inst: &NetworkInstance, x: &Placement, _arrivals: &ArrivalSequence) {
        self.prices = self.solve(inst, &x.as_reals(), &self.train);
        self.history = vec![(0, self.prices.clone())];
    }

    fn new_day(&mut self, inst: &NetworkInstance, state: &FulfillmentState) {
        if self.resolve != Resolve::Daily {
            return;
        }
        let Some(window) = self.train.truncated_from(day_start(state.day)) else {
            return;
        };
        let x: Vec<f64> = state.inventory.iter().map(|&u| u as f64).collect();
        self.prices = self.solve(inst, &x, &window);
        self.history.push((state.day, self.prices.clone()));
    }

    fn decide(&mut self, inst: &NetworkInstance, state: &FulfillmentState, j: usize) -> Option<usize> {
        sp_decide(inst, &state.inventory, j, &self.prices)
    }

    fn price_history(&self) -> &[(u32, Vec<f64>)] {
        &self.history
    }
}

/// Follows the hindsight-optimal flow for the realized demand. Not admissible.
#[derive(Default)]
pub struct Oracle {
    plan: Vec<Vec<u64>>,
}

impl Policy for Oracle {
    fn name(&self) -> String {
        "Offline".into()
    }

    fn start(&mut self, inst: &NetworkInstance, x: &Placement, arrivals: &ArrivalSequence) {
        let res = off_value(inst, &x.as_reals(), &arrivals.aggregate(inst.m()));
        self.plan = res
            .flow
            .iter()
            .map(|row| row.iter().map(|&f| f.round().max(0.0) as u64).collect())
            .collect();
    }

    fn decide(&mut self, _inst: &NetworkInstance, state: &FulfillmentState, j: usize) -> Option<usize> {
        let i = (0..self.plan.len()).find(|&i| self.plan[i][j] > 0 && state.inventory[i] > 0)?;
        self.plan[i][j] -= 1;
        Some(i)
    }

    fn admissible(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Myopic,
    FluidSp,
    StochSp,
    Oracle,
}

/// Serializable policy description, e.g. `{"kind":"stoch-sp","resolve":"daily"}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default)]
    pub resolve: Resolve,
    #[serde(default)]
    pub aggregation: LambdaAggregation,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, resolve: Resolve) -> Self {
        PolicySpec { kind, resolve, aggregation: LambdaAggregation::default() }
    }

    /// The six procedures compared in the experiment grid.
    pub fn grid() -> Vec<PolicySpec> {
        vec![
            PolicySpec::new(PolicyKind::Myopic, Resolve::Static),
            PolicySpec::new(PolicyKind::FluidSp, Resolve::Static),
            PolicySpec::new(PolicyKind::FluidSp, Resolve::Daily),
            PolicySpec::new(PolicyKind::StochSp, Resolve::Static),
            PolicySpec::new(PolicyKind::StochSp, Resolve::Daily),
            PolicySpec::new(PolicyKind::Oracle, Resolve::Static),
        ]
    }

    pub fn label(&self) -> String {
        let res = match self.resolve {
            Resolve::Static => "s",
            Resolve::Daily => "r",
        };
        match self.kind {
            PolicyKind::Myopic => "Myopic".into(),
            PolicyKind::FluidSp => format!("F-SP-{res}"),
            PolicyKind::StochSp => format!("S-SP-{res}"),
            PolicyKind::Oracle => "Offline".into(),
        }
    }

    pub fn admissible(&self) -> bool {
        self.kind != PolicyKind::Oracle
    }

    pub fn build(&self, train: &ScenarioSet) -> Box<dyn Policy> {
        match self.kind {
            PolicyKind::Myopic => Box::new(Myopic),
            PolicyKind::Oracle => Box::new(Oracle::default()),
            PolicyKind::FluidSp => {
                Box::new(ShadowPrice::new(PriceSource::Fluid, self.resolve, self.aggregation, train.clone()))
            }
            PolicyKind::StochSp => {
                Box::new(ShadowPrice::new(PriceSource::Stoch, self.resolve, self.aggregation, train.clone()))
            }
        }
    }
}

impl std::str::FromStr for PolicySpec {
    type Err = Error;

    /// Accepts JSON or a grid label such as `S-SP-r`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Ok(serde_json::from_str(s)?);
        }
        PolicySpec::grid()
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy {s}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemandScenario, StarNetwork, RDC_LOCAL_BONUS as EPS};

    fn star1(q: u64) -> NetworkInstance {
        StarNetwork::new(1, 0.5).expand(q).unwrap()
    }

    #[test]
    fn myopic_examples() {
        let inst = StarNetwork::new(2, 0.5).expand(3).unwrap();
        assert_eq!(myopic_decide(&inst, &[1, 1, 1], 2), Some(2));
        assert_eq!(myopic_decide(&inst, &[1, 1, 0], 2), Some(0));
        assert_eq!(myopic_decide(&inst, &[0, 1, 0], 2), None);
    }

    #[test]
    fn lambda_fluid_examples() {
        let inst = star1(3);
        let x = Placement::new(vec![2, 1], 3).unwrap();
        assert_eq!(compute_lambda_fluid(&inst, &[1.0, 1.0], &x).unwrap(), 0.0);
        let x = Placement::new(vec![1, 0], 1).unwrap();
        assert_eq!(compute_lambda_fluid(&inst, &[3.0, 0.0], &x).unwrap(), 1.0 + EPS);
        assert_eq!(compute_lambda_fluid(&inst, &[0.0, 0.0], &x).unwrap(), 0.0);
    }

    #[test]
    fn lambda_stoch_examples() {
        let inst = star1(1);
        let x = Placement::new(vec![1, 0], 1).unwrap();
        let same = ScenarioSet::new(vec![DemandScenario::new(vec![3, 0]); 4]).unwrap();
        let fluid = compute_lambda_fluid(&inst, &[3.0, 0.0], &x).unwrap();
        assert_eq!(compute_lambda_stoch(&inst, &same, &x, LambdaAggregation::WeightedSum).unwrap(), fluid);

        let mixed = ScenarioSet::new(vec![DemandScenario::new(vec![3, 0]), DemandScenario::new(vec![0, 0])]).unwrap();
        for agg in [LambdaAggregation::WeightedSum, LambdaAggregation::UnweightedMean] {
            let l = compute_lambda_stoch(&inst, &mixed, &x, agg).unwrap();
            assert!((l - (1.0 + EPS) / 2.0).abs() < 1e-15);
        }

        let single = ScenarioSet::new(vec![DemandScenario::new(vec![2, 1])]).unwrap();
        let x = Placement::new(vec![1, 1], 2).unwrap();
        assert_eq!(
            compute_lambda_stoch(&inst, &single, &x, LambdaAggregation::WeightedSum).unwrap(),
            compute_lambda_fluid(&inst, &[2.0, 1.0], &x).unwrap()
        );
    }

    #[test]
    fn threshold_examples() {
        let inst = star1(2);
        let lam = |l: f64| vec![l, 0.0];
        assert_eq!(sp_decide(&inst, &[1, 0], 1, &lam(0.6)), None);
        assert_eq!(sp_decide(&inst, &[1, 0], 1, &lam(0.0)), Some(0));
        assert_eq!(sp_decide(&inst, &[1, 0], 1, &lam(0.5)), None);
        for l in [0.0, 0.4, 0.9, 1.0 + EPS, 5.0] {
            assert_eq!(sp_decide(&inst, &[1, 1], 1, &lam(l)), Some(1));
            assert_eq!(sp_decide(&inst, &[1, 1], 0, &lam(l)), Some(0));
        }
    }

    #[test]
    fn threshold_is_monotone() {
        let inst = StarNetwork::new(3, 0.35).expand(2).unwrap();
        let grid: Vec<f64> = (0..=24).map(|k| k as f64 * 0.05).collect();
        for j in 0..4 {
            for inv in [[1u64, 0, 0, 0], [2, 1, 0, 1], [0, 0, 0, 1]] {
                let mut accepted_above = false;
                for &l in grid.iter().rev() {
                    let acc = sp_decide(&inst, &inv, j, &[l, 0.0, 0.0, 0.0]).is_some();
                    assert!(!accepted_above || acc, "accepting at a higher price but not at {l}");
                    accepted_above |= acc;
                }
            }
        }
    }

    #[test]
    fn spec_parsing() {
        let p: PolicySpec = r#"{"kind":"stoch-sp","resolve":"daily"}"#.parse().unwrap();
        assert_eq!(p, PolicySpec::new(PolicyKind::StochSp, Resolve::Daily));
        assert_eq!(p.label(), "S-SP-r");
        let m: PolicySpec = r#"{"kind":"myopic"}"#.parse().unwrap();
        assert_eq!(m.resolve, Resolve::Static);
        assert_eq!("f-sp-s".parse::<PolicySpec>().unwrap().label(), "F-SP-s");
        assert!(!"Offline".parse::<PolicySpec>().unwrap().admissible());
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"kind":"stoch-sp","resolve":"daily","aggregation":"weighted-sum"}"#);
    }

    #[test]
    fn oracle_reward_is_order_free() {
        let inst = NetworkInstance::new(vec![vec![1.0, 0.4], vec![0.0, 0.7]], 2).unwrap();
        let x = Placement::new(vec![1, 1], 2).unwrap();
        let a = oracle_reward(&inst, &x, &ArrivalSequence::from_types(&[0, 1]));
        let b = oracle_reward(&inst, &x, &ArrivalSequence::from_types(&[1, 0]));
        assert!((a - 1.7).abs() < 1e-12);
        assert_eq!(a, b);
        assert_eq!(oracle_reward(&inst, &x, &ArrivalSequence::default()), 0.0);
    }
}
