//! Domain types: the bipartite DC/demand-type network, placements, demand
//! vectors and arrival streams, and the RDC/FDC star specialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bonus on the RDC's local reward (`1 + RDC_LOCAL_BONUS`).
pub const RDC_LOCAL_BONUS: f64 = 1e-7;

/// Tolerance on `|sum(x) - Q|` for fractional placements.
pub const PLACEMENT_SUM_TOL: f64 = 1e-9;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// DCs `0..n`, demand types `0..m`, rewards `r[i][j]` in `[0, 1]` and a total
/// inventory `Q`.
///
/// Rewards are stored dense and row-major. Entries above one are only accepted
/// up to `1 + local_bonus`, which is how the star expansion encodes its
/// inflated RDC-local reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc", into = "InstanceDoc")]
pub struct NetworkInstance {
    n: usize,
    m: usize,
    rewards: Vec<f64>,
    q: u64,
    local_bonus: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    n: usize,
    m: usize,
    rewards: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    epsilon: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl TryFrom<InstanceDoc> for NetworkInstance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.rewards.len() != doc.n || doc.rewards.iter().any(|row| row.len() != doc.m) {
            return Err(Error::InvalidInstance(format!(
                "rewards must be {}x{}",
                doc.n, doc.m
            )));
        }
        NetworkInstance::with_bonus(doc.rewards, doc.q, doc.epsilon)
    }
}

impl From<NetworkInstance> for InstanceDoc {
    fn from(inst: NetworkInstance) -> Self {
        InstanceDoc {
            n: inst.n,
            m: inst.m,
            rewards: inst.rows().map(|r| r.to_vec()).collect(),
            q: inst.q,
            epsilon: inst.local_bonus,
        }
    }
}

impl NetworkInstance {
    pub fn new(rewards: Vec<Vec<f64>>, q: u64) -> Result<Self> {
        Self::with_bonus(rewards, q, 0.0)
    }

    /// Like [`NetworkInstance::new`] but tolerates rewards up to `1 + bonus`.
    pub fn with_bonus(rewards: Vec<Vec<f64>>, q: u64, bonus: f64) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(Error::InvalidInstance("need at least one DC".into()));
        }
        let m = rewards[0].len();
        if m == 0 {
            return Err(Error::InvalidInstance("need at least one demand type".into()));
        }
        if !(bonus >= 0.0 && bonus.is_finite()) {
            return Err(Error::InvalidInstance(format!("bad local bonus {bonus}")));
        }
        let mut flat = Vec::with_capacity(n * m);
        for (i, row) in rewards.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidInstance(format!("row {i} has length {}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0 && v <= 1.0 + bonus) {
                    return Err(Error::InvalidInstance(format!("r[{i}][{j}] = {v} outside [0,1]")));
                }
                flat.push(v);
            }
        }
        Ok(NetworkInstance { n, m, rewards: flat, q, local_bonus: bonus })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn local_bonus(&self) -> f64 {
        self.local_bonus
    }

    /// Same network with a different total inventory.
    pub fn with_q(&self, q: u64) -> Self {
        NetworkInstance { q, ..self.clone() }
    }

    #[inline]
    pub fn reward(&self, i: usize, j: usize) -> f64 {
        self.rewards[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rewards[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rewards.chunks(self.m)
    }

    /// Owned copy of the reward matrix, one row per DC.
    pub fn reward_matrix(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// DCs with positive reward for type `j`.
    pub fn servers(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.reward(i, j) > 0.0)
    }

    /// Largest reward any DC offers type `j`.
    pub fn top_reward(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.reward(i, j)).fold(0.0, f64::max)
    }

    pub fn degree_profile(&self) -> DegreeProfile {
        degree_profile(self)
    }

    /// Recognizes the RDC/FDC star layout produced by [`StarNetwork::expand`].
    pub fn star_shape(&self) -> Option<StarShape> {
        if self.n != self.m {
            return None;
        }
        let n_fdc = self.n - 1;
        let rdc_local = self.reward(0, 0);
        if rdc_local < 1.0 {
            return None;
        }
        let spill = if n_fdc > 0 { self.reward(0, 1) } else { 0.5 };
        if n_fdc > 0 && !(spill > 0.0 && spill < 1.0) {
            return None;
        }
        for j in 1..self.m {
            if self.reward(0, j) != spill {
                return None;
            }
        }
        for i in 1..self.n {
            for j in 0..self.m {
                let expect = if i == j { 1.0 } else { 0.0 };
                if self.reward(i, j) != expect {
                    return None;
                }
            }
        }
        Some(StarShape { n_fdc, spill, rdc_local })
    }
}

/// Parameters of a recognized star instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StarShape {
    pub n_fdc: usize,
    /// Spillover reward `r` of the RDC for FDC districts.
    pub spill: f64,
    /// Local reward of the RDC for district 0 (`1 + epsilon`).
    pub rdc_local: f64,
}

/// Per-type degrees `d_j = |{i : r_ij > 0}|` and their maximum `d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub per_type: Vec<usize>,
    pub max: usize,
}

pub fn degree_profile(inst: &NetworkInstance) -> DegreeProfile {
    let per_type: Vec<usize> = (0..inst.m()).map(|j| inst.servers(j).count()).collect();
    let max = per_type.iter().copied().max().unwrap_or(0);
    DegreeProfile { per_type, max }
}

/// Integer inventory split; always sums to `Q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Placement(Vec<u64>);

impl Placement {
    pub fn new(x: Vec<u64>, q: u64) -> Result<Self> {
        let total: u64 = x.iter().sum();
        if total != q {
            return Err(Error::InvalidPlacement(format!("units sum to {total}, expected {q}")));
        }
        Ok(Placement(x))
    }

    /// All `q` units at DC `dc`.
    pub fn concentrated(n: usize, dc: usize, q: u64) -> Self {
        let mut x = vec![0; n];
        x[dc] = q;
        Placement(x)
    }

    pub fn units(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    /// Moves one unit from `from` to `to`, if `from` has stock.
    pub fn moved(&self, from: usize, to: usize) -> Option<Placement> {
        if self.0[from] == 0 || from == to {
            return None;
        }
        let mut x = self.0.clone();
        x[from] -= 1;
        x[to] += 1;
        Some(Placement(x))
    }

    pub fn into_inner(self) -> Vec<u64> {
        self.0
    }
}

/// Point of the convex hull of integer placements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FractionalPlacement(Vec<f64>);

impl FractionalPlacement {
    pub fn new(x: Vec<f64>, q: u64) -> Result<Self> {
        let mut x = x;
        for (i, v) in x.iter_mut().enumerate() {
            if !v.is_finite() || *v < -1e-12 {
                return Err(Error::InvalidPlacement(format!("x[{i}] = {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = x.iter().sum();
        if (total - q as f64).abs() > PLACEMENT_SUM_TOL {
            return Err(Error::InvalidPlacement(format!("sum {total} differs from Q = {q}")));
        }
        Ok(FractionalPlacement(x))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_integral(&self, tol: f64) -> bool {
        self.0.iter().all(|v| (v - v.round()).abs() <= tol)
    }
}

impl From<&Placement> for FractionalPlacement {
    fn from(p: &Placement) -> Self {
        FractionalPlacement(p.as_reals())
    }
}

/// Total demand `D_j` per type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandScenario(Vec<u64>);

impl DemandScenario {
    pub fn new(counts: Vec<u64>) -> Self {
        DemandScenario(counts)
    }

    pub fn zeros(m: usize) -> Self {
        DemandScenario(vec![0; m])
    }

    /// Scenario with one unit of type `j`.
    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut d = vec![0; m];
        d[j] = 1;
        DemandScenario(d)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn m(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    /// Seconds from the start of the horizon.
    pub timestamp: f64,
    pub type_id: usize,
}

impl Request {
    pub fn day(&self) -> u32 {
        day_of(self.timestamp)
    }
}

pub fn day_of(timestamp: f64) -> u32 {
    (timestamp / SECONDS_PER_DAY).floor().max(0.0) as u32
}

pub fn day_start(day: u32) -> f64 {
    day as f64 * SECONDS_PER_DAY
}

/// Ordered request stream `J`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    requests: Vec<Request>,
}

impl ArrivalSequence {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        if requests
            .windows(2)
            .any(|w| !(w[1].timestamp >= w[0].timestamp))
        {
            return Err(Error::InvalidArgument("timestamps must be non-decreasing".into()));
        }
        Ok(ArrivalSequence { requests })
    }

    /// Unit-spaced sequence over the given type order, timestamps `0..T`.
    pub fn from_types(types: &[usize]) -> Self {
        let requests = types
            .iter()
            .enumerate()
            .map(|(t, &type_id)| Request { timestamp: t as f64, type_id })
            .collect();
        ArrivalSequence { requests }
    }

    /// Canonical sequence realizing `d`: all of type 0, then type 1, ...
    pub fn from_scenario(d: &DemandScenario) -> Self {
        let types: Vec<usize> = d
            .counts()
            .iter()
            .enumerate()
            .flat_map(|(j, &c)| std::iter::repeat_n(j, c as usize))
            .collect();
        Self::from_types(&types)
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn types(&self) -> impl Iterator<Item = usize> + '_ {
        self.requests.iter().map(|r| r.type_id)
    }

    pub fn aggregate(&self, m: usize) -> DemandScenario {
        let mut counts = vec![0u64; m];
        for r in &self.requests {
            counts[r.type_id] += 1;
        }
        DemandScenario(counts)
    }

    /// Demand arriving at or after `from` seconds.
    pub fn aggregate_from(&self, m: usize, from: f64) -> DemandScenario {
        let mut counts = vec![0u64; m];
        for r in self.requests.iter().filter(|r| r.timestamp >= from) {
            counts[r.type_id] += 1;
        }
        DemandScenario(counts)
    }
}

/// JD.com-style region: one RDC in district 0 and `n_fdc` local-only FDCs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarNetwork {
    pub n_fdc: usize,
    pub r: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    RDC_LOCAL_BONUS
}

impl StarNetwork {
    pub fn new(n_fdc: usize, r: f64) -> Self {
        StarNetwork { n_fdc, r, epsilon: RDC_LOCAL_BONUS }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// DC 0 earns `1 + epsilon` locally and `r` on spillover; FDC `i` earns 1
    /// on district `i` only.
    pub fn expand(&self, q: u64) -> Result<NetworkInstance> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidInstance(format!("spillover reward {} not in (0,1)", self.r)));
        }
        let size = self.n_fdc + 1;
        let mut rewards = vec![vec![0.0; size]; size];
        rewards[0][0] = 1.0 + self.epsilon;
        for j in 1..size {
            rewards[0][j] = self.r;
            rewards[j][j] = 1.0;
        }
        NetworkInstance::with_bonus(rewards, q, self.epsilon)
    }
}

/// Expected demand over inventory.
pub fn load_factor(mean_total_demand: f64, q: u64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidArgument("load factor undefined for Q = 0".into()));
    }
    Ok(mean_total_demand / q as f64)
}
