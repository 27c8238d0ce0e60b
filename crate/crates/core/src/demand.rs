//! Stochastic demand models, scenario sets, arrival-order enumeration and the
//! scenario/sequence CSV formats.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArrivalSequence, DemandScenario, Request};

const PMF_TOL: f64 = 1e-12;

/// Per-step arrival probabilities `p[t][j]`; the slack `1 - sum_j p[t][j]` is
/// the zero-reward no-arrival outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalModel {
    p: Vec<Vec<f64>>,
    m: usize,
}

impl TemporalModel {
    pub fn new(p: Vec<Vec<f64>>, m: usize) -> Result<Self> {
        for (t, row) in p.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!("step {t} has {} types, expected {m}", row.len())));
            }
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("negative probability at step {t}")));
            }
            if row.iter().sum::<f64>() > 1.0 + PMF_TOL {
                return Err(Error::InvalidArgument(format!("probabilities at step {t} exceed 1")));
            }
        }
        Ok(TemporalModel { p, m })
    }

    pub fn horizon(&self) -> usize {
        self.p.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.p
    }

    /// Expected aggregate demand.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.m];
        for row in &self.p {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean
    }
}

/// Finite probability mass function over non-negative integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    support: Vec<u64>,
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(support: Vec<u64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidArgument("pmf support and probabilities must be non-empty and aligned".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("negative pmf entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidArgument(format!("pmf sums to {total}")));
        }
        Ok(Pmf { support, probs })
    }

    pub fn point(value: u64) -> Self {
        Pmf { support: vec![value], probs: vec![1.0] }
    }

    /// Uniform over `lo..=hi`.
    pub fn uniform(lo: u64, hi: u64) -> Self {
        let support: Vec<u64> = (lo..=hi).collect();
        let p = 1.0 / support.len() as f64;
        let probs = vec![p; support.len()];
        Pmf { support, probs }
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(&v, &p)| v as f64 * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (&v, &p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return v;
            }
        }
        // Rounding left `u` above the accumulated mass: take the last atom with mass.
        let k = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        self.support[k]
    }
}

/// Independent per-type totals `D_j ~ G_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    pub pmfs: Vec<Pmf>,
}

impl SpatialModel {
    pub fn new(pmfs: Vec<Pmf>) -> Result<Self> {
        if pmfs.is_empty() {
            return Err(Error::InvalidArgument("spatial model needs at least one type".into()));
        }
        Ok(SpatialModel { pmfs })
    }

    pub fn m(&self) -> usize {
        self.pmfs.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.pmfs.iter().map(Pmf::mean).collect()
    }
}

pub fn sample_temporal<R: Rng + ?Sized>(model: &TemporalModel, rng: &mut R) -> ArrivalSequence {
    let mut requests = Vec::new();
    for (t, row) in model.p.iter().enumerate() {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                requests.push(Request { timestamp: t as f64, type_id: j });
                break;
            }
        }
    }
    ArrivalSequence::new(requests).expect("timestamps increase with t")
}

pub fn sample_spatial<R: Rng + ?Sized>(model: &SpatialModel, rng: &mut R) -> DemandScenario {
    DemandScenario::new(model.pmfs.iter().map(|g| g.sample(rng)).collect())
}

/// `K` demand vectors, optionally paired with the sequences they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    scenarios: Vec<DemandScenario>,
    sequences: Option<Vec<ArrivalSequence>>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<DemandScenario>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::InvalidArgument("scenario set must contain at least one scenario".into()));
        }
        let m = scenarios[0].m();
        if scenarios.iter().any(|d| d.m() != m) {
            return Err(Error::DimensionMismatch("scenarios disagree on the number of types".into()));
        }
        Ok(ScenarioSet { scenarios, sequences: None })
    }

    pub fn with_sequences(scenarios: Vec<DemandScenario>, sequences: Vec<ArrivalSequence>) -> Result<Self> {
        let mut set = Self::new(scenarios)?;
        if sequences.len() != set.scenarios.len() {
            return Err(Error::DimensionMismatch("one sequence per scenario required".into()));
        }
        let m = set.m();
        for (k, (d, s)) in set.scenarios.iter().zip(&sequences).enumerate() {
            if s.types().any(|j| j >= m) || &s.aggregate(m) != d {
                return Err(Error::InvalidArgument(format!("sequence {k} does not aggregate to its scenario")));
            }
        }
        set.sequences = Some(sequences);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn m(&self) -> usize {
        self.scenarios[0].m()
    }

    pub fn scenarios(&self) -> &[DemandScenario] {
        &self.scenarios
    }

    pub fn sequences(&self) -> Option<&[ArrivalSequence]> {
        self.sequences.as_deref()
    }

    /// Sample mean of each type's demand.
    pub fn mean_demand(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.m()];
        for d in &self.scenarios {
            for (acc, &c) in mean.iter_mut().zip(d.counts()) {
                *acc += c as f64;
            }
        }
        let k = self.len() as f64;
        mean.iter_mut().for_each(|v| *v /= k);
        mean
    }

    pub fn mean_total(&self) -> f64 {
        self.mean_demand().iter().sum()
    }

    /// Every `ceil(K / max)`-th scenario when `K > max`.
    pub fn subsample(&self, max: usize) -> ScenarioSet {
        if self.len() <= max || max == 0 {
            return self.clone();
        }
        let stride = self.len().div_ceil(max);
        log::warn!("subsampling {} scenarios with stride {stride}", self.len());
        let keep: Vec<usize> = (0..self.len()).step_by(stride).collect();
        ScenarioSet {
            scenarios: keep.iter().map(|&k| self.scenarios[k].clone()).collect(),
            sequences: self.sequences.as_ref().map(|s| keep.iter().map(|&k| s[k].clone()).collect()),
        }
    }

    /// Remaining demand of each paired sequence from `from` seconds onward.
    pub fn truncated_from(&self, from: f64) -> Option<ScenarioSet> {
        let m = self.m();
        let seqs = self.sequences.as_ref()?;
        let scenarios = seqs.iter().map(|s| s.aggregate_from(m, from)).collect();
        Some(ScenarioSet { scenarios, sequences: None })
    }
}

/// Aggregates each sequence over `m` types, keeping the pairing.
pub fn empirical_scenarios(sequences: Vec<ArrivalSequence>, m: usize) -> Result<ScenarioSet> {
    if sequences.iter().flat_map(|s| s.types()).any(|j| j >= m) {
        return Err(Error::DimensionMismatch(format!("sequence references a type outside 0..{m}")));
    }
    let scenarios = sequences.iter().map(|s| s.aggregate(m)).collect();
    ScenarioSet::with_sequences(scenarios, sequences)
}

/// Number of distinct orderings of the multiset `D`, saturating at `u128::MAX`.
pub fn count_orders(d: &DemandScenario) -> u128 {
    let mut count: u128 = 1;
    let mut placed: u128 = 0;
    for &c in d.counts() {
        for k in 1..=c as u128 {
            placed += 1;
            // count * placed / k stays integral: it is a running multinomial.
            let Some(next) = count.checked_mul(placed) else {
                return u128::MAX;
            };
            count = next / k;
        }
    }
    count
}

/// All distinct arrival orders realizing `d`, in lexicographic order.
pub fn enumerate_orders(d: &DemandScenario, limit: u128) -> Result<Vec<ArrivalSequence>> {
    let count = count_orders(d);
    if count > limit {
        return Err(Error::CountExceedsLimit { count, limit });
    }
    let mut remaining: Vec<u64> = d.counts().to_vec();
    let total = d.total() as usize;
    let mut prefix = Vec::with_capacity(total);
    let mut out = Vec::with_capacity(count as usize);
    permute(&mut remaining, &mut prefix, total, &mut out);
    Ok(out)
}

fn permute(remaining: &mut [u64], prefix: &mut Vec<usize>, total: usize, out: &mut Vec<ArrivalSequence>) {
    if prefix.len() == total {
        out.push(ArrivalSequence::from_types(prefix));
        return;
    }
    for j in 0..remaining.len() {
        if remaining[j] > 0 {
            remaining[j] -= 1;
            prefix.push(j);
            permute(remaining, prefix, total, out);
            prefix.pop();
            remaining[j] += 1;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioRow {
    scenario_id: usize,
    type_id: usize,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct SequenceRow {
    scenario_id: usize,
    timestamp: f64,
    type_id: usize,
}

/// Writes `scenario_id,type_id,count`, one row per non-zero count.
pub fn write_scenarios<W: Write>(set: &ScenarioSet, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (k, d) in set.scenarios.iter().enumerate() {
        for (j, &count) in d.counts().iter().enumerate() {
            if count > 0 {
                out.serialize(ScenarioRow { scenario_id: k, type_id: j, count })?;
            }
        }
    }
    if set.scenarios.iter().all(|d| d.total() == 0) {
        // Keep at least one row so the scenario count survives the round trip.
        out.serialize(ScenarioRow { scenario_id: set.len() - 1, type_id: set.m() - 1, count: 0 })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the scenario CSV. Scenario ids must be dense from 0.
pub fn read_scenarios<R: Read>(r: R, m: usize) -> Result<ScenarioSet> {
    let mut counts: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (line, row) in csv::Reader::from_reader(r).deserialize::<ScenarioRow>().enumerate() {
        let row = row?;
        if row.type_id >= m {
            return Err(Error::MalformedRow { line: line as u64 + 2, reason: format!("type {} outside 0..{m}", row.type_id) });
        }
        counts.entry(row.scenario_id).or_insert_with(|| vec![0; m])[row.type_id] += row.count;
    }
    let k = counts.keys().next_back().map_or(0, |&last| last + 1);
    let scenarios = (0..k)
        .map(|id| DemandScenario::new(counts.remove(&id).unwrap_or_else(|| vec![0; m])))
        .collect();
    ScenarioSet::new(scenarios)
}

/// Writes `scenario_id,timestamp,type_id`.
pub fn write_sequences<W: Write>(sequences: &[ArrivalSequence], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (k, s) in sequences.iter().enumerate() {
        for req in s.requests() {
            out.serialize(SequenceRow { scenario_id: k, timestamp: req.timestamp, type_id: req.type_id })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads sequences; `count` pads trailing empty sequences the file cannot express.
pub fn read_sequences<R: Read>(r: R, count: Option<usize>) -> Result<Vec<ArrivalSequence>> {
    let mut rows: BTreeMap<usize, Vec<Request>> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize::<SequenceRow>() {
        let row = row?;
        rows.entry(row.scenario_id)
            .or_default()
            .push(Request { timestamp: row.timestamp, type_id: row.type_id });
    }
    let k = rows.keys().next_back().map_or(0, |&last| last + 1).max(count.unwrap_or(0));
    (0..k)
        .map(|id| ArrivalSequence::new(rows.remove(&id).unwrap_or_default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn temporal_deterministic() {
        let model = TemporalModel::new(vec![vec![0.0, 1.0]; 3], 2).unwrap();
        let seq = sample_temporal(&model, &mut stream(1, 0));
        assert_eq!(seq.types().collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    #[test]
    fn temporal_bernoulli_frequency() {
        let model = TemporalModel::new(vec![vec![0.0, 0.5]], 2).unwrap();
        let hits = (0..100_000u64)
            .filter(|&s| sample_temporal(&model, &mut stream(s, 0)).len() == 1)
            .count();
        assert!((hits as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn temporal_all_zero() {
        let model = TemporalModel::new(vec![vec![0.0, 0.0]; 4], 2).unwrap();
        let seq = sample_temporal(&model, &mut stream(3, 0));
        assert!(seq.is_empty());
        assert_eq!(seq.aggregate(2), DemandScenario::zeros(2));
    }

    #[test]
    fn temporal_rejects_excess_mass() {
        assert!(TemporalModel::new(vec![vec![0.7, 0.4]], 2).is_err());
    }

    #[test]
    fn spatial_point_masses() {
        let model = SpatialModel::new(vec![Pmf::point(3), Pmf::point(0), Pmf::point(7)]).unwrap();
        assert_eq!(sample_spatial(&model, &mut stream(9, 0)).counts(), &[3, 0, 7]);
        let zeros = SpatialModel::new(vec![Pmf::point(0), Pmf::point(0)]).unwrap();
        assert_eq!(sample_spatial(&zeros, &mut stream(9, 0)).counts(), &[0, 0]);
    }

    #[test]
    fn spatial_uniform_mean() {
        let model = SpatialModel::new(vec![Pmf::point(0), Pmf::uniform(0, 1)]).unwrap();
        let mut rng = stream(5, 0);
        let total: u64 = (0..100_000).map(|_| sample_spatial(&model, &mut rng).counts()[1]).sum();
        assert!((total as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn order_counts() {
        let orders = enumerate_orders(&DemandScenario::new(vec![1, 1]), 100).unwrap();
        let types: Vec<Vec<usize>> = orders.iter().map(|s| s.types().collect()).collect();
        assert_eq!(types, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(enumerate_orders(&DemandScenario::new(vec![2, 1]), 100).unwrap().len(), 3);
        match enumerate_orders(&DemandScenario::new(vec![5, 5]), 100) {
            Err(Error::CountExceedsLimit { count, limit }) => {
                assert_eq!(count, 252);
                assert_eq!(limit, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn enumerated_orders_are_distinct_and_aggregate_back() {
        let d = DemandScenario::new(vec![2, 0, 1, 2]);
        let orders = enumerate_orders(&d, 1000).unwrap();
        assert_eq!(orders.len() as u128, count_orders(&d));
        assert_eq!(orders.len(), 30);
        let unique: std::collections::HashSet<Vec<usize>> = orders.iter().map(|s| s.types().collect()).collect();
        assert_eq!(unique.len(), orders.len());
        assert!(orders.iter().all(|s| s.aggregate(4) == d));
    }

    #[test]
    fn empirical_counts() {
        let set = empirical_scenarios(vec![ArrivalSequence::from_types(&[1, 1, 0])], 2).unwrap();
        assert_eq!(set.scenarios()[0].counts(), &[1, 2]);
        let twice = empirical_scenarios(vec![ArrivalSequence::from_types(&[0, 1]); 2], 2).unwrap();
        assert_eq!(twice.len(), 2);
        assert_eq!(twice.scenarios()[0], twice.scenarios()[1]);
        let empty = empirical_scenarios(vec![ArrivalSequence::default()], 3).unwrap();
        assert_eq!(empty.scenarios()[0], DemandScenario::zeros(3));
    }

    #[test]
    fn csv_round_trips() {
        let seqs = vec![
            ArrivalSequence::from_types(&[2, 0, 0]),
            ArrivalSequence::default(),
            ArrivalSequence::from_types(&[1]),
        ];
        let set = empirical_scenarios(seqs.clone(), 3).unwrap();
        let mut buf = Vec::new();
        write_scenarios(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario_id,type_id,count\n"));
        let back = read_scenarios(buf.as_slice(), 3).unwrap();
        assert_eq!(back.scenarios(), set.scenarios());

        let mut buf = Vec::new();
        write_sequences(&seqs, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("scenario_id,timestamp,type_id\n"));
        assert_eq!(read_sequences(buf.as_slice(), Some(3)).unwrap(), seqs);
    }

    #[test]
    fn subsample_strides() {
        let set = ScenarioSet::new((0..10).map(|k| DemandScenario::new(vec![k])).collect()).unwrap();
        let sub = set.subsample(4);
        let kept: Vec<u64> = sub.scenarios().iter().map(|d| d.counts()[0]).collect();
        assert_eq!(kept, vec![0, 3, 6, 9]);
        assert_eq!(set.subsample(20).len(), 10);
    }

    #[test]
    fn truncation_keeps_late_requests() {
        let seq = ArrivalSequence::new(vec![
            Request { timestamp: 10.0, type_id: 0 },
            Request { timestamp: 90_000.0, type_id: 1 },
            Request { timestamp: 200_000.0, type_id: 1 },
        ])
        .unwrap();
        let set = empirical_scenarios(vec![seq], 2).unwrap();
        let late = set.truncated_from(86_400.0).unwrap();
        assert_eq!(late.scenarios()[0].counts(), &[0, 2]);
    }
}
