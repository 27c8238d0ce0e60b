use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{competitive_ratio, mean_reward, omniscient_value};
use crate::demand::ScenarioSet;
use crate::error::{Error, Result};
use crate::fulfillment::PolicySpec;
use crate::model::{ArrivalSequence, StarNetwork, RDC_LOCAL_BONUS};
pub use crate::placement::Procedure as PlacementKind;
use crate::placement::{place, PlaceOptions};
use crate::rng::derive_seed;

/// Largest ratio accepted before a cell is flagged.
pub const RATIO_TOL: f64 = 1e-6;

/// One region's star network with its train and test weeks.
#[derive(Clone, Debug)]
pub struct RegionData {
    pub name: String,
    pub n_fdc: usize,
    pub train: ScenarioSet,
    pub test: ScenarioSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    pub r_values: Vec<f64>,
    pub load_factors: Vec<f64>,
    pub placements: Vec<PlacementKind>,
    pub policies: Vec<PolicySpec>,
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub options: PlaceOptions,
}

fn default_epsilon() -> f64 {
    RDC_LOCAL_BONUS
}

impl GridConfig {
    /// Spillover rewards 0.1, 0.5, 0.9; load factors 0.5 to 2.5 in steps of
    /// 0.25; the four placements and six fulfillment procedures.
    pub fn standard(seed: u64) -> Self {
        GridConfig {
            r_values: vec![0.1, 0.5, 0.9],
            load_factors: (0..9).map(|k| 0.5 + 0.25 * k as f64).collect(),
            placements: vec![
                PlacementKind::Proportional,
                PlacementKind::Offline,
                PlacementKind::Fluid,
                PlacementKind::Myopic,
            ],
            policies: PolicySpec::grid(),
            seed,
            epsilon: RDC_LOCAL_BONUS,
            options: PlaceOptions::default(),
        }
    }
}

/// Inventory whose load factor is closest to `target`, ties to even, at
/// least one unit.
pub fn assign_q(mean_weekly_demand: f64, target: f64) -> Result<u64> {
    if !(target > 0.0) || !mean_weekly_demand.is_finite() || mean_weekly_demand < 0.0 {
        return Err(Error::InvalidArgument(format!("cannot size inventory for demand {mean_weekly_demand} at load {target}")));
    }
    Ok(((mean_weekly_demand / target).round_ties_even() as u64).max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub region: String,
    pub r: f64,
    pub load_factor: f64,
    pub q: u64,
    pub placement: String,
    pub policy: String,
    pub ratio: f64,
    pub mean_reward: f64,
    pub omniscient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub region: String,
    pub r: f64,
    pub load_factor: f64,
    pub placement: Option<String>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub failures: Vec<CellFailure>,
    /// Cells where an admissible policy beat offline fulfillment or a ratio
    /// exceeded `1 + RATIO_TOL`.
    pub violations: Vec<String>,
    /// Mean weekly test demand per region, used for weighted averages.
    pub region_demand: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub r: f64,
    pub placement: String,
    pub policy: String,
    /// Uniform average over regions and load factors.
    pub mean_ratio: f64,
    /// Average weighted by each region's mean weekly demand.
    pub weighted_ratio: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub placement: String,
    pub policy: String,
    pub load_factor: f64,
    pub mean_ratio: f64,
}

impl GridResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["region", "r", "load_factor", "placement", "policy", "ratio"])?;
        for c in &self.cells {
            out.write_record([
                c.region.clone(),
                c.r.to_string(),
                c.load_factor.to_string(),
                c.placement.clone(),
                c.policy.clone(),
                format!("{:.12}", c.ratio),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean ratio per load factor, averaged over regions.
    pub fn curves(&self) -> Vec<CurvePoint> {
        let mut acc: BTreeMap<(u64, String, String, u64), (f64, usize)> = BTreeMap::new();
        for c in &self.cells {
            let e = acc
                .entry((c.r.to_bits(), c.placement.clone(), c.policy.clone(), c.load_factor.to_bits()))
                .or_default();
            e.0 += c.ratio;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|((r, placement, policy, lf), (sum, n))| CurvePoint {
                r: f64::from_bits(r),
                placement,
                policy,
                load_factor: f64::from_bits(lf),
                mean_ratio: sum / n as f64,
            })
            .collect()
    }

    pub fn write_curves<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["r", "placement", "policy", "load_factor", "mean_ratio"])?;
        for p in self.curves() {
            out.write_record([
                p.r.to_string(),
                p.placement,
                p.policy,
                p.load_factor.to_string(),
                format!("{:.12}", p.mean_ratio),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean ratio of every `(placement, policy)` pair at spillover reward `r`.
    pub fn mean_ratio(&self, r: f64, placement: &str, policy: &str) -> Option<f64> {
        table2(self)
            .into_iter()
            .find(|row| row.r == r && row.placement == placement && row.policy == policy)
            .map(|row| row.mean_ratio)
    }
}

/// Averages over regions and load factors per `(r, placement, policy)`.
pub fn table2(result: &GridResult) -> Vec<Table2Row> {
    let mut acc: BTreeMap<(u64, String, String), (f64, f64, f64, usize)> = BTreeMap::new();
    for c in &result.cells {
        let w = result.region_demand.get(&c.region).copied().unwrap_or(1.0);
        let e = acc.entry((c.r.to_bits(), c.placement.clone(), c.policy.clone())).or_default();
        e.0 += c.ratio;
        e.1 += w * c.ratio;
        e.2 += w;
        e.3 += 1;
    }
    acc.into_iter()
        .map(|((r, placement, policy), (sum, wsum, wtot, n))| Table2Row {
            r: f64::from_bits(r),
            placement,
            policy,
            mean_ratio: sum / n as f64,
            weighted_ratio: if wtot > 0.0 { wsum / wtot } else { sum / n as f64 },
            cells: n,
        })
        .collect()
}

struct CellJob<'a> {
    region: &'a RegionData,
    region_index: usize,
    r: f64,
    r_index: usize,
    load_factor: f64,
    lf_index: usize,
}

struct CellOutput {
    cells: Vec<GridCell>,
    failures: Vec<CellFailure>,
    violations: Vec<String>,
}

/// Runs every `(region, r, load factor)` cell in parallel. Each cell places
/// inventory from training data with every placement, simulates every policy
/// on the test weeks, and divides by the omniscient benchmark on the test
/// scenarios. A failing cell is recorded and the grid continues.
pub fn run_grid(regions: &[RegionData], config: &GridConfig) -> GridResult {
    let mut jobs = Vec::new();
    for (region_index, region) in regions.iter().enumerate() {
        for (r_index, &r) in config.r_values.iter().enumerate() {
            for (lf_index, &load_factor) in config.load_factors.iter().enumerate() {
                jobs.push(CellJob { region, region_index, r, r_index, load_factor, lf_index });
            }
        }
    }
    let outputs: Vec<CellOutput> = jobs.par_iter().map(|job| run_cell(job, config)).collect();
    let mut result = GridResult {
        region_demand: regions.iter().map(|r| (r.name.clone(), r.test.mean_total())).collect(),
        ..GridResult::default()
    };
    for out in outputs {
        result.cells.extend(out.cells);
        result.failures.extend(out.failures);
        result.violations.extend(out.violations);
    }
    result
}

fn run_cell(job: &CellJob, config: &GridConfig) -> CellOutput {
    let mut out = CellOutput { cells: Vec::new(), failures: Vec::new(), violations: Vec::new() };
    let region = job.region;
    let fail = |placement: Option<&str>, e: Error| CellFailure {
        region: region.name.clone(),
        r: job.r,
        load_factor: job.load_factor,
        placement: placement.map(str::to_string),
        error: e.to_string(),
    };
    let setup = || -> Result<_> {
        let q = assign_q(region.train.mean_total(), job.load_factor)?;
        let inst = StarNetwork::new(region.n_fdc, job.r).with_epsilon(config.epsilon).expand(q)?;
        let omni = omniscient_value(&inst, &region.test, q)?;
        let seqs: Vec<ArrivalSequence> = match region.test.sequences() {
            Some(s) => s.to_vec(),
            None => region.test.scenarios().iter().map(ArrivalSequence::from_scenario).collect(),
        };
        Ok((q, inst, omni, seqs))
    };
    let (q, inst, omni, seqs) = match setup() {
        Ok(v) => v,
        Err(e) => {
            log::error!("cell {} r={} lf={} failed: {e}", region.name, job.r, job.load_factor);
            out.failures.push(fail(None, e));
            return out;
        }
    };
    let label = ((job.region_index as u64) << 40) | ((job.r_index as u64) << 20) | job.lf_index as u64;
    let cell_seed = derive_seed(config.seed, label);

    for (p_index, &kind) in config.placements.iter().enumerate() {
        let report = match place(kind, &inst, &region.train, q, derive_seed(cell_seed, p_index as u64), &config.options) {
            Ok(r) => r,
            Err(e) => {
                log::error!("placement {} in {} r={} lf={} failed: {e}", kind.label(), region.name, job.r, job.load_factor);
                out.failures.push(fail(Some(kind.label()), e));
                continue;
            }
        };
        let mut rows = Vec::with_capacity(config.policies.len());
        for spec in &config.policies {
            let make = || spec.build(&region.train);
            match mean_reward(&inst, &report.x, &make, &seqs) {
                Ok(mean) => rows.push((spec, mean)),
                Err(e) => out.failures.push(fail(Some(kind.label()), e)),
            }
        }
        let oracle = rows.iter().find(|(s, _)| !s.admissible()).map(|&(_, v)| v);
        for &(spec, mean) in &rows {
            let ratio = competitive_ratio(mean, omni);
            let tag = format!("{} r={} lf={} {}/{}", region.name, job.r, job.load_factor, kind.label(), spec.label());
            if !(0.0..=1.0 + RATIO_TOL).contains(&ratio) {
                out.violations.push(format!("{tag}: ratio {ratio} outside [0, 1]"));
            }
            if let Some(best) = oracle {
                if mean > best + super::DOMINANCE_TOL * (1.0 + best.abs()) {
                    out.violations.push(format!("{tag}: mean reward {mean} above offline fulfillment {best}"));
                }
            }
            out.cells.push(GridCell {
                region: region.name.clone(),
                r: job.r,
                load_factor: job.load_factor,
                q,
                placement: kind.label().to_string(),
                policy: spec.label(),
                ratio,
                mean_reward: mean,
                omniscient: omni,
            });
        }
    }
    out
}
