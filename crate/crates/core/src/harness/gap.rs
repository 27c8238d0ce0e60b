use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{sample_spatial, sample_temporal, ScenarioSet, SpatialModel, TemporalModel};
use crate::error::{Error, Result};
use crate::model::{DemandScenario, NetworkInstance};
use crate::rng::{derive_seed, stream, Rng};
use crate::surrogate::{saa_placement, OffEvaluator, MAX_SAA_SCENARIOS};

#[derive(Clone, Debug)]
pub enum GapModel {
    Spatial(SpatialModel),
    Temporal(TemporalModel),
}

impl GapModel {
    fn m(&self) -> usize {
        match self {
            GapModel::Spatial(s) => s.m(),
            GapModel::Temporal(t) => t.m(),
        }
    }

    fn draw(&self, rng: &mut Rng) -> DemandScenario {
        match self {
            GapModel::Spatial(s) => sample_spatial(s, rng),
            GapModel::Temporal(t) => sample_temporal(t, rng).aggregate(t.m()),
        }
    }

    fn draw_set(&self, k: usize, rng: &mut Rng) -> Result<ScenarioSet> {
        ScenarioSet::new((0..k).map(|_| self.draw(rng)).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapStudyConfig {
    /// Training sample sizes, ascending.
    pub k_values: Vec<usize>,
    pub holdout_size: usize,
    pub resamples: usize,
    pub seed: u64,
    /// Subtract the same train-minus-holdout difference measured at a fixed
    /// reference placement. This leaves the expected gap unchanged and
    /// removes most of the sampling noise of the training mean.
    #[serde(default = "default_true")]
    pub control_variate: bool,
}

fn default_true() -> bool {
    true
}

impl GapStudyConfig {
    pub fn new(k_values: Vec<usize>, holdout_size: usize, seed: u64) -> Self {
        GapStudyConfig { k_values, holdout_size, resamples: 20, seed, control_variate: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub k: usize,
    /// Mean gap, control-variate adjusted when enabled.
    pub mean_gap: f64,
    pub stderr: f64,
    /// Mean of the unadjusted `train - holdout` differences.
    pub raw_gap: f64,
    pub raw_stderr: f64,
    pub mean_train_value: f64,
    pub mean_holdout_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub rows: Vec<GapRow>,
    /// Slope of `log gap` against `log K` over rows with a positive gap.
    pub exponent: Option<f64>,
}

impl GapStudy {
    pub fn non_increasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_gap <= w[0].mean_gap + slack)
    }
}

/// For each `K`, fits the sample-average placement on `K` fresh scenarios
/// and measures how far its in-sample value exceeds its value on a large
/// common holdout sample.
pub fn gap_decay_study(inst: &NetworkInstance, model: &GapModel, config: &GapStudyConfig) -> Result<GapStudy> {
    if model.m() != inst.m() {
        return Err(Error::DimensionMismatch(format!("model has {} types, instance {}", model.m(), inst.m())));
    }
    if config.k_values.is_empty() || config.k_values.windows(2).any(|w| w[0] >= w[1]) || config.k_values[0] == 0 {
        return Err(Error::InvalidArgument("K values must be positive and ascending".into()));
    }
    if config.resamples == 0 || config.holdout_size == 0 {
        return Err(Error::InvalidArgument("need at least one resample and a non-empty holdout".into()));
    }
    let q = inst.q();
    let holdout = model.draw_set(config.holdout_size, &mut stream(derive_seed(config.seed, u64::MAX), 0))?;
    let eval = OffEvaluator::new(inst);
    let reference = saa_placement(inst, &holdout.subsample(MAX_SAA_SCENARIOS), q)?.x_hat;
    let reference_holdout = eval.expected(reference.values(), &holdout);

    let mut rows = Vec::with_capacity(config.k_values.len());
    for (ki, &k) in config.k_values.iter().enumerate() {
        let k_seed = derive_seed(config.seed, ki as u64);
        let trials: Vec<(f64, f64, f64)> = (0..config.resamples)
            .into_par_iter()
            .map(|s| -> Result<(f64, f64, f64)> {
                let train = model.draw_set(k, &mut stream(k_seed, s as u64))?;
                let sol = saa_placement(inst, &train, q)?;
                let train_value = eval.expected(sol.x_hat.values(), &train);
                let noise = eval.expected(reference.values(), &train) - reference_holdout;
                Ok((train_value, eval.expected(sol.x_hat.values(), &holdout), noise))
            })
            .collect::<Result<_>>()?;
        let raw: Vec<f64> = trials.iter().map(|(t, h, _)| t - h).collect();
        let (raw_gap, raw_stderr) = mean_and_stderr(&raw);
        let (mean_gap, stderr) = if config.control_variate {
            mean_and_stderr(&trials.iter().map(|(t, h, e)| t - h - e).collect::<Vec<_>>())
        } else {
            (raw_gap, raw_stderr)
        };
        let n = trials.len() as f64;
        rows.push(GapRow {
            k,
            mean_gap,
            stderr,
            raw_gap,
            raw_stderr,
            mean_train_value: trials.iter().map(|t| t.0).sum::<f64>() / n,
            mean_holdout_value: trials.iter().map(|t| t.1).sum::<f64>() / n,
        });
    }
    let exponent = fit_exponent(&rows);
    Ok(GapStudy { rows, exponent })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `log gap` on `log K`.
fn fit_exponent(rows: &[GapRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_gap > 0.0)
        .map(|r| ((r.k as f64).ln(), r.mean_gap.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
