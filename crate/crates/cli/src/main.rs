use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use invplace::demand::{empirical_scenarios, read_scenarios, read_sequences, write_scenarios, write_sequences, Pmf, SpatialModel};
use invplace::fulfillment::PolicySpec;
use invplace::gallery::{build_greedy_grid, build_tight, greedy_gap, tight_gap};
use invplace::harness::{
    dominance_violations, gap_decay_study, run_grid, simulations_run, table2, GapModel, GapStudyConfig, GridConfig,
    GridResult, RegionData, DOMINANCE_TOL, RATIO_TOL,
};
use invplace::lp::{FEASIBILITY_TOL, OPTIMALITY_TOL};
use invplace::pipeline::{ingest, parse_orders, synth_generate, write_orders, OrderRecord, PoolFilter, SynthSpec};
use invplace::placement::{place, PlaceOptions, Procedure, SearchMode};
use invplace::rounding::{certify_theorem1, rounding_stats, split_yhl};
use invplace::surrogate::TieBreak;
use invplace::{FractionalPlacement, NetworkInstance, StarNetwork};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "invplace", version, about = "Inventory placement and online fulfillment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place inventory with one procedure and print a placement report.
    Place(PlaceArgs),
    /// Check the rounding properties and the approximation certificate.
    Verify(VerifyArgs),
    /// Evaluate one (region, r, load factor) cell.
    Evaluate(EvaluateArgs),
    /// Run the full experiment grid.
    Experiment(ExperimentArgs),
    /// Measure how the in-sample optimism of the SAA placement decays with K.
    GapStudy(GapStudyArgs),
    /// Pool SKUs from an order log and write per-region scenario files.
    Ingest(IngestArgs),
    /// Build a worst-case family instance and verify its gap.
    Gallery(GalleryArgs),
    /// Write a synthetic order log.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Rdc,
    Fdc,
    None,
}

impl From<TieArg> for TieBreak {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Rdc => TieBreak::Rdc,
            TieArg::Fdc => TieBreak::Fdc,
            TieArg::None => TieBreak::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchArg {
    Best,
    First,
}

#[derive(Args)]
struct PlaceOpts {
    #[arg(long, value_enum, default_value = "rdc")]
    tie_break: TieArg,
    #[arg(long, value_enum, default_value = "best")]
    search: SearchArg,
}

impl PlaceOpts {
    fn options(&self) -> PlaceOptions {
        PlaceOptions {
            tie_break: self.tie_break.into(),
            search: match self.search {
                SearchArg::Best => SearchMode::BestImprovement,
                SearchArg::First => SearchMode::FirstImprovement,
            },
        }
    }
}

#[derive(Args)]
struct PlaceArgs {
    #[arg(long)]
    procedure: Procedure,
    /// Instance JSON.
    #[arg(long)]
    instance: PathBuf,
    /// Scenario CSV (`scenario_id,type_id,count`).
    #[arg(long, required_unless_present = "sequences")]
    scenarios: Option<PathBuf>,
    /// Sequence CSV (`scenario_id,timestamp,type_id`), used instead of scenarios.
    #[arg(long)]
    sequences: Option<PathBuf>,
    #[arg(long)]
    q: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    opts: PlaceOpts,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated weights in [0, 1] for the rounding checks.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5,0.5,0.5")]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random split inputs to check.
    #[arg(long, default_value_t = 1000)]
    splits: usize,
    /// Instance JSON for the certificate; defaults to the n=4, d=2 tight instance.
    #[arg(long, requires_all = ["fractional", "scenarios"])]
    instance: Option<PathBuf>,
    /// Comma-separated fractional placement for the certificate.
    #[arg(long, value_delimiter = ',')]
    fractional: Option<Vec<f64>>,
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    certificate_trials: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Order log CSV.
    #[arg(long, conflicts_with_all = ["data", "synth_seed"])]
    orders: Option<PathBuf>,
    /// Directory written by `ingest`.
    #[arg(long, conflicts_with = "synth_seed")]
    data: Option<PathBuf>,
    /// Generate the standard synthetic log with this seed.
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Ratio CSV (`region,r,load_factor,placement,policy,ratio`).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// JSON manifest with seeds, tolerances and versions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Mean ratio per load factor.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Region name, e.g. `region-3`.
    #[arg(long)]
    region: String,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    load_factor: f64,
    #[arg(long, value_delimiter = ',', default_value = "proportional,offline,fluid,myopic")]
    placement: Vec<Procedure>,
    /// Policy labels (e.g. `S-SP-r`) or JSON specs; defaults to all six.
    #[arg(long)]
    policy: Vec<PolicySpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    opts: PlaceOpts,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid configuration JSON; overrides the standard grid.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct GapStudyArgs {
    #[arg(long, default_value_t = 2)]
    n_fdc: usize,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    #[arg(long, default_value_t = 10)]
    q: u64,
    /// Each district's weekly demand is uniform on `lo..=hi`.
    #[arg(long, default_value_t = 0)]
    lo: u64,
    #[arg(long, default_value_t = 6)]
    hi: u64,
    #[arg(long, value_delimiter = ',', default_value = "20,80,320,1280")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    holdout: usize,
    #[arg(long, default_value_t = 20)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_control_variate: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Order log CSV.
    input: PathBuf,
    /// Output directory for per-region files.
    #[arg(long, short)]
    output: PathBuf,
    /// Keep only this region id.
    #[arg(long)]
    region: Option<u32>,
    #[arg(long)]
    mean_lo: Option<f64>,
    #[arg(long)]
    mean_hi: Option<f64>,
    #[arg(long)]
    cv_max: Option<f64>,
    #[arg(long)]
    sample_sd: bool,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Tight,
    GreedyGrid,
}

#[derive(Args)]
struct GalleryArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Number of DCs (tight).
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Servers per type (tight).
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Grid size (greedy-grid).
    #[arg(long, default_value_t = 3)]
    q: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Spec JSON; overrides the standard spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Per-region layout written by `ingest` and read back by `--data`.
#[derive(Serialize, Deserialize)]
struct RegionIndex {
    name: String,
    n_fdc: usize,
    train_weeks: usize,
    test_weeks: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns whether every invariant held.
fn run(cli: Cli) -> Result<bool> {
    let clean = match cli.command {
        Command::Place(a) => cmd_place(a)?,
        Command::Verify(a) => cmd_verify(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::Experiment(a) => cmd_experiment(a)?,
        Command::GapStudy(a) => cmd_gap_study(a)?,
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Gallery(a) => cmd_gallery(a)?,
        Command::Synth(a) => cmd_synth(a)?,
    };
    let violations = dominance_violations();
    if violations > 0 {
        eprintln!("{violations} of {} simulations beat the hindsight optimum", simulations_run());
    }
    Ok(clean && violations == 0)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_instance(path: &Path) -> Result<NetworkInstance> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing instance {}", path.display()))
}

fn cmd_place(a: PlaceArgs) -> Result<bool> {
    let inst = read_instance(&a.instance)?;
    let train = match (&a.sequences, &a.scenarios) {
        (Some(p), _) => empirical_scenarios(read_sequences(open(p)?, None)?, inst.m())?,
        (None, Some(p)) => read_scenarios(open(p)?, inst.m())?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let q = a.q.unwrap_or(inst.q());
    let report = place(a.procedure, &inst, &train, q, a.seed, &a.opts.options())?;
    write_json(None, &report)?;
    Ok(true)
}

fn binomial_sd(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    if a.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        bail!("weights must lie in [0, 1]");
    }
    if a.trials == 0 {
        bail!("need at least one trial");
    }
    let stats = rounding_stats(&a.weights, a.trials, a.seed);
    let n = a.weights.len();

    let marginal_ok = (0..n).all(|i| (stats.marginals[i] - a.weights[i]).abs() <= 3.0 * binomial_sd(a.weights[i], a.trials));
    let mut pairs_ok = true;
    for i in 0..n {
        for k in (i + 1)..n {
            let (pi, pk) = (stats.marginals[i], stats.marginals[k]);
            let ones = pi * pk;
            let zeros = (1.0 - pi) * (1.0 - pk);
            pairs_ok &= stats.both_one[i * n + k] <= ones + 3.0 * binomial_sd(ones, a.trials);
            pairs_ok &= stats.both_zero[i * n + k] <= zeros + 3.0 * binomial_sd(zeros, a.trials);
        }
    }

    let split_failures = check_splits(a.splits, a.seed)?;

    let (inst, x, set) = match (&a.instance, &a.fractional, &a.scenarios) {
        (Some(i), Some(f), Some(s)) => {
            let inst = read_instance(i)?;
            let x = FractionalPlacement::new(f.clone(), inst.q())?;
            let set = read_scenarios(open(s)?, inst.m())?;
            (inst, x, set)
        }
        _ => {
            let tight = build_tight(4, 2)?;
            let x = FractionalPlacement::new(vec![0.5; 4], tight.q)?;
            let set = tight.scenarios.clone().context("tight instance has no scenarios")?;
            (tight.instance, x, set)
        }
    };
    let cert = certify_theorem1(&inst, &x, &set, a.certificate_trials, a.seed)?;

    let props = json!({
        "marginals": marginal_ok,
        "sum_preserved": stats.sum_violations == 0,
        "negative_correlation": pairs_ok,
        "split_invariants": split_failures == 0,
        "certificate": cert.holds(),
    });
    let all = props.as_object().expect("object").values().all(|v| v.as_bool() == Some(true));
    write_json(
        a.output.as_deref(),
        &json!({
            "version": VERSION,
            "seed": a.seed,
            "pass": all,
            "properties": props,
            "rounding": stats,
            "split_failures": split_failures,
            "splits_checked": a.splits,
            "certificate": cert,
        }),
    )?;
    Ok(all)
}

/// Random `(y, x)` inputs with `sum y <= x`, checked against the split
/// constraints. Returns the number of failures.
fn check_splits(count: usize, seed: u64) -> Result<usize> {
    use rand::Rng;
    let mut rng = invplace::rng::stream(seed, 1);
    let mut failures = 0;
    for _ in 0..count {
        let len = rng.gen_range(1..=6);
        let y: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
        let x: f64 = y.iter().sum::<f64>() + rng.gen::<f64>();
        let s = split_yhl(&y, x)?;
        let floor = x.floor();
        let f = x - floor;
        let sum_h: f64 = s.y_high.iter().sum();
        let sum_l: f64 = s.y_low.iter().sum();
        let ok = y.iter().enumerate().all(|(j, &yj)| {
            let (h, l) = (s.y_high[j], s.y_low[j]);
            (0.0..=1.0 + 1e-9).contains(&h)
                && (-1e-9..=h + 1e-9).contains(&l)
                && (f * h + (1.0 - f) * l - yj).abs() <= 1e-9
        }) && sum_h <= floor + 1.0 + 1e-9
            && sum_l <= floor + 1e-9;
        failures += usize::from(!ok);
    }
    Ok(failures)
}

fn load_regions(d: &DataArgs) -> Result<Vec<RegionData>> {
    if let Some(dir) = &d.data {
        return read_region_dir(dir);
    }
    let records = match (&d.orders, d.synth_seed) {
        (Some(p), _) => parse_orders(open(p)?, d.skip_bad)?.records,
        (None, Some(seed)) => synth_generate(&SynthSpec::standard(seed))?,
        (None, None) => bail!("give --orders, --data or --synth-seed"),
    };
    Ok(ingest(&records, &PoolFilter::default())?.0)
}

fn read_region_dir(dir: &Path) -> Result<Vec<RegionData>> {
    let index: Vec<RegionIndex> = serde_json::from_reader(open(&dir.join("regions.json"))?)?;
    index
        .into_iter()
        .map(|r| {
            let m = r.n_fdc + 1;
            let sub = dir.join(&r.name);
            let train = read_sequences(open(&sub.join("train_sequences.csv"))?, Some(r.train_weeks))?;
            let test = read_sequences(open(&sub.join("test_sequences.csv"))?, Some(r.test_weeks))?;
            Ok(RegionData {
                name: r.name,
                n_fdc: r.n_fdc,
                train: empirical_scenarios(train, m)?,
                test: empirical_scenarios(test, m)?,
            })
        })
        .collect()
}

fn finish_grid(result: &GridResult, config: &GridConfig, out: &OutputArgs) -> Result<bool> {
    result.write_csv(sink(out.output.as_deref())?)?;
    if let Some(p) = &out.curves {
        result.write_curves(sink(Some(p))?)?;
    }
    for f in &result.failures {
        log::error!("cell {} r={} lf={} failed: {}", f.region, f.r, f.load_factor, f.error);
    }
    for v in &result.violations {
        eprintln!("invariant violated: {v}");
    }
    if let Some(p) = &out.manifest {
        write_json(
            Some(p),
            &json!({
                "version": VERSION,
                "seed": config.seed,
                "config": config,
                "tolerances": {
                    "ratio": RATIO_TOL,
                    "dominance": DOMINANCE_TOL,
                    "lp_feasibility": FEASIBILITY_TOL,
                    "lp_optimality": OPTIMALITY_TOL,
                },
                "cells": result.cells.len(),
                "failures": result.failures,
                "violations": result.violations,
                "region_demand": result.region_demand,
                "table2": table2(result),
            }),
        )?;
    }
    Ok(result.violations.is_empty())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<bool> {
    let regions: Vec<RegionData> = load_regions(&a.data)?.into_iter().filter(|r| r.name == a.region).collect();
    if regions.is_empty() {
        bail!("no pooled data for {}", a.region);
    }
    let mut config = GridConfig::standard(a.seed);
    config.r_values = vec![a.r];
    config.load_factors = vec![a.load_factor];
    config.placements = a.placement.clone();
    if !a.policy.is_empty() {
        config.policies = a.policy.clone();
    }
    config.options = a.opts.options();
    let result = run_grid(&regions, &config);
    finish_grid(&result, &config, &a.out)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<bool> {
    let regions = load_regions(&a.data)?;
    let config: GridConfig = match &a.config {
        Some(p) => serde_json::from_reader(open(p)?).context("parsing grid config")?,
        None => GridConfig::standard(a.seed),
    };
    log::info!("running {} regions", regions.len());
    let result = run_grid(&regions, &config);
    finish_grid(&result, &config, &a.out)
}

fn cmd_gap_study(a: GapStudyArgs) -> Result<bool> {
    if a.lo > a.hi {
        bail!("--lo must not exceed --hi");
    }
    let inst = StarNetwork::new(a.n_fdc, a.r).expand(a.q)?;
    let model = GapModel::Spatial(SpatialModel::new(vec![Pmf::uniform(a.lo, a.hi); a.n_fdc + 1])?);
    let mut config = GapStudyConfig::new(a.k.clone(), a.holdout, a.seed);
    config.resamples = a.resamples;
    config.control_variate = !a.no_control_variate;
    let study = gap_decay_study(&inst, &model, &config)?;
    write_json(a.output.as_deref(), &json!({ "version": VERSION, "config": config, "study": study }))?;
    Ok(true)
}

fn cmd_ingest(a: IngestArgs) -> Result<bool> {
    let parsed = parse_orders(open(&a.input)?, a.skip_bad)?;
    let records: Vec<OrderRecord> = match a.region {
        Some(id) => parsed.records.into_iter().filter(|r| r.region_id == id).collect(),
        None => parsed.records,
    };
    let defaults = PoolFilter::default();
    let filter = PoolFilter {
        mean_lo: a.mean_lo.unwrap_or(defaults.mean_lo),
        mean_hi: a.mean_hi.unwrap_or(defaults.mean_hi),
        cv_max: a.cv_max.unwrap_or(defaults.cv_max),
        sample_sd: a.sample_sd,
    };
    let (regions, report) = ingest(&records, &filter)?;
    fs::create_dir_all(&a.output)?;
    let mut index = Vec::new();
    for r in &regions {
        let sub = a.output.join(&r.name);
        fs::create_dir_all(&sub)?;
        for (tag, set) in [("train", &r.train), ("test", &r.test)] {
            write_scenarios(set, File::create(sub.join(format!("{tag}_scenarios.csv")))?)?;
            let seqs = set.sequences().context("ingested scenarios keep their sequences")?;
            write_sequences(seqs, File::create(sub.join(format!("{tag}_sequences.csv")))?)?;
        }
        index.push(RegionIndex { name: r.name.clone(), n_fdc: r.n_fdc, train_weeks: r.train.len(), test_weeks: r.test.len() });
    }
    write_json(Some(&a.output.join("regions.json")), &index)?;
    write_json(None, &json!({ "report": report, "filter": filter, "skipped": parsed.skipped }))?;
    Ok(true)
}

fn cmd_gallery(a: GalleryArgs) -> Result<bool> {
    let (doc, ok) = match a.family {
        Family::Tight => {
            let family = build_tight(a.n, a.d)?;
            let gap = tight_gap(a.n, a.d)?;
            let ok = (gap.ratio - gap.closed_form).abs() <= 1e-9;
            (json!({ "family": "tight", "instance": family, "verification": gap, "matches_closed_form": ok }), ok)
        }
        Family::GreedyGrid => {
            let grid = build_greedy_grid(a.q)?;
            let gap = greedy_gap(a.q)?;
            let ok = (gap.optimal_value - gap.lp_value).abs() <= 1e-6;
            (json!({ "family": "greedy-grid", "instance": grid, "verification": gap, "lp_agrees": ok }), ok)
        }
    };
    write_json(a.output.as_deref(), &doc)?;
    Ok(ok)
}

fn cmd_synth(a: SynthArgs) -> Result<bool> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => serde_json::from_reader(open(p)?).context("parsing synth spec")?,
        None => SynthSpec::standard(a.seed),
    };
    let records = synth_generate(&spec)?;
    let mut w = sink(a.output.as_deref())?;
    write_orders(&records, &mut w)?;
    w.flush()?;
    Ok(true)
}
