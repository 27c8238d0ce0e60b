//! Order-log ingestion, SKU pooling, weekly train/test splits and a
//! synthetic generator producing logs of the same shape.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::demand::{empirical_scenarios, ScenarioSet};
use crate::error::{Error, Result};
use crate::harness::RegionData;
use crate::model::{ArrivalSequence, Request};
use crate::rng::{derive_seed, stream};

pub const ORDER_HEADER: [&str; 5] = ["sku_id", "timestamp", "region_id", "district_id", "quantity"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const WEEK_SECONDS: i64 = 7 * 86_400;

#[derive(Clone, Debug, PartialEq)]
pub struct OrderRecord {
    pub sku_id: String,
    pub timestamp: NaiveDateTime,
    pub region_id: u32,
    /// District 0 is the RDC district of its region.
    pub district_id: usize,
    pub quantity: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedOrders {
    pub records: Vec<OrderRecord>,
    /// `(line, reason)` for rows dropped under `skip_bad`.
    pub skipped: Vec<(u64, String)>,
}

/// Accepts `2018-03-05T10:00:00`, a space instead of `T`, optional
/// fractional seconds, or an RFC 3339 offset (kept as local wall time).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_local())
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<OrderRecord, String> {
    if row.len() != ORDER_HEADER.len() {
        return Err(format!("expected {} fields, found {}", ORDER_HEADER.len(), row.len()));
    }
    let sku_id = row[0].trim().to_string();
    if sku_id.is_empty() {
        return Err("empty sku_id".into());
    }
    let timestamp = parse_timestamp(&row[1]).ok_or_else(|| format!("bad timestamp {:?}", &row[1]))?;
    let region_id = row[2].trim().parse().map_err(|_| format!("bad region_id {:?}", &row[2]))?;
    let district_id = row[3].trim().parse().map_err(|_| format!("bad district_id {:?}", &row[3]))?;
    let quantity: u64 = row[4].trim().parse().map_err(|_| format!("non-integer quantity {:?}", &row[4]))?;
    if quantity == 0 {
        return Err("quantity must be at least 1".into());
    }
    Ok(OrderRecord { sku_id, timestamp, region_id, district_id, quantity })
}

/// Strict parse of an order log. Malformed rows abort with their line
/// number unless `skip_bad` is set, in which case they are collected.
pub fn parse_orders<R: Read>(r: R, skip_bad: bool) -> Result<ParsedOrders> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ORDER_HEADER {
        return Err(Error::MalformedRow { line: 1, reason: format!("header must be {}", ORDER_HEADER.join(",")) });
    }
    let mut out = ParsedOrders::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row) {
            Ok(rec) => out.records.push(rec),
            Err(reason) if skip_bad => {
                log::warn!("skipping line {line}: {reason}");
                out.skipped.push((line, reason));
            }
            Err(reason) => return Err(Error::MalformedRow { line, reason }),
        }
    }
    Ok(out)
}

pub fn write_orders<W: Write>(records: &[OrderRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ORDER_HEADER)?;
    for r in records {
        out.write_record([
            r.sku_id.clone(),
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.region_id.to_string(),
            r.district_id.to_string(),
            r.quantity.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One request per unit, all sharing the order's timestamp.
pub fn expand_units(record: &OrderRecord) -> impl Iterator<Item = (NaiveDateTime, usize)> + '_ {
    std::iter::repeat_n((record.timestamp, record.district_id), record.quantity as usize)
}

/// Starts of the first `weeks` Monday-aligned weeks lying entirely within
/// the days spanned by the records.
pub fn full_weeks(records: &[OrderRecord], weeks: usize) -> Result<Vec<NaiveDateTime>> {
    let (Some(first), Some(last)) = (
        records.iter().map(|r| r.timestamp.date()).min(),
        records.iter().map(|r| r.timestamp.date()).max(),
    ) else {
        return Err(Error::InvalidArgument("no orders".into()));
    };
    let offset = (7 - first.weekday().num_days_from_monday() as i64) % 7;
    let monday = first + Duration::days(offset);
    debug_assert_eq!(monday.weekday(), Weekday::Mon);
    let starts: Vec<NaiveDateTime> = (0..weeks as i64)
        .map(|w| (monday + Duration::days(7 * w)).and_hms_opt(0, 0, 0).expect("midnight exists"))
        .collect();
    let end = monday + Duration::days(7 * weeks as i64 - 1);
    if end > last {
        return Err(Error::InvalidArgument(format!(
            "orders from {first} to {last} do not cover {weeks} full weeks from {monday}"
        )));
    }
    Ok(starts)
}

fn week_index(starts: &[NaiveDateTime], t: NaiveDateTime) -> Option<usize> {
    let first = *starts.first()?;
    let secs = (t - first).num_seconds();
    if secs < 0 {
        return None;
    }
    let w = (secs / WEEK_SECONDS) as usize;
    (w < starts.len()).then_some(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolFilter {
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub cv_max: f64,
    /// Sample instead of population standard deviation.
    #[serde(default)]
    pub sample_sd: bool,
}

impl Default for PoolFilter {
    fn default() -> Self {
        PoolFilter { mean_lo: 20.0, mean_hi: 40.0, cv_max: 0.5, sample_sd: false }
    }
}

impl PoolFilter {
    /// Mean and coefficient of variation of weekly totals.
    pub fn stats(&self, totals: &[u64]) -> (f64, f64) {
        self.stats_real(&totals.iter().map(|&t| t as f64).collect::<Vec<_>>())
    }

    pub fn stats_real(&self, totals: &[f64]) -> (f64, f64) {
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return (0.0, f64::INFINITY);
        }
        let denom = if self.sample_sd { n - 1.0 } else { n };
        let var = totals.iter().map(|&t| (t - mean).powi(2)).sum::<f64>() / denom;
        (mean, var.sqrt() / mean)
    }

    /// Inclusive bounds on the mean and the coefficient of variation.
    pub fn accepts(&self, totals: &[u64]) -> bool {
        self.accepts_stats(self.stats(totals))
    }

    pub fn accepts_stats(&self, (mean, cv): (f64, f64)) -> bool {
        mean >= self.mean_lo && mean <= self.mean_hi && cv <= self.cv_max + 1e-12
    }
}

/// Weekly unit totals per `(region, sku)` over the given week starts.
pub fn weekly_totals(records: &[OrderRecord], starts: &[NaiveDateTime]) -> BTreeMap<(u32, String), Vec<u64>> {
    let mut totals: BTreeMap<(u32, String), Vec<u64>> = BTreeMap::new();
    for r in records {
        if let Some(w) = week_index(starts, r.timestamp) {
            totals.entry((r.region_id, r.sku_id.clone())).or_insert_with(|| vec![0; starts.len()])[w] += r.quantity;
        }
    }
    totals
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PooledSku {
    pub region_id: u32,
    pub sku_id: String,
}

/// `(region, sku)` pairs whose three weekly totals pass the filter.
pub fn pool_skus(records: &[OrderRecord], filter: &PoolFilter) -> Result<Vec<PooledSku>> {
    let starts = full_weeks(records, 3)?;
    Ok(weekly_totals(records, &starts)
        .into_iter()
        .filter(|(_, totals)| filter.accepts(totals))
        .map(|((region_id, sku_id), _)| PooledSku { region_id, sku_id })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledWeek {
    pub region_id: u32,
    pub week: usize,
    pub sku_id: String,
    /// Requests over district types, seconds from the week's start.
    pub sequence: ArrivalSequence,
}

/// Per-SKU weekly request streams for the pooled SKUs, multi-unit orders
/// expanded into simultaneous requests. Orders outside the weeks are dropped.
pub fn build_weeks(records: &[OrderRecord], pooled: &[PooledSku], weeks: usize) -> Result<Vec<PooledWeek>> {
    let starts = full_weeks(records, weeks)?;
    let keep: BTreeSet<(u32, &str)> = pooled.iter().map(|p| (p.region_id, p.sku_id.as_str())).collect();
    let mut streams: BTreeMap<(u32, String, usize), Vec<Request>> = BTreeMap::new();
    for p in pooled {
        for w in 0..weeks {
            streams.insert((p.region_id, p.sku_id.clone(), w), Vec::new());
        }
    }
    for r in records {
        if !keep.contains(&(r.region_id, r.sku_id.as_str())) {
            continue;
        }
        let Some(w) = week_index(&starts, r.timestamp) else {
            continue;
        };
        let offset = (r.timestamp - starts[w]).num_milliseconds() as f64 / 1e3;
        let reqs = streams.get_mut(&(r.region_id, r.sku_id.clone(), w)).expect("pooled key");
        reqs.extend(expand_units(r).map(|(_, district)| Request { timestamp: offset, type_id: district }));
    }
    streams
        .into_iter()
        .map(|((region_id, sku_id, week), mut reqs)| {
            reqs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            Ok(PooledWeek { region_id, week, sku_id, sequence: ArrivalSequence::new(reqs)? })
        })
        .collect()
}

/// Weeks 0 and 1 of every SKU train, week 2 tests. SKUs lacking any of the
/// three weeks are dropped with a warning.
pub fn split_train_test(pooled: &[PooledWeek], m: usize) -> Result<(ScenarioSet, ScenarioSet)> {
    let mut by_sku: BTreeMap<(u32, &str), [Option<&ArrivalSequence>; 3]> = BTreeMap::new();
    for p in pooled {
        if p.week < 3 {
            by_sku.entry((p.region_id, p.sku_id.as_str())).or_default()[p.week] = Some(&p.sequence);
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ((region, sku), weeks) in by_sku {
        match weeks {
            [Some(a), Some(b), Some(c)] => {
                train.push(a.clone());
                train.push(b.clone());
                test.push(c.clone());
            }
            _ => log::warn!("sku {sku} in region {region} lacks one of the three weeks; excluded"),
        }
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("no SKU has all three weeks".into()));
    }
    Ok((empirical_scenarios(train, m)?, empirical_scenarios(test, m)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub week_starts: Vec<String>,
    /// Pooled SKUs per region.
    pub pooled: BTreeMap<u32, usize>,
}

/// Pools SKUs per region and returns each region's star data (`n_fdc` is
/// the largest district id seen in the region).
pub fn ingest(records: &[OrderRecord], filter: &PoolFilter) -> Result<(Vec<RegionData>, IngestReport)> {
    let starts = full_weeks(records, 3)?;
    let pooled = pool_skus(records, filter)?;
    let weeks = build_weeks(records, &pooled, 3)?;
    let mut report = IngestReport {
        records: records.len(),
        week_starts: starts.iter().map(|s| s.format(TIMESTAMP_FORMAT).to_string()).collect(),
        pooled: BTreeMap::new(),
    };
    let mut regions = Vec::new();
    let region_ids: BTreeSet<u32> = pooled.iter().map(|p| p.region_id).collect();
    for region in region_ids {
        let m = records.iter().filter(|r| r.region_id == region).map(|r| r.district_id).max().unwrap_or(0) + 1;
        let mine: Vec<PooledWeek> = weeks.iter().filter(|w| w.region_id == region).cloned().collect();
        let (train, test) = split_train_test(&mine, m)?;
        report.pooled.insert(region, test.len());
        regions.push(RegionData { name: format!("region-{region}"), n_fdc: m - 1, train, test });
    }
    Ok((regions, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub regions: usize,
    pub n_fdc: usize,
    pub n_skus: usize,
    /// Mean weekly units per district, RDC district first.
    pub weekly_mean: Vec<f64>,
    /// Variance is `mean + overdispersion * mean^2`; zero gives exact counts.
    pub overdispersion: f64,
    pub weeks: usize,
    pub seed: u64,
    /// First day of the log; 2018-03-05 is a Monday.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 3, 5).expect("valid date")
}

impl SynthSpec {
    /// Three regions of four FDCs, weekly mean 30 split evenly.
    pub fn standard(seed: u64) -> Self {
        SynthSpec {
            regions: 3,
            n_fdc: 4,
            n_skus: 10,
            weekly_mean: vec![6.0; 5],
            overdispersion: 0.05,
            weeks: 3,
            seed,
            start: default_start(),
        }
    }
}

fn weekly_count(mean: f64, overdispersion: f64, rng: &mut crate::rng::Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if overdispersion <= 0.0 {
        return mean.round() as u64;
    }
    let shape = 1.0 / overdispersion;
    let rate = Gamma::new(shape, mean / shape).expect("positive parameters").sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

/// Single-unit orders with negative-binomial weekly counts per district and
/// uniform timestamps within each week, sorted by time.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<OrderRecord>> {
    if spec.weekly_mean.len() != spec.n_fdc + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} weekly means for {} districts",
            spec.weekly_mean.len(),
            spec.n_fdc + 1
        )));
    }
    if spec.overdispersion < 0.0 || spec.weekly_mean.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidArgument("means and overdispersion must be non-negative".into()));
    }
    let origin = spec.start.and_hms_opt(0, 0, 0).expect("midnight exists");
    let mut records = Vec::new();
    for region in 0..spec.regions {
        for sku in 0..spec.n_skus {
            let sku_id = format!("sku-{sku:04}");
            for week in 0..spec.weeks {
                let id = ((region as u64) << 40) | ((sku as u64) << 16) | week as u64;
                let mut rng = stream(derive_seed(spec.seed, id), 0);
                for (district, &mean) in spec.weekly_mean.iter().enumerate() {
                    let count = weekly_count(mean, spec.overdispersion, &mut rng);
                    for _ in 0..count {
                        let secs = week as i64 * WEEK_SECONDS + rng.gen_range(0..WEEK_SECONDS);
                        records.push(OrderRecord {
                            sku_id: sku_id.clone(),
                            timestamp: origin + Duration::seconds(secs),
                            region_id: region as u32,
                            district_id: district,
                            quantity: 1,
                        });
                    }
                }
            }
        }
    }
    records.sort_by(|a, b| {
        (a.timestamp, a.region_id, &a.sku_id, a.district_id).cmp(&(b.timestamp, b.region_id, &b.sku_id, b.district_id))
    });
    Ok(records)
}
