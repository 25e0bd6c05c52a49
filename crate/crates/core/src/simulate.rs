//! Discrete-event simulation of limbo latency under the release engine.
//!
//! Each source designation produces a Poisson stream of reports. Arrivals
//! drive a real [`ReleaseEngine`] on a virtual clock; when escalation is on,
//! a maintenance tick fires once per granularity unit. Latency is the time
//! from arrival to the release that published the report, in days, and is
//! attributed to the designation the report came from.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoDesignation, GeoError, Resolution};
use crate::release::{LevelThresholds, PendingReport, PolicyError, ReleaseBatch, ReleaseEngine, ReleasePolicy};
use crate::report::ReportId;
use crate::time::{Granularity, Timestamp, SECONDS_PER_DAY};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("horizon must be positive (got {0} days)")]
    Horizon(f64),
    #[error("rate for {designation} must be finite and ≥ 0 (got {rate})")]
    Rate { designation: String, rate: f64 },
    #[error("resolution mix must be non-negative and sum to 1 (sums to {0})")]
    Mix(f64),
    #[error(transparent)]
    Designation(#[from] GeoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSource {
    pub country: String,
    #[serde(default)]
    pub province: Option<String>,
    #[serde(default)]
    pub city: Option<String>,
    pub rate_per_day: f64,
}

impl ArrivalSource {
    pub fn designation(&self) -> Result<GeoDesignation, GeoError> {
        GeoDesignation::from_parts(&self.country, self.province.as_deref(), self.city.as_deref(), None)
    }
}

/// Probability that a report is submitted at each resolution. A report never
/// gets finer than its source designation; finer draws are coarsened to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionMix {
    pub country: f64,
    pub province: f64,
    pub city: f64,
}

impl ResolutionMix {
    fn validate(&self) -> Result<(), SimError> {
        let parts = [self.country, self.province, self.city];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::Mix(sum));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Resolution {
        let u: f64 = rng.random();
        if u < self.country {
            Resolution::Country
        } else if u < self.country + self.province {
            Resolution::Province
        } else {
            Resolution::City
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    pub sources: Vec<ArrivalSource>,
    #[serde(default)]
    pub resolution_mix: Option<ResolutionMix>,
}

/// Either one `k` for all levels or `{country, province, city}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Uniform(u32),
    PerLevel(LevelThresholds),
}

impl From<KSetting> for LevelThresholds {
    fn from(k: KSetting) -> Self {
        match k {
            KSetting::Uniform(k) => LevelThresholds::uniform(k),
            KSetting::PerLevel(t) => t,
        }
    }
}

/// The `simulate` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub designations: Vec<ArrivalSource>,
    pub k: KSetting,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub escalation_after: Option<u32>,
    pub horizon_days: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resolution_mix: Option<ResolutionMix>,
}

impl SimConfig {
    pub fn model(&self) -> ArrivalModel {
        ArrivalModel { sources: self.designations.clone(), resolution_mix: self.resolution_mix }
    }

    pub fn policy(&self) -> ReleasePolicy {
        ReleasePolicy { k: self.k.into(), granularity: self.granularity, escalation_after: self.escalation_after }
    }

    pub fn run(&self) -> Result<LatencyReport, SimError> {
        simulate(&self.model(), &self.policy(), self.horizon_days, self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub arrivals: u64,
    pub released: u64,
    pub pending: u64,
    /// Over released reports only; `None` if nothing was released.
    pub mean_days: Option<f64>,
    pub median_days: Option<f64>,
    pub max_days: Option<f64>,
    pub fraction_pending: f64,
}

impl LatencyStats {
    fn from_samples(arrivals: u64, mut latencies: Vec<f64>) -> Self {
        latencies.sort_by(f64::total_cmp);
        let released = latencies.len() as u64;
        let n = latencies.len();
        let median = match n {
            0 => None,
            _ if n % 2 == 1 => Some(latencies[n / 2]),
            _ => Some((latencies[n / 2 - 1] + latencies[n / 2]) / 2.0),
        };
        Self {
            arrivals,
            released,
            pending: arrivals - released,
            mean_days: (n > 0).then(|| latencies.iter().sum::<f64>() / n as f64),
            median_days: median,
            max_days: latencies.last().copied(),
            fraction_pending: if arrivals == 0 { 0.0 } else { (arrivals - released) as f64 / arrivals as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignationLatency {
    pub designation: GeoDesignation,
    pub rate_per_day: f64,
    #[serde(flatten)]
    pub stats: LatencyStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub horizon_days: f64,
    pub seed: u64,
    pub policy: ReleasePolicy,
    pub overall: LatencyStats,
    pub per_designation: Vec<DesignationLatency>,
    /// Keyed by the resolution reports were submitted at.
    pub per_resolution: BTreeMap<Resolution, LatencyStats>,
    pub batches: u64,
    pub escalated_moves: u64,
}

pub const CSV_COLUMNS: [&str; 9] =
    ["scope", "key", "arrivals", "released", "pending", "mean_days", "median_days", "max_days", "fraction_pending"];

impl LatencyReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut row = |scope: &str, key: &str, s: &LatencyStats| {
            w.write_record([
                scope,
                key,
                &s.arrivals.to_string(),
                &s.released.to_string(),
                &s.pending.to_string(),
                &opt(s.mean_days),
                &opt(s.median_days),
                &opt(s.max_days),
                &format!("{:.6}", s.fraction_pending),
            ])
            .expect("in-memory write");
        };
        row("overall", "all", &self.overall);
        for d in &self.per_designation {
            row("designation", &d.designation.to_string(), &d.stats);
        }
        for (r, s) in &self.per_resolution {
            row("resolution", r.as_str(), s);
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Tick,
    Arrival(usize),
}

#[derive(Debug)]
struct Event {
    at: f64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.kind.cmp(&self.kind))
    }
}

/// Virtual clock origin; any day boundary works.
const ORIGIN: i64 = 1_388_534_400;

pub fn simulate(
    model: &ArrivalModel,
    policy: &ReleasePolicy,
    horizon_days: f64,
    seed: u64,
) -> Result<LatencyReport, SimError> {
    if !(horizon_days.is_finite() && horizon_days > 0.0) {
        return Err(SimError::Horizon(horizon_days));
    }
    if let Some(mix) = &model.resolution_mix {
        mix.validate()?;
    }
    let mut sources = Vec::with_capacity(model.sources.len());
    for s in &model.sources {
        let d = s.designation()?;
        if !(s.rate_per_day.is_finite() && s.rate_per_day >= 0.0) {
            return Err(SimError::Rate { designation: d.to_string(), rate: s.rate_per_day });
        }
        sources.push(d);
    }
    let engine = ReleaseEngine::new(*policy, Some(seed), Timestamp::from_unix(ORIGIN))?;
    let day = f64::from(SECONDS_PER_DAY);
    let horizon = horizon_days * day;

    let mut streams: Vec<(ChaCha8Rng, Option<Exp<f64>>)> = model
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            (rng, (s.rate_per_day > 0.0).then(|| Exp::new(s.rate_per_day / day).expect("positive rate")))
        })
        .collect();
    let mut id_rng = ChaCha8Rng::seed_from_u64(seed);

    let mut queue = BinaryHeap::new();
    for (i, (rng, exp)) in streams.iter_mut().enumerate() {
        if let Some(exp) = exp {
            queue.push(Event { at: exp.sample(rng), kind: EventKind::Arrival(i) });
        }
    }
    let tick = f64::from(policy.granularity.secs());
    if policy.escalation_after.is_some() {
        queue.push(Event { at: tick, kind: EventKind::Tick });
    }

    // report id -> (source, submitted resolution, arrival time)
    let mut in_limbo: HashMap<ReportId, (usize, Resolution, f64)> = HashMap::new();
    let mut arrivals_by_source = vec![0u64; sources.len()];
    let mut arrivals_by_res: BTreeMap<Resolution, u64> = BTreeMap::new();
    let mut lat_by_source: Vec<Vec<f64>> = vec![Vec::new(); sources.len()];
    let mut lat_by_res: BTreeMap<Resolution, Vec<f64>> = BTreeMap::new();
    let mut batches = 0u64;
    let mut escalated_moves = 0u64;

    let mut record = |batch: ReleaseBatch, now: f64, in_limbo: &mut HashMap<ReportId, (usize, Resolution, f64)>| {
        batches += 1;
        for r in batch.reports {
            let (src, res, at) = in_limbo.remove(&r.report_id).expect("released report was pending");
            let latency = (now - at) / day;
            lat_by_source[src].push(latency);
            lat_by_res.entry(res).or_default().push(latency);
        }
    };

    while let Some(ev) = queue.pop() {
        if ev.at > horizon {
            break;
        }
        let now_ts = Timestamp::from_unix(ORIGIN + ev.at.floor() as i64);
        match ev.kind {
            EventKind::Tick => {
                let outcome = engine.escalate_stale(now_ts);
                escalated_moves += outcome.moves.len() as u64;
                for b in outcome.batches {
                    record(b, ev.at, &mut in_limbo);
                }
                queue.push(Event { at: ev.at + tick, kind: EventKind::Tick });
            }
            EventKind::Arrival(i) => {
                let (rng, exp) = &mut streams[i];
                let designation = match &model.resolution_mix {
                    Some(mix) => {
                        let r = mix.sample(rng).min(sources[i].resolution());
                        sources[i].coarsen(r).expect("never finer than source")
                    }
                    None => sources[i].clone(),
                };
                let report_id = ReportId::random(&mut id_rng);
                let res = designation.resolution();
                in_limbo.insert(report_id.clone(), (i, res, ev.at));
                arrivals_by_source[i] += 1;
                *arrivals_by_res.entry(res).or_default() += 1;
                let pending = PendingReport { report_id, selections: Default::default(), designation };
                if let Some(b) = engine.enqueue(pending, now_ts) {
                    record(b, ev.at, &mut in_limbo);
                }
                let next = ev.at + exp.expect("scheduled sources have a rate").sample(rng);
                queue.push(Event { at: next, kind: EventKind::Arrival(i) });
            }
        }
    }

    let total_arrivals: u64 = arrivals_by_source.iter().sum();
    let overall = LatencyStats::from_samples(total_arrivals, lat_by_source.iter().flatten().copied().collect());
    let per_designation = sources
        .into_iter()
        .zip(&model.sources)
        .zip(arrivals_by_source.iter().zip(lat_by_source))
        .map(|((designation, src), (&arrivals, lat))| DesignationLatency {
            designation,
            rate_per_day: src.rate_per_day,
            stats: LatencyStats::from_samples(arrivals, lat),
        })
        .collect();
    let per_resolution = arrivals_by_res
        .into_iter()
        .map(|(r, n)| (r, LatencyStats::from_samples(n, lat_by_res.remove(&r).unwrap_or_default())))
        .collect();

    Ok(LatencyReport {
        horizon_days,
        seed,
        policy: *policy,
        overall,
        per_designation,
        per_resolution,
        batches,
        escalated_moves,
    })
}
