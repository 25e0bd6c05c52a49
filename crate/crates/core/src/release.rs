//! Geo-temporal k-anonymous release.
//!
//! Accepted reports wait in a pending pool keyed by their exact designation.
//! Pending reports have no time attached. Once a pool holds `k` reports for
//! its resolution level, the whole pool drains into one batch. The batch is
//! shuffled and stamped with a single release time truncated to the policy
//! granularity, so within a batch neither order nor timing says anything
//! about arrival.
//!
//! Optional escalation coarsens pools that have waited too long by one
//! level and re-enqueues their reports under the parent designation.

use std::collections::{BTreeMap, HashSet};
use std::convert::Infallible;

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoDesignation, Resolution};
use crate::report::{PublicReport, ReportId};
use crate::survey::TagId;
use crate::time::{Granularity, Timestamp};

/// Release threshold per resolution level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelThresholds {
    pub country: u32,
    pub province: u32,
    pub city: u32,
}

impl LevelThresholds {
    pub const fn uniform(k: u32) -> Self {
        Self { country: k, province: k, city: k }
    }

    pub fn for_resolution(&self, r: Resolution) -> u32 {
        match r {
            Resolution::Country => self.country,
            Resolution::Province => self.province,
            Resolution::City => self.city,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("k must be at least 1 (got {level} k = 0)")]
    ZeroK { level: Resolution },
    #[error("escalation_after must be at least 1 granularity unit")]
    ZeroEscalation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleasePolicy {
    pub k: LevelThresholds,
    pub granularity: Granularity,
    /// Granularity units a pool may wait before its reports move one level up.
    pub escalation_after: Option<u32>,
}

impl Default for ReleasePolicy {
    fn default() -> Self {
        Self { k: LevelThresholds::uniform(5), granularity: Granularity::DAY, escalation_after: None }
    }
}

impl ReleasePolicy {
    pub fn with_k(k: u32) -> Self {
        Self { k: LevelThresholds::uniform(k), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for level in Resolution::ALL {
            if self.k.for_resolution(level) == 0 {
                return Err(PolicyError::ZeroK { level });
            }
        }
        if self.escalation_after == Some(0) {
            return Err(PolicyError::ZeroEscalation);
        }
        Ok(())
    }

    pub fn k_for(&self, d: &GeoDesignation) -> usize {
        self.k.for_resolution(d.resolution()) as usize
    }
}

/// A report waiting in limbo. There is deliberately no time field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendingReport {
    pub report_id: ReportId,
    #[serde(rename = "tags")]
    pub selections: std::collections::BTreeSet<TagId>,
    pub designation: GeoDesignation,
}

impl PendingReport {
    fn publish(self, released_at: Timestamp) -> PublicReport {
        PublicReport {
            report_id: self.report_id,
            selections: self.selections,
            designation: self.designation,
            released_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseBatch {
    pub designation: GeoDesignation,
    pub released_at: Timestamp,
    pub reports: Vec<PublicReport>,
}

impl ReleaseBatch {
    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }
}

/// What an enqueue is about to do, handed to the commit hook before the
/// in-memory change becomes visible.
#[derive(Debug)]
pub struct Admission<'a> {
    pub report: &'a PendingReport,
    pub batch: Option<&'a ReleaseBatch>,
}

/// One report moved to a coarser pool by escalation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub report_id: ReportId,
    pub from: GeoDesignation,
    pub to: GeoDesignation,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Escalation {
    pub moves: Vec<Move>,
    pub batches: Vec<ReleaseBatch>,
}

#[derive(Debug, Default)]
struct Pool {
    reports: Vec<PendingReport>,
    /// Granularity units this pool has existed, advanced by maintenance passes.
    age_units: u32,
}

/// Serializable engine state, for persistence checks and restarts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineState {
    pub pools: Vec<PoolState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub designation: GeoDesignation,
    pub age_units: u32,
    pub reports: Vec<PendingReport>,
}

/// The pending pools plus the batch shuffler.
///
/// `enqueue` is linearizable per designation: the check-and-drain happens
/// under the pool's map entry lock, while distinct designations proceed in
/// parallel.
pub struct ReleaseEngine {
    policy: ReleasePolicy,
    pools: DashMap<GeoDesignation, Pool>,
    rng: Mutex<ChaCha12Rng>,
    last_maintenance: Mutex<Timestamp>,
}

impl ReleaseEngine {
    /// `started_at` anchors pool ageing for escalation. With `seed = None`
    /// the shuffler is seeded from OS entropy.
    pub fn new(policy: ReleasePolicy, seed: Option<u64>, started_at: Timestamp) -> Result<Self, PolicyError> {
        policy.validate()?;
        let rng = match seed {
            Some(s) => ChaCha12Rng::seed_from_u64(s),
            None => ChaCha12Rng::from_os_rng(),
        };
        Ok(Self {
            policy,
            pools: DashMap::new(),
            rng: Mutex::new(rng),
            last_maintenance: Mutex::new(policy.granularity.truncate(started_at)),
        })
    }

    pub fn policy(&self) -> &ReleasePolicy {
        &self.policy
    }

    /// Adds `report` to its pool and drains the pool if it reached `k`.
    pub fn enqueue(&self, report: PendingReport, now: Timestamp) -> Option<ReleaseBatch> {
        match self.enqueue_with(report, now, |_| Ok::<(), Infallible>(())) {
            Ok(b) => b,
            Err(never) => match never {},
        }
    }

    /// Like [`enqueue`](Self::enqueue), but runs `commit` inside the pool
    /// lock before the change is kept. If `commit` fails the pool is left
    /// exactly as it was and the error is returned.
    pub fn enqueue_with<E>(
        &self,
        report: PendingReport,
        now: Timestamp,
        commit: impl FnOnce(Admission<'_>) -> Result<(), E>,
    ) -> Result<Option<ReleaseBatch>, E> {
        let k = self.policy.k_for(&report.designation);
        match self.pools.entry(report.designation.clone()) {
            Entry::Vacant(slot) => {
                if k <= 1 {
                    let batch = self.drain(report.designation.clone(), vec![report.clone()], now);
                    commit(Admission { report: &report, batch: Some(&batch) })?;
                    Ok(Some(batch))
                } else {
                    commit(Admission { report: &report, batch: None })?;
                    slot.insert(Pool { reports: vec![report], age_units: 0 });
                    Ok(None)
                }
            }
            Entry::Occupied(mut slot) => {
                if slot.get().reports.len() + 1 >= k {
                    let mut members = slot.get().reports.clone();
                    members.push(report.clone());
                    let batch = self.drain(report.designation.clone(), members, now);
                    commit(Admission { report: &report, batch: Some(&batch) })?;
                    slot.remove();
                    Ok(Some(batch))
                } else {
                    commit(Admission { report: &report, batch: None })?;
                    slot.get_mut().reports.push(report);
                    Ok(None)
                }
            }
        }
    }

    fn drain(&self, designation: GeoDesignation, mut members: Vec<PendingReport>, now: Timestamp) -> ReleaseBatch {
        members.shuffle(&mut *self.rng.lock());
        let released_at = self.policy.granularity.truncate(now);
        ReleaseBatch {
            designation,
            released_at,
            reports: members.into_iter().map(|r| r.publish(released_at)).collect(),
        }
    }

    /// Current pool size for `d`. Operator-only: a public pending count
    /// would leak sub-threshold arrivals.
    pub fn pending_count(&self, d: &GeoDesignation) -> usize {
        self.pools.get(d).map_or(0, |p| p.reports.len())
    }

    pub fn total_pending(&self) -> usize {
        self.pools.iter().map(|p| p.reports.len()).sum()
    }

    /// Advances pool ages to `now` and moves every pool that has waited at
    /// least `escalation_after` units one level up. Country pools stay put.
    ///
    /// Pools are processed finest first, so stale city reports can still
    /// complete a parent pool in the same pass. A report moves at most one
    /// level per pass: reports that arrived in a pool during this pass stay
    /// behind when that pool is itself escalated.
    pub fn escalate_stale(&self, now: Timestamp) -> Escalation {
        let Some(after) = self.policy.escalation_after else {
            return Escalation::default();
        };
        let elapsed = {
            let mut last = self.last_maintenance.lock();
            let tick = self.policy.granularity.truncate(now);
            if tick <= *last {
                0
            } else {
                let units = self.policy.granularity.units_between(*last, tick);
                *last = tick;
                units
            }
        };
        let mut stale = Vec::new();
        for mut pool in self.pools.iter_mut() {
            pool.age_units = pool.age_units.saturating_add(elapsed);
            if pool.age_units >= after && pool.key().resolution() != Resolution::Country {
                stale.push(pool.key().clone());
            }
        }
        stale.sort_by(|a, b| b.resolution().cmp(&a.resolution()).then_with(|| a.cmp(b)));

        let mut outcome = Escalation::default();
        let mut moved: HashSet<ReportId> = HashSet::new();
        for designation in stale {
            let Some((_, pool)) = self.pools.remove_if(&designation, |_, p| p.age_units >= after) else {
                continue;
            };
            let (stay, climb): (Vec<_>, Vec<_>) = pool.reports.into_iter().partition(|r| moved.contains(&r.report_id));
            if !stay.is_empty() {
                self.pools.insert(designation.clone(), Pool { reports: stay, age_units: 0 });
            }
            let parent = designation.parent().expect("country pools are never stale");
            for mut report in climb {
                outcome.moves.push(Move {
                    report_id: report.report_id.clone(),
                    from: designation.clone(),
                    to: parent.clone(),
                });
                moved.insert(report.report_id.clone());
                report.designation = parent.clone();
                if let Some(batch) = self.enqueue(report, now) {
                    outcome.batches.push(batch);
                }
            }
        }
        outcome
    }

    /// Snapshot of every pending pool, sorted by designation.
    pub fn state(&self) -> EngineState {
        let mut pools: BTreeMap<GeoDesignation, PoolState> = BTreeMap::new();
        for p in self.pools.iter() {
            pools.insert(
                p.key().clone(),
                PoolState { designation: p.key().clone(), age_units: p.age_units, reports: p.reports.clone() },
            );
        }
        EngineState { pools: pools.into_values().collect() }
    }

    /// Rebuilds pools from persisted pending reports, preserving their order.
    /// Pools that already meet their threshold are not drained here; the next
    /// enqueue to them releases everything.
    pub fn restore(&self, pending: impl IntoIterator<Item = PendingReport>) {
        for r in pending {
            self.pools.entry(r.designation.clone()).or_default().reports.push(r);
        }
    }
}
