//! Transport-independent service core: authenticate, validate, enqueue,
//! persist. The HTTP layer is a thin mapping onto this.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use anonreport_core::release::{PendingReport, PolicyError, ReleaseEngine, ReleasePolicy};
use anonreport_core::report::{parse_submission, SubmissionError, SubmissionViolation};
use anonreport_core::{Catalog, GeoDesignation, PublicReport, ReportId, Timestamp};
use thiserror::Error;

use crate::auth::{AuthConfig, AuthHeaders, RejectReason, Verifier};
use crate::store::{ReportStore, StoreError};

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// Settable clock for tests and replays.
#[derive(Debug)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(AtomicI64::new(start.unix()))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.unix(), Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_unix(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubmitStatus {
    Pending,
    Released,
}

impl SubmitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Released => "released",
        }
    }
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("authentication failed: {0}")]
    Auth(RejectReason),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("invalid submission")]
    Invalid(Vec<SubmissionViolation>),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaintenanceSummary {
    pub moved: usize,
    pub released_batches: usize,
}

pub struct Service {
    catalog: Arc<Catalog>,
    engine: ReleaseEngine,
    store: Arc<dyn ReportStore>,
    verifier: Verifier,
    clock: Arc<dyn Clock>,
}

impl Service {
    /// Builds the service and reloads pending reports from `store` into the
    /// release engine. `seed` fixes the batch shuffle (tests only).
    pub fn new(
        catalog: Arc<Catalog>,
        policy: ReleasePolicy,
        auth: AuthConfig,
        store: Arc<dyn ReportStore>,
        clock: Arc<dyn Clock>,
        seed: Option<u64>,
    ) -> Result<Self, PolicyError> {
        let engine = ReleaseEngine::new(policy, seed, clock.now())?;
        engine.restore(store.pending());
        Ok(Self { catalog, engine, store, verifier: Verifier::new(auth), clock })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn policy(&self) -> &ReleasePolicy {
        self.engine.policy()
    }

    pub fn public(&self) -> Arc<Vec<PublicReport>> {
        self.store.public()
    }

    /// Operator view; deliberately not exposed over HTTP.
    pub fn pending_count(&self, d: &GeoDesignation) -> usize {
        self.engine.pending_count(d)
    }

    pub fn total_pending(&self) -> usize {
        self.engine.total_pending()
    }

    pub fn submit(&self, headers: AuthHeaders<'_>, body: &[u8]) -> Result<SubmitStatus, SubmitError> {
        let now = self.clock.now();
        self.verifier.verify(headers, body, now.unix()).map_err(SubmitError::Auth)?;
        let sub = parse_submission(body, &self.catalog).map_err(|e| match e {
            SubmissionError::Malformed(m) => SubmitError::Malformed(m),
            SubmissionError::Invalid(v) => SubmitError::Invalid(v),
        })?;
        let report = PendingReport {
            report_id: ReportId::random(&mut rand::rng()),
            selections: sub.selections,
            designation: sub.designation,
        };
        let released = self.engine.enqueue_with(report, now, |admission| match admission.batch {
            Some(batch) => self.store.record_release(batch),
            None => self.store.record_pending(admission.report),
        })?;
        Ok(if released.is_some() { SubmitStatus::Released } else { SubmitStatus::Pending })
    }

    /// Escalates stale pools and persists the outcome.
    pub fn run_maintenance(&self) -> Result<MaintenanceSummary, StoreError> {
        let outcome = self.engine.escalate_stale(self.clock.now());
        for m in &outcome.moves {
            self.store.record_move(m)?;
        }
        for b in &outcome.batches {
            self.store.record_release(b)?;
        }
        Ok(MaintenanceSummary { moved: outcome.moves.len(), released_batches: outcome.batches.len() })
    }
}
