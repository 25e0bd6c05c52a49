//! Persistence for pending and public reports.
//!
//! The pending side stores report content and designation only; it has no
//! time column. The public side is append-only and holds exactly what the
//! export endpoints serve. A report id is never in both at once.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anonreport_core::export::sort_for_listing;
use anonreport_core::release::{Move, PendingReport, ReleaseBatch};
use anonreport_core::{GeoDesignation, PublicReport, ReportId};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}:{line}: {reason}")]
    Corrupt { file: PathBuf, line: usize, reason: String },
    #[error("store is unavailable: {0}")]
    Unavailable(String),
}

pub trait ReportStore: Send + Sync {
    /// Persists a report that is waiting for its pool to fill.
    fn record_pending(&self, report: &PendingReport) -> Result<(), StoreError>;

    /// Publishes a batch and drops its members from the pending side.
    fn record_release(&self, batch: &ReleaseBatch) -> Result<(), StoreError>;

    /// Re-keys a pending report after escalation.
    fn record_move(&self, m: &Move) -> Result<(), StoreError>;

    /// Pending reports in the order they were recorded.
    fn pending(&self) -> Vec<PendingReport>;

    /// Consistent snapshot of the public store in listing order.
    fn public(&self) -> Arc<Vec<PublicReport>>;
}

/// Pending side shared by both store kinds.
#[derive(Default)]
struct Tables {
    pending: BTreeMap<ReportId, PendingReport>,
}

impl Tables {
    fn add_pending(&mut self, r: &PendingReport) {
        self.pending.insert(r.report_id.clone(), r.clone());
    }

    fn remove_released(&mut self, batch: &ReleaseBatch) {
        for r in &batch.reports {
            self.pending.remove(&r.report_id);
        }
    }

    fn relocate(&mut self, id: &ReportId, to: &GeoDesignation) {
        if let Some(p) = self.pending.get_mut(id) {
            p.designation = to.clone();
        }
    }

    fn pending(&self) -> Vec<PendingReport> {
        self.pending.values().cloned().collect()
    }
}

/// Adds a batch to the public listing. The list is copied only while a
/// reader still holds the previous snapshot.
fn publish(snapshot: &RwLock<Arc<Vec<PublicReport>>>, batch: &ReleaseBatch) {
    let mut guard = snapshot.write();
    let public = Arc::make_mut(&mut guard);
    let start = public.len();
    public.extend(batch.reports.iter().cloned());
    sort_for_listing(&mut public[start..]);
    if start > 0 && public[start - 1].listing_key() > public[start].listing_key() {
        sort_for_listing(public);
    }
}

#[derive(Default)]
pub struct MemoryStore {
    tables: Mutex<Tables>,
    snapshot: RwLock<Arc<Vec<PublicReport>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ReportStore for MemoryStore {
    fn record_pending(&self, report: &PendingReport) -> Result<(), StoreError> {
        self.tables.lock().add_pending(report);
        Ok(())
    }

    fn record_release(&self, batch: &ReleaseBatch) -> Result<(), StoreError> {
        let mut t = self.tables.lock();
        t.remove_released(batch);
        publish(&self.snapshot, batch);
        Ok(())
    }

    fn record_move(&self, m: &Move) -> Result<(), StoreError> {
        self.tables.lock().relocate(&m.report_id, &m.to);
        Ok(())
    }

    fn pending(&self) -> Vec<PendingReport> {
        self.tables.lock().pending()
    }

    fn public(&self) -> Arc<Vec<PublicReport>> {
        self.snapshot.read().clone()
    }
}

/// One line of `pending.log`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum PendingEvent {
    Add { report: PendingReport },
    Release { ids: Vec<ReportId> },
    Move { report_id: ReportId, to: GeoDesignation },
}

pub const PENDING_LOG: &str = "pending.log";
pub const PUBLIC_LOG: &str = "public.jsonl";

/// Log-structured store in a directory:
///
/// - `public.jsonl`: append-only, one public report per line
/// - `pending.log`: add/release/move events, compacted on open
pub struct FileStore {
    dir: PathBuf,
    sync: bool,
    inner: Mutex<FileInner>,
    snapshot: RwLock<Arc<Vec<PublicReport>>>,
}

struct FileInner {
    tables: Tables,
    pending_log: BufWriter<File>,
    public_log: BufWriter<File>,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    let mut lines = BufReader::new(file).lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            // a torn final line from a crash mid-append is dropped
            Err(_) if lines.peek().is_none() => break,
            Err(e) => {
                return Err(StoreError::Corrupt { file: path.to_owned(), line: i + 1, reason: e.to_string() });
            }
        }
    }
    Ok(out)
}

fn append_open(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}

/// Reads the public log of a store directory without opening the store, in
/// listing order. Safe while a server holds the directory.
pub fn read_public(dir: impl AsRef<Path>) -> Result<Vec<PublicReport>, StoreError> {
    let mut public: Vec<PublicReport> = read_lines(&dir.as_ref().join(PUBLIC_LOG))?;
    sort_for_listing(&mut public);
    Ok(public)
}

impl FileStore {
    /// Opens (creating if needed) the store in `dir`. Pending events are
    /// replayed and the log rewritten with only the surviving reports.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, true)
    }

    /// `sync = false` skips fsync after each write (tests, bulk loads).
    pub fn open_with(dir: impl AsRef<Path>, sync: bool) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_owned();
        fs::create_dir_all(&dir)?;
        let public_path = dir.join(PUBLIC_LOG);
        let pending_path = dir.join(PENDING_LOG);

        let mut public: Vec<PublicReport> = read_lines(&public_path)?;
        sort_for_listing(&mut public);
        let released: HashSet<ReportId> = public.iter().map(|r| r.report_id.clone()).collect();

        let mut pending: BTreeMap<ReportId, PendingReport> = BTreeMap::new();
        for event in read_lines::<PendingEvent>(&pending_path)? {
            match event {
                PendingEvent::Add { report } => {
                    pending.insert(report.report_id.clone(), report);
                }
                PendingEvent::Release { ids } => {
                    for id in &ids {
                        pending.remove(id);
                    }
                }
                PendingEvent::Move { report_id, to } => {
                    if let Some(p) = pending.get_mut(&report_id) {
                        p.designation = to;
                    }
                }
            }
        }
        // a crash between the public append and the pending release event
        pending.retain(|id, _| !released.contains(id));

        let tmp = dir.join(format!("{PENDING_LOG}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for report in pending.values() {
                serde_json::to_writer(&mut w, &PendingEvent::Add { report: report.clone() }).map_err(io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &pending_path)?;

        Ok(Self {
            dir,
            sync,
            snapshot: RwLock::new(Arc::new(public)),
            inner: Mutex::new(FileInner {
                tables: Tables { pending },
                pending_log: append_open(&pending_path)?,
                public_log: append_open(&public_path)?,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_line(&self, w: &mut BufWriter<File>, value: &impl Serialize) -> Result<(), StoreError> {
        serde_json::to_writer(&mut *w, value).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        if self.sync {
            w.get_ref().sync_data()?;
        }
        Ok(())
    }
}

impl ReportStore for FileStore {
    fn record_pending(&self, report: &PendingReport) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let FileInner { tables, pending_log, .. } = &mut *inner;
        self.write_line(pending_log, &PendingEvent::Add { report: report.clone() })?;
        tables.add_pending(report);
        Ok(())
    }

    fn record_release(&self, batch: &ReleaseBatch) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let FileInner { tables, pending_log, public_log } = &mut *inner;
        // one buffered write per batch so a batch is never half-visible
        let mut buf = Vec::new();
        for r in &batch.reports {
            serde_json::to_writer(&mut buf, r).map_err(io::Error::from)?;
            buf.push(b'\n');
        }
        public_log.write_all(&buf)?;
        public_log.flush()?;
        if self.sync {
            public_log.get_ref().sync_data()?;
        }
        let ids = batch.reports.iter().map(|r| r.report_id.clone()).collect();
        self.write_line(pending_log, &PendingEvent::Release { ids })?;
        tables.remove_released(batch);
        publish(&self.snapshot, batch);
        Ok(())
    }

    fn record_move(&self, m: &Move) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let FileInner { tables, pending_log, .. } = &mut *inner;
        self.write_line(pending_log, &PendingEvent::Move { report_id: m.report_id.clone(), to: m.to.clone() })?;
        tables.relocate(&m.report_id, &m.to);
        Ok(())
    }

    fn pending(&self) -> Vec<PendingReport> {
        self.inner.lock().tables.pending()
    }

    fn public(&self) -> Arc<Vec<PublicReport>> {
        self.snapshot.read().clone()
    }
}
