//! Labeling service for ranked designs: hands out queued documents to
//! workers, resolves their annotations by agreement and refits the
//! sentiment model on resolved labels.

pub mod api;
pub mod board;
pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use topicdesign::corpus::{Corpus, DocumentMeta};
use topicdesign::harness::{learning_metrics, LearningOptions};

pub use api::router;
pub use board::{Annotation, Board, BoardConfig, Outcome, Policy, QueueItem, QueueSummary, Task, TaskStatus};
pub use error::ServiceError;
pub use store::Store;

/// Queue name for pool documents without a subject.
pub const DEFAULT_SUBJECT: &str = "generic";

/// One refit of the interaction model on a subject's resolved labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitPoint {
    pub subject: String,
    /// Resolved labels used.
    pub resolved: usize,
    pub nonzero_subject: usize,
    pub mean_entropy: f64,
    pub timestamp: u64,
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

struct Ledger {
    board: Board,
    store: Option<Store>,
}

/// Shared service state. Mutations go through one write lock that also
/// covers the log append; refit results are swapped in whole.
pub struct AppState {
    ledger: RwLock<Ledger>,
    refits: RwLock<Arc<Vec<RefitPoint>>>,
    refit_guard: Mutex<()>,
    pool: Arc<Corpus>,
    options: LearningOptions,
    clock: Clock,
}

/// Give every subject-free pool document the default subject so that it
/// has a queue and a subject block.
pub fn tag_default_subject(pool: Corpus, subject: &str) -> topicdesign::Result<Corpus> {
    if (0..pool.n_docs()).all(|i| pool.subject(i).is_some()) {
        return Ok(pool);
    }
    let meta: Vec<DocumentMeta> = pool
        .metas()
        .iter()
        .map(|m| DocumentMeta {
            subject: m.subject.clone().or_else(|| Some(subject.to_owned())),
            ..m.clone()
        })
        .collect();
    let rows = (0..pool.n_docs())
        .map(|i| pool.row(i).iter().map(|(j, x)| (j as u32, x)).collect())
        .collect();
    Corpus::from_sparse_rows(pool.vocab().clone(), meta, rows)
}

impl AppState {
    /// In-memory state; `pool` must already carry subjects for every queued
    /// document (see [`tag_default_subject`]).
    pub fn new(board: Board, pool: Corpus, options: LearningOptions, clock: Clock) -> Self {
        Self {
            ledger: RwLock::new(Ledger { board, store: None }),
            refits: RwLock::new(Arc::new(Vec::new())),
            refit_guard: Mutex::new(()),
            pool: Arc::new(pool),
            options,
            clock,
        }
    }

    /// State backed by a store directory, recovered from its log.
    pub fn persistent(
        mut board: Board,
        pool: Corpus,
        options: LearningOptions,
        clock: Clock,
        dir: impl AsRef<Path>,
    ) -> Result<Self, ServiceError> {
        let store = Store::open(dir, &mut board)?;
        let refits = store.load_refits()?;
        let state = Self::new(board, pool, options, clock);
        state.ledger.write().unwrap().store = Some(store);
        *state.refits.write().unwrap() = Arc::new(refits);
        Ok(state)
    }

    pub fn now(&self) -> u64 {
        (self.clock)()
    }

    pub fn next_tasks(&self, subject: &str, count: usize, worker: &str) -> Result<Vec<Task>, ServiceError> {
        let now = self.now();
        self.ledger.write().unwrap().board.next_tasks(subject, count, worker, now)
    }

    /// Validate, log, then apply.
    pub fn submit(&self, a: Annotation) -> Result<Outcome, ServiceError> {
        let mut guard = self.ledger.write().unwrap();
        let ledger = &mut *guard;
        ledger.board.check(&a)?;
        if let Some(store) = ledger.store.as_mut() {
            store.append(&a)?;
        }
        let outcome = ledger.board.apply(a)?;
        if let Some(store) = ledger.store.as_mut() {
            store.maybe_snapshot(&ledger.board)?;
        }
        Ok(outcome)
    }

    pub fn summary(&self, subject: &str) -> Result<QueueSummary, ServiceError> {
        self.ledger.read().unwrap().board.summary(subject, self.now())
    }

    pub fn tasks(&self, subject: &str) -> Result<Vec<Task>, ServiceError> {
        self.ledger.read().unwrap().board.tasks(subject, self.now())
    }

    pub fn refits(&self) -> Arc<Vec<RefitPoint>> {
        self.refits.read().unwrap().clone()
    }

    /// Refit on every resolved label off the request thread; readers keep
    /// the previous history until the new point is swapped in.
    pub async fn refit(self: &Arc<Self>, subject: &str) -> Result<RefitPoint, ServiceError> {
        let (labels, order) = {
            let ledger = self.ledger.read().unwrap();
            ledger.board.summary(subject, 0)?;
            (ledger.board.resolved_labels(), ledger.board.resolved_in_order())
        };
        if labels.is_empty() {
            return Err(ServiceError::NoResolvedLabels);
        }
        let app = Arc::clone(self);
        let subject = subject.to_owned();
        tokio::task::spawn_blocking(move || app.refit_blocking(&subject, &labels, &order))
            .await
            .map_err(|e| ServiceError::Refit(e.to_string()))?
    }

    fn refit_blocking(
        &self,
        subject: &str,
        labels: &std::collections::BTreeMap<String, f64>,
        order: &[String],
    ) -> Result<RefitPoint, ServiceError> {
        let refit_err = |e: topicdesign::Error| ServiceError::Refit(e.to_string());
        let ids = self.pool.id_index();
        let pool_labels: Vec<Option<f64>> = (0..self.pool.n_docs())
            .map(|i| labels.get(self.pool.id(i)).copied())
            .collect();
        let sequence: Vec<usize> = order.iter().filter_map(|d| ids.get(d.as_str()).copied()).collect();
        let pool = (*self.pool).clone().with_labels(&pool_labels).map_err(refit_err)?;
        let points = learning_metrics(&pool, &sequence, subject, &[sequence.len()], &self.options).map_err(refit_err)?;
        let point = &points[0];
        if point.skipped {
            return Err(ServiceError::Refit("resolved labels cover fewer than two sentiment levels".into()));
        }
        let refit = RefitPoint {
            subject: subject.to_owned(),
            resolved: sequence.len(),
            nonzero_subject: point.nonzero_subject,
            mean_entropy: point.mean_entropy,
            timestamp: self.now(),
        };
        // Serialize history updates so concurrent refits never lose a point.
        let _guard = self.refit_guard.lock().unwrap();
        if let Some(store) = self.ledger.write().unwrap().store.as_mut() {
            store.append_refit(&refit)?;
        }
        let mut next = (*self.refits()).clone();
        next.push(refit.clone());
        *self.refits.write().unwrap() = Arc::new(next);
        Ok(refit)
    }

    /// Write a snapshot now, if persistent.
    pub fn snapshot(&self) -> Result<(), ServiceError> {
        let mut guard = self.ledger.write().unwrap();
        let ledger = &mut *guard;
        if let Some(store) = ledger.store.as_mut() {
            store.snapshot(&ledger.board)?;
        }
        Ok(())
    }
}

/// Serve until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
