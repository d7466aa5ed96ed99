//! Labeling queues and label resolution. Pure state: every time-dependent
//! call takes `now` in milliseconds.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use topicdesign::corpus::Corpus;
use topicdesign::io::RankingRow;
use topicdesign::mnir::SentimentScale;

use crate::error::ServiceError;

pub const DEFAULT_LEASE_MS: u64 = 10 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    InProgress,
    Resolved,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub doc_id: String,
    pub subject: String,
    pub text: String,
    /// 1-based position within the subject's queue.
    pub rank: usize,
    pub status: TaskStatus,
    /// Final label, present only when resolved.
    pub label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub doc_id: String,
    pub worker_id: String,
    pub label: f64,
    /// Milliseconds since the epoch.
    pub timestamp: u64,
}

/// How annotations on one task become a final label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Two annotations; resolved if they agree, discarded otherwise.
    #[default]
    AgreeOfTwo,
    /// A disagreeing pair is requeued for a third vote; any label with two
    /// votes wins, three distinct labels discard the task.
    MajorityOfThree,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agree-of-two" | "agree_of_two" => Ok(Policy::AgreeOfTwo),
            "majority-of-three" | "majority_of_three" => Ok(Policy::MajorityOfThree),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Resolved { label: f64 },
    Discarded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardConfig {
    pub policy: Policy,
    pub lease_ms: u64,
    pub scale: SentimentScale,
}

impl Default for BoardConfig {
    fn default() -> Self {
        Self {
            policy: Policy::AgreeOfTwo,
            lease_ms: DEFAULT_LEASE_MS,
            scale: SentimentScale::default(),
        }
    }
}

/// A queued document before any annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueItem {
    pub doc_id: String,
    pub subject: String,
    pub text: String,
}

#[derive(Debug, Clone)]
struct Entry {
    task: Task,
    annotations: Vec<Annotation>,
    /// Live leases as `(worker, expiry)`.
    leases: Vec<(String, u64)>,
}

/// Persistable per-task state; leases are deliberately left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub doc_id: String,
    pub status: TaskStatus,
    pub label: Option<f64>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary {
    pub subject: String,
    pub total: usize,
    pub pending: usize,
    pub in_progress: usize,
    pub resolved: usize,
    pub discarded: usize,
    /// Tasks with at least two annotations.
    pub annotated_twice: usize,
    /// Share of `annotated_twice` whose first two labels agree.
    pub agreement_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Board {
    config: BoardConfig,
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    queues: BTreeMap<String, Vec<usize>>,
}

impl Board {
    /// `items` in design order; ranks are numbered per subject.
    pub fn new(items: Vec<QueueItem>, config: BoardConfig) -> Result<Self, ServiceError> {
        let mut entries = Vec::with_capacity(items.len());
        let mut index = HashMap::new();
        let mut queues: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for item in items {
            if index.insert(item.doc_id.clone(), entries.len()).is_some() {
                return Err(ServiceError::BadRequest(format!("document {:?} is queued twice", item.doc_id)));
            }
            let queue = queues.entry(item.subject.clone()).or_default();
            queue.push(entries.len());
            entries.push(Entry {
                task: Task {
                    doc_id: item.doc_id,
                    subject: item.subject,
                    text: item.text,
                    rank: queue.len(),
                    status: TaskStatus::Pending,
                    label: None,
                },
                annotations: Vec::new(),
                leases: Vec::new(),
            });
        }
        Ok(Self {
            config,
            entries,
            index,
            queues,
        })
    }

    /// Queue the ranked documents, taking text and subject from the pool.
    /// Documents without a subject go to `default_subject`.
    pub fn from_ranking(
        rows: &[RankingRow],
        pool: &Corpus,
        default_subject: &str,
        config: BoardConfig,
    ) -> Result<Self, ServiceError> {
        let ids = pool.id_index();
        let items = rows
            .iter()
            .map(|r| {
                let i = *ids
                    .get(r.doc_id.as_str())
                    .ok_or_else(|| ServiceError::BadRequest(format!("ranked document {:?} is not in the pool", r.doc_id)))?;
                let meta = pool.meta(i);
                Ok(QueueItem {
                    doc_id: meta.id.clone(),
                    subject: meta.subject.clone().unwrap_or_else(|| default_subject.to_owned()),
                    text: meta.text.clone(),
                })
            })
            .collect::<Result<Vec<_>, ServiceError>>()?;
        Self::new(items, config)
    }

    pub fn config(&self) -> &BoardConfig {
        &self.config
    }

    pub fn subjects(&self) -> Vec<String> {
        self.queues.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn queue(&self, subject: &str) -> Result<&[usize], ServiceError> {
        self.queues
            .get(subject)
            .map(Vec::as_slice)
            .ok_or_else(|| ServiceError::UnknownSubject(subject.to_owned()))
    }

    fn closed(entry: &Entry) -> bool {
        matches!(entry.task.status, TaskStatus::Resolved | TaskStatus::Discarded)
    }

    fn votes_needed(&self, entry: &Entry) -> usize {
        match self.config.policy {
            Policy::AgreeOfTwo => 2,
            Policy::MajorityOfThree if entry.annotations.len() >= 2 => 3,
            Policy::MajorityOfThree => 2,
        }
    }

    fn snapshot_task(entry: &Entry, now: u64) -> Task {
        let mut task = entry.task.clone();
        if task.status == TaskStatus::Pending && entry.leases.iter().any(|&(_, t)| t > now) {
            task.status = TaskStatus::InProgress;
        }
        task
    }

    /// Up to `count` lowest-rank open tasks this worker has not annotated,
    /// leased to the worker until `now + lease`.
    pub fn next_tasks(&mut self, subject: &str, count: usize, worker: &str, now: u64) -> Result<Vec<Task>, ServiceError> {
        let queue = self.queue(subject)?.to_vec();
        let expiry = now.saturating_add(self.config.lease_ms);
        let mut out = Vec::new();
        for i in queue {
            if out.len() == count {
                break;
            }
            let needed = self.votes_needed(&self.entries[i]);
            let entry = &mut self.entries[i];
            if Self::closed(entry) || entry.annotations.iter().any(|a| a.worker_id == worker) {
                continue;
            }
            entry.leases.retain(|&(_, t)| t > now);
            if let Some(lease) = entry.leases.iter_mut().find(|(w, _)| w == worker) {
                lease.1 = expiry;
            } else if entry.annotations.len() + entry.leases.len() < needed {
                entry.leases.push((worker.to_owned(), expiry));
            } else {
                continue;
            }
            out.push(Self::snapshot_task(entry, now));
        }
        Ok(out)
    }

    /// Would `a` be accepted?
    pub fn check(&self, a: &Annotation) -> Result<(), ServiceError> {
        let &i = self
            .index
            .get(&a.doc_id)
            .ok_or_else(|| ServiceError::UnknownDocument(a.doc_id.clone()))?;
        let entry = &self.entries[i];
        if self.config.scale.index_of(a.label).is_none() {
            return Err(ServiceError::OffScale(a.label));
        }
        if entry.annotations.iter().any(|b| b.worker_id == a.worker_id) {
            return Err(ServiceError::Duplicate {
                doc_id: a.doc_id.clone(),
                worker_id: a.worker_id.clone(),
            });
        }
        if Self::closed(entry) {
            return Err(ServiceError::Closed(a.doc_id.clone()));
        }
        Ok(())
    }

    /// Record an annotation and resolve the task if it has enough votes.
    pub fn apply(&mut self, a: Annotation) -> Result<Outcome, ServiceError> {
        self.check(&a)?;
        let i = self.index[&a.doc_id];
        let policy = self.config.policy;
        let entry = &mut self.entries[i];
        entry.leases.retain(|(w, _)| *w != a.worker_id);
        entry.annotations.push(a);
        let outcome = resolve(policy, &entry.annotations);
        match outcome {
            Outcome::Pending => {}
            Outcome::Resolved { label } => {
                entry.task.status = TaskStatus::Resolved;
                entry.task.label = Some(label);
                entry.leases.clear();
            }
            Outcome::Discarded => {
                entry.task.status = TaskStatus::Discarded;
                entry.leases.clear();
            }
        }
        Ok(outcome)
    }

    pub fn task(&self, doc_id: &str, now: u64) -> Option<Task> {
        self.index.get(doc_id).map(|&i| Self::snapshot_task(&self.entries[i], now))
    }

    /// Every task of a subject in rank order.
    pub fn tasks(&self, subject: &str, now: u64) -> Result<Vec<Task>, ServiceError> {
        Ok(self
            .queue(subject)?
            .iter()
            .map(|&i| Self::snapshot_task(&self.entries[i], now))
            .collect())
    }

    pub fn summary(&self, subject: &str, now: u64) -> Result<QueueSummary, ServiceError> {
        let queue = self.queue(subject)?;
        let mut s = QueueSummary {
            subject: subject.to_owned(),
            total: queue.len(),
            pending: 0,
            in_progress: 0,
            resolved: 0,
            discarded: 0,
            annotated_twice: 0,
            agreement_rate: None,
        };
        let mut agreeing = 0;
        for &i in queue {
            let entry = &self.entries[i];
            match Self::snapshot_task(entry, now).status {
                TaskStatus::Pending => s.pending += 1,
                TaskStatus::InProgress => s.in_progress += 1,
                TaskStatus::Resolved => s.resolved += 1,
                TaskStatus::Discarded => s.discarded += 1,
            }
            if let [a, b, ..] = entry.annotations.as_slice() {
                s.annotated_twice += 1;
                if a.label == b.label {
                    agreeing += 1;
                }
            }
        }
        if s.annotated_twice > 0 {
            s.agreement_rate = Some(agreeing as f64 / s.annotated_twice as f64);
        }
        Ok(s)
    }

    /// Final labels of every resolved task, by document.
    pub fn resolved_labels(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .filter_map(|e| e.task.label.map(|l| (e.task.doc_id.clone(), l)))
            .collect()
    }

    /// Resolved documents across all queues, in queue then rank order.
    pub fn resolved_in_order(&self) -> Vec<String> {
        self.queues
            .values()
            .flatten()
            .filter(|&&i| self.entries[i].task.status == TaskStatus::Resolved)
            .map(|&i| self.entries[i].task.doc_id.clone())
            .collect()
    }

    pub fn records(&self) -> Vec<TaskRecord> {
        self.entries
            .iter()
            .map(|e| TaskRecord {
                doc_id: e.task.doc_id.clone(),
                status: e.task.status,
                label: e.task.label,
                annotations: e.annotations.clone(),
            })
            .collect()
    }

    /// Overwrite annotation state from records; leases are dropped.
    pub fn restore(&mut self, records: &[TaskRecord]) -> Result<(), ServiceError> {
        for e in &mut self.entries {
            e.task.status = TaskStatus::Pending;
            e.task.label = None;
            e.annotations.clear();
            e.leases.clear();
        }
        for r in records {
            let &i = self
                .index
                .get(&r.doc_id)
                .ok_or_else(|| ServiceError::Store(format!("snapshot names unknown document {:?}", r.doc_id)))?;
            let e = &mut self.entries[i];
            e.task.status = if r.status == TaskStatus::InProgress {
                TaskStatus::Pending
            } else {
                r.status
            };
            e.task.label = r.label;
            e.annotations = r.annotations.clone();
        }
        Ok(())
    }
}

/// Outcome of a task's annotations so far under `policy`.
pub fn resolve(policy: Policy, annotations: &[Annotation]) -> Outcome {
    let labels: Vec<f64> = annotations.iter().map(|a| a.label).collect();
    match (policy, labels.as_slice()) {
        (_, [] | [_]) => Outcome::Pending,
        (_, [a, b, ..]) if a == b => Outcome::Resolved { label: *a },
        (Policy::AgreeOfTwo, _) => Outcome::Discarded,
        (Policy::MajorityOfThree, [_, _]) => Outcome::Pending,
        (Policy::MajorityOfThree, [a, b, c, ..]) => {
            if c == a || c == b {
                Outcome::Resolved { label: *c }
            } else {
                Outcome::Discarded
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(policy: Policy) -> Board {
        let items = (0..4)
            .map(|i| QueueItem {
                doc_id: format!("d{i}"),
                subject: if i < 3 { "a".into() } else { "b".into() },
                text: format!("text {i}"),
            })
            .collect();
        Board::new(
            items,
            BoardConfig {
                policy,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn ann(doc: &str, worker: &str, label: f64) -> Annotation {
        Annotation {
            doc_id: doc.into(),
            worker_id: worker.into(),
            label,
            timestamp: 0,
        }
    }

    #[test]
    fn ranks_are_per_subject() {
        let b = board(Policy::AgreeOfTwo);
        assert_eq!(b.tasks("b", 0).unwrap()[0].rank, 1);
        assert_eq!(b.tasks("a", 0).unwrap()[2].rank, 3);
    }

    #[test]
    fn leases_block_a_third_worker_and_expire() {
        let mut b = board(Policy::AgreeOfTwo);
        b.next_tasks("a", 1, "w1", 0).unwrap();
        b.next_tasks("a", 1, "w2", 0).unwrap();
        let third = b.next_tasks("a", 1, "w3", 0).unwrap();
        assert_eq!(third[0].doc_id, "d1");
        let later = b.next_tasks("a", 1, "w3", DEFAULT_LEASE_MS + 1).unwrap();
        assert_eq!(later[0].doc_id, "d0");
    }

    #[test]
    fn majority_requeues_then_resolves() {
        let mut b = board(Policy::MajorityOfThree);
        b.apply(ann("d0", "w1", 1.0)).unwrap();
        assert_eq!(b.apply(ann("d0", "w2", -1.0)).unwrap(), Outcome::Pending);
        assert_eq!(b.next_tasks("a", 1, "w3", 0).unwrap()[0].doc_id, "d0");
        assert_eq!(b.apply(ann("d0", "w3", -1.0)).unwrap(), Outcome::Resolved { label: -1.0 });
    }

    #[test]
    fn closed_tasks_reject_annotations() {
        let mut b = board(Policy::AgreeOfTwo);
        b.apply(ann("d0", "w1", 1.0)).unwrap();
        b.apply(ann("d0", "w2", 0.0)).unwrap();
        assert!(matches!(b.apply(ann("d0", "w3", 1.0)), Err(ServiceError::Closed(_))));
    }

    #[test]
    fn restore_round_trips() {
        let mut b = board(Policy::AgreeOfTwo);
        b.apply(ann("d0", "w1", 1.0)).unwrap();
        b.apply(ann("d0", "w2", 1.0)).unwrap();
        b.apply(ann("d3", "w1", 0.0)).unwrap();
        let mut c = board(Policy::AgreeOfTwo);
        c.restore(&b.records()).unwrap();
        assert_eq!(b.records(), c.records());
    }
}
