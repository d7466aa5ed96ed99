use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicdesign_service::board::{resolve, TaskRecord};
use topicdesign_service::store::{read_annotations, replay};
use topicdesign_service::*;

fn board(n: usize, policy: Policy) -> Board {
    let items = (0..n)
        .map(|i| QueueItem {
            doc_id: format!("doc{i:04}"),
            subject: if i % 3 == 0 { "b".into() } else { "a".into() },
            text: String::new(),
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

/// Drive a board through the queue API until `events` annotations are
/// accepted, logging each one.
fn simulate(board: &mut Board, store: &mut Store, events: usize, seed: u64) -> Vec<Annotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers: Vec<String> = (0..8).map(|w| format!("w{w}")).collect();
    let mut log = Vec::new();
    let mut now = 0u64;
    while log.len() < events {
        now += rng.random_range(0..120_000);
        let worker = &workers[rng.random_range(0..workers.len())];
        let subject = if rng.random_bool(0.3) { "b" } else { "a" };
        let tasks = board.next_tasks(subject, rng.random_range(1..4), worker, now).unwrap();
        for t in tasks {
            // Workers sometimes walk away and let the lease lapse.
            if rng.random_bool(0.1) || log.len() == events {
                continue;
            }
            let truth = (t.rank % 3) as f64 - 1.0;
            let label = if rng.random_bool(0.75) { truth } else { rng.random_range(-1..=1) as f64 };
            let a = Annotation {
                doc_id: t.doc_id,
                worker_id: worker.clone(),
                label,
                timestamp: now,
            };
            board.check(&a).unwrap();
            store.append(&a).unwrap();
            board.apply(a.clone()).unwrap();
            store.maybe_snapshot(board).unwrap();
            log.push(a);
        }
    }
    log
}

fn closed_state(records: &[TaskRecord]) -> Vec<(String, TaskStatus, Option<f64>, usize)> {
    records
        .iter()
        .map(|r| (r.doc_id.clone(), r.status, r.label, r.annotations.len()))
        .collect()
}

fn check_replay(policy: Policy, seed: u64) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut live = board(300, policy);
    let mut store = Store::open(dir.path(), &mut live).unwrap();
    store.snapshot_every = 37;
    let log = simulate(&mut live, &mut store, 500, seed);
    assert_eq!(log.len(), 500);
    drop(store);

    // Log alone.
    let mut fresh = board(300, policy);
    replay(&mut fresh, &read_annotations(dir.path()).unwrap()).unwrap();
    assert_eq!(fresh.records(), live.records());
    assert_eq!(fresh.resolved_labels(), live.resolved_labels());

    // Snapshot plus log tail, after a torn write.
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(dir.path().join("annotations.jsonl"))
        .unwrap();
    f.write_all(br#"{"doc_id":"doc0001","worker_id":"#).unwrap();
    drop(f);
    let mut recovered = board(300, policy);
    let store = Store::open(dir.path(), &mut recovered).unwrap();
    assert_eq!(store.applied(), 500);
    assert_eq!(recovered.records(), live.records());
    assert_eq!(recovered.resolved_labels(), live.resolved_labels());

    // Replaying twice gives the same statuses.
    let mut again = board(300, policy);
    replay(&mut again, &log).unwrap();
    assert_eq!(closed_state(&again.records()), closed_state(&live.records()));
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn replay_reconstructs_agree_of_two_state() {
    check_replay(Policy::AgreeOfTwo, 1);
}

#[test]
fn replay_reconstructs_majority_state() {
    check_replay(Policy::MajorityOfThree, 2);
}

#[test]
fn resolved_tasks_carry_labels_and_agreeing_votes() {
    let dir = tempfile::tempdir().unwrap();
    let mut live = board(300, Policy::AgreeOfTwo);
    let mut store = Store::open(dir.path(), &mut live).unwrap();
    simulate(&mut live, &mut store, 500, 3);
    for r in live.records() {
        match r.status {
            TaskStatus::Resolved => {
                assert_eq!(r.annotations.len(), 2);
                assert_eq!(Some(r.annotations[0].label), r.label);
                assert_eq!(r.annotations[0].label, r.annotations[1].label);
            }
            TaskStatus::Discarded => {
                assert_eq!(r.annotations.len(), 2);
                assert!(r.label.is_none());
            }
            _ => assert!(r.annotations.len() < 2 && r.label.is_none()),
        }
        let mut workers: Vec<_> = r.annotations.iter().map(|a| &a.worker_id).collect();
        workers.sort();
        workers.dedup();
        assert_eq!(workers.len(), r.annotations.len());
    }
}

fn votes(labels: &[f64]) -> Vec<Annotation> {
    labels
        .iter()
        .enumerate()
        .map(|(w, &label)| Annotation {
            doc_id: "d".into(),
            worker_id: format!("w{w}"),
            label,
            timestamp: 0,
        })
        .collect()
}

#[test]
fn agree_of_two_table() {
    let table: [(&[f64], Outcome); 10] = [
        (&[1.0, 1.0], Outcome::Resolved { label: 1.0 }),
        (&[-1.0, -1.0], Outcome::Resolved { label: -1.0 }),
        (&[0.0, 0.0], Outcome::Resolved { label: 0.0 }),
        (&[1.0, -1.0], Outcome::Discarded),
        (&[-1.0, 1.0], Outcome::Discarded),
        (&[0.0, 1.0], Outcome::Discarded),
        (&[1.0, 0.0], Outcome::Discarded),
        (&[-1.0, 0.0], Outcome::Discarded),
        (&[1.0], Outcome::Pending),
        (&[], Outcome::Pending),
    ];
    for (labels, expected) in table {
        assert_eq!(resolve(Policy::AgreeOfTwo, &votes(labels)), expected, "{labels:?}");
        // Same verdict through the board.
        let mut b = board(1, Policy::AgreeOfTwo);
        let mut last = Outcome::Pending;
        for (w, &label) in labels.iter().enumerate() {
            last = b
                .apply(Annotation {
                    doc_id: "doc0000".into(),
                    worker_id: format!("w{w}"),
                    label,
                    timestamp: 0,
                })
                .unwrap();
        }
        assert_eq!(last, expected);
    }
}

#[test]
fn majority_of_three_table() {
    let table: [(&[f64], Outcome); 5] = [
        (&[1.0, 1.0], Outcome::Resolved { label: 1.0 }),
        (&[1.0, -1.0], Outcome::Pending),
        (&[1.0, -1.0, -1.0], Outcome::Resolved { label: -1.0 }),
        (&[1.0, 0.0, 1.0], Outcome::Resolved { label: 1.0 }),
        (&[1.0, 0.0, -1.0], Outcome::Discarded),
    ];
    for (labels, expected) in table {
        assert_eq!(resolve(Policy::MajorityOfThree, &votes(labels)), expected, "{labels:?}");
    }
}

#[test]
fn workers_never_see_their_own_tasks_again() {
    let mut b = board(20, Policy::MajorityOfThree);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for step in 0..400u64 {
        let worker = format!("w{}", rng.random_range(0..5));
        for t in b.next_tasks("a", 3, &worker, step * 1000).unwrap() {
            let rec = b.records().into_iter().find(|r| r.doc_id == t.doc_id).unwrap();
            assert!(rec.annotations.iter().all(|a| a.worker_id != worker));
            if rng.random_bool(0.8) {
                let label = rng.random_range(-1..=1) as f64;
                b.apply(Annotation {
                    doc_id: t.doc_id,
                    worker_id: worker.clone(),
                    label,
                    timestamp: step,
                })
                .unwrap();
            }
        }
    }
}

#[test]
fn malformed_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("annotations.jsonl"), "not json\n{}\n").unwrap();
    let mut b = board(3, Policy::AgreeOfTwo);
    assert!(Store::open(dir.path(), &mut b).is_err());
}
