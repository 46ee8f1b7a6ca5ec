//! Audit hook for ground-truth label reads on the training path.
//!
//! Objective evaluations (loss, gradient, training) resolve labels through a
//! single chokepoint; when an audit scope is active on the current thread,
//! every ground-truth read that was not satisfied by a label override is
//! recorded by sample id. Tests use this to prove that self-annotated runs
//! never train on the ground truth of queried points. Outside a scope the
//! hook is a no-op.

use std::cell::RefCell;
use std::collections::BTreeSet;

thread_local! {
    static ACTIVE: RefCell<Option<BTreeSet<u64>>> = const { RefCell::new(None) };
}

/// Record a ground-truth label read observed on the objective path.
pub(crate) fn record_ground_truth_read(sample_id: u64) {
    ACTIVE.with(|slot| {
        if let Some(set) = slot.borrow_mut().as_mut() {
            set.insert(sample_id);
        }
    });
}

/// Run `f` with auditing enabled on this thread and return its result along
/// with the set of sample ids whose ground-truth labels fed an objective.
pub fn with_audit<T>(f: impl FnOnce() -> T) -> (T, BTreeSet<u64>) {
    ACTIVE.with(|slot| *slot.borrow_mut() = Some(BTreeSet::new()));
    let value = f();
    let reads = ACTIVE.with(|slot| slot.borrow_mut().take().unwrap_or_default());
    (value, reads)
}
