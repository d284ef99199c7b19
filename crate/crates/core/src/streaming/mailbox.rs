//! One-slot handoff between the ingest thread and the processing loop.

use std::sync::{Condvar, Mutex};

/// What `push` does when the slot is occupied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPolicy {
    /// Overwrite: the consumer always gets the newest frame.
    LatestWins,
    /// Wait for the consumer to empty the slot. Nothing is dropped.
    Block,
}

#[derive(Debug)]
struct State<T> {
    slot: Option<(u64, T)>,
    closed: bool,
    overwritten: u64,
}

/// A single-slot mailbox of sequence-numbered items.
#[derive(Debug)]
pub struct Mailbox<T> {
    policy: DropPolicy,
    state: Mutex<State<T>>,
    changed: Condvar,
}

impl<T> Mailbox<T> {
    pub fn new(policy: DropPolicy) -> Self {
        Self {
            policy,
            state: Mutex::new(State {
                slot: None,
                closed: false,
                overwritten: 0,
            }),
            changed: Condvar::new(),
        }
    }

    /// Stores `item`. Returns false once the mailbox is closed.
    pub fn push(&self, seq: u64, item: T) -> bool {
        let mut st = self.state.lock().unwrap();
        if self.policy == DropPolicy::Block {
            while st.slot.is_some() && !st.closed {
                st = self.changed.wait(st).unwrap();
            }
        }
        if st.closed {
            return false;
        }
        if st.slot.replace((seq, item)).is_some() {
            st.overwritten += 1;
        }
        self.changed.notify_all();
        true
    }

    /// Takes the current item, blocking while the slot is empty. `None` once
    /// the mailbox is closed and drained.
    pub fn take(&self) -> Option<(u64, T)> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.slot.take() {
                self.changed.notify_all();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.changed.wait(st).unwrap();
        }
    }

    /// The current item without blocking.
    pub fn try_take(&self) -> Option<(u64, T)> {
        let item = self.state.lock().unwrap().slot.take();
        self.changed.notify_all();
        item
    }

    /// No more pushes. A pending item can still be taken.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.changed.notify_all();
    }

    /// Items replaced before anyone took them.
    pub fn overwritten(&self) -> u64 {
        self.state.lock().unwrap().overwritten
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;
    use std::thread;

    use super::*;

    #[test]
    fn newest_wins() {
        let m = Mailbox::new(DropPolicy::LatestWins);
        for i in 1..=3 {
            m.push(i, i * 10);
        }
        assert_eq!(m.try_take(), Some((3, 30)));
        assert_eq!(m.try_take(), None);
        assert_eq!(m.overwritten(), 2);
    }

    #[test]
    fn take_blocks_until_push() {
        let m = Arc::new(Mailbox::new(DropPolicy::LatestWins));
        let m2 = Arc::clone(&m);
        let consumer = thread::spawn(move || m2.take());
        thread::sleep(std::time::Duration::from_millis(20));
        m.push(1, "f1");
        assert_eq!(consumer.join().unwrap(), Some((1, "f1")));
    }

    #[test]
    fn close_drains_then_ends() {
        let m = Mailbox::new(DropPolicy::LatestWins);
        m.push(7, ());
        m.close();
        assert!(!m.push(8, ()));
        assert_eq!(m.take(), Some((7, ())));
        assert_eq!(m.take(), None);
    }

    #[test]
    fn blocking_policy_loses_nothing() {
        let m = Arc::new(Mailbox::new(DropPolicy::Block));
        let m2 = Arc::clone(&m);
        let producer = thread::spawn(move || {
            for i in 0..500u64 {
                m2.push(i, i);
            }
            m2.close();
        });
        let mut got = Vec::new();
        while let Some((seq, _)) = m.take() {
            got.push(seq);
        }
        producer.join().unwrap();
        assert_eq!(got, (0..500).collect::<Vec<_>>());
        assert_eq!(m.overwritten(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Push,
            Take,
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![Just(Op::Push), Just(Op::Take)]
        }

        proptest! {
            // Sequential model: a slot holding the newest pushed index.
            #[test]
            fn matches_one_slot_model(ops in proptest::collection::vec(op(), 0..200)) {
                let m = Mailbox::new(DropPolicy::LatestWins);
                let mut model: Option<u64> = None;
                let mut next = 0u64;
                let mut last_taken: Option<u64> = None;
                for op in ops {
                    match op {
                        Op::Push => {
                            m.push(next, next);
                            model = Some(next);
                            next += 1;
                        }
                        Op::Take => {
                            let got = m.try_take().map(|(s, _)| s);
                            prop_assert_eq!(got, model.take());
                            if let Some(g) = got {
                                prop_assert_eq!(g, next - 1);
                                prop_assert!(last_taken.is_none_or(|l| g > l));
                                last_taken = Some(g);
                            }
                        }
                    }
                }
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            // Concurrent interleavings: taken sequence numbers only grow and
            // never fall behind a push that finished before the take.
            #[test]
            fn concurrent_takes_are_monotone(n in 1u64..400, spin in 0u32..50) {
                let m = Arc::new(Mailbox::new(DropPolicy::LatestWins));
                let pushed = Arc::new(std::sync::atomic::AtomicU64::new(0));
                let (m2, p2) = (Arc::clone(&m), Arc::clone(&pushed));
                let producer = thread::spawn(move || {
                    for i in 0..n {
                        m2.push(i, i);
                        p2.store(i + 1, std::sync::atomic::Ordering::SeqCst);
                        for _ in 0..spin { std::hint::spin_loop(); }
                    }
                    m2.close();
                });
                let mut last: Option<u64> = None;
                loop {
                    let before = pushed.load(std::sync::atomic::Ordering::SeqCst);
                    let Some((seq, _)) = m.take() else { break };
                    prop_assert!(last.is_none_or(|l| seq > l));
                    // Every push completed before the take began is at most `seq`.
                    prop_assert!(seq + 1 >= before);
                    last = Some(seq);
                }
                producer.join().unwrap();
                prop_assert_eq!(last, Some(n - 1));
            }
        }
    }
}
