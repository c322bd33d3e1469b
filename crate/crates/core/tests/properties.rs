//! Property tests for the distribution primitives and the event queue.

use proptest::prelude::*;

use outformation::engine::{Event, EventKind};
use outformation::model::{BackoffSpec, EmpiricalPoint};
use outformation::rng::Streams;
use outformation::theory::backoff_diff_cdf;

fn backoff_spec() -> impl Strategy<Value = BackoffSpec> {
    prop_oneof![
        Just(BackoffSpec::Zero),
        (0.1f64..50.0).prop_map(|b| BackoffSpec::Uniform { b }),
        proptest::collection::vec(0.01f64..1.0, 1..6).prop_map(|raw| {
            let total: f64 = raw.iter().sum();
            let points = raw
                .iter()
                .enumerate()
                .map(|(i, w)| EmpiricalPoint { value: i as f64 * 1.5, prob: w / total })
                .collect();
            BackoffSpec::Empirical { points }
        }),
    ]
}

proptest! {
    #[test]
    fn backoff_cdf_is_monotone_and_bounded(spec in backoff_spec(), a in -60.0f64..60.0, b in -60.0f64..60.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let fl = spec.cdf(lo);
        let fh = spec.cdf(hi);
        prop_assert!(fl <= fh + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&fl));
        prop_assert!(spec.cdf(-1e9) == 0.0);
        prop_assert!((spec.cdf(1e9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backoff_samples_stay_in_support(spec in backoff_spec(), rep in 0u64..500) {
        let streams = Streams::new(17, rep);
        let s = spec.sample(&streams, 1, rep);
        prop_assert!(s >= 0.0);
        prop_assert!(s <= spec.max_support() + 1e-12);
    }

    #[test]
    fn backoff_diff_cdf_is_monotone(spec in backoff_spec(), a in -60.0f64..60.0, b in -60.0f64..60.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(backoff_diff_cdf(&spec, lo) <= backoff_diff_cdf(&spec, hi) + 1e-12);
    }

    #[test]
    fn event_queue_pops_in_total_order(perm in proptest::collection::vec(0usize..64, 64)) {
        let events: Vec<Event> = (0..64u64)
            .map(|i| Event {
                time: (i % 9) as f64 * 0.5,
                class: (i % 5) as u8 + 1,
                actor: (i % 3) as u8,
                seq: i,
                kind: EventKind::EnvChange { interval: i },
            })
            .collect();
        let mut sorted = events.clone();
        sorted.sort();

        let mut heap = std::collections::BinaryHeap::new();
        // Push in an arbitrary order driven by the permutation vector.
        let mut order: Vec<usize> = (0..events.len()).collect();
        for (i, p) in perm.iter().enumerate() {
            order.swap(i, *p % events.len());
        }
        for i in order {
            heap.push(std::cmp::Reverse(events[i].clone()));
        }
        let mut popped = Vec::new();
        while let Some(std::cmp::Reverse(e)) = heap.pop() {
            popped.push(e);
        }
        prop_assert_eq!(popped, sorted);
    }
}
