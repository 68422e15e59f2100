mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use common::{arb_config, arb_dei, arb_invocation, laws};
use dexi::index::{CounterState, Dei};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_round_trip(d in arb_dei()) {
        laws::round_trip(&d)?;
    }

    #[test]
    fn prefix_laws(d in arb_dei(), cut in 0usize..6, more in arb_invocation(), count in 1u32..9) {
        laws::prefix(&d, cut, &more, count)?;
    }

    #[test]
    fn projection_idempotent_and_merge_only(d in arb_dei(), a in arb_config(), b in arb_config()) {
        laws::projection(&d, a, b)?;
    }

    #[test]
    fn counter_counts_per_key(
        calls in prop::collection::vec((0usize..3, 0usize..3), 0..40),
        paths in prop::collection::vec(arb_dei(), 1..3),
        invs in prop::collection::vec(arb_invocation(), 1..3),
    ) {
        laws::counter(&calls, &paths, &invs)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn concurrent_counters_are_unique(threads in 1usize..4, per in 1usize..20, inv in arb_invocation()) {
        let state = Arc::new(CounterState::new());
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let (state, inv) = (state.clone(), inv.clone());
                std::thread::spawn(move || (0..per).map(|_| state.counter_next(&Dei::root(), &inv).get()).collect::<Vec<_>>())
            })
            .collect();
        let all: Vec<u32> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        let distinct: BTreeSet<u32> = all.iter().copied().collect();
        prop_assert_eq!(distinct.len(), all.len());
        prop_assert_eq!(distinct, (1..=(threads * per) as u32).collect::<BTreeSet<_>>());
    }
}
