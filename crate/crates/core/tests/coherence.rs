mod common;

use common::chain::Chain;
use proptest::prelude::*;

fn check(chain: &Chain) {
    let (data, stats) = chain.run(chain.devices);
    let (host_data, _) = chain.run(["host", "host"]);
    assert_eq!(data, host_data, "{chain:?}");
    let (want, hits) = chain.expected_copies();
    let got: std::collections::BTreeMap<String, u64> = stats.copies.iter().map(|(k, c)| (k.clone(), c.count)).collect();
    assert_eq!(got, want, "{chain:?}\n{}", chain.source());
    assert_eq!(stats.elided, hits, "{chain:?}");
    assert!(stats.is_consistent());
}

#[test]
fn copies_match_simulation_on_seeded_chains() {
    let mut rng = common::data::rng(2024);
    for _ in 0..40 {
        check(&Chain::random(&mut rng));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn copies_match_simulation(seed in any::<u64>()) {
        check(&Chain::random(&mut common::data::rng(seed)));
    }
}
