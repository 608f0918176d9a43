//! parse(format(x)) == x and format(parse(format(x))) == format(x) for every
//! on-disk format, over generated valid values.

use edgesplit::comm::Rankfile;
use edgesplit::cost::Profile;
use edgesplit::model::{parse_graph, TensorSpec, WeightEntry, WeightStore};
use edgesplit::pipeline::compile;
use edgesplit::plan::ExecutionPlan;
use edgesplit::specio::{MappingSpec, PlatformSpec};
use edgesplit::zoo;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn model_graph(seed: u64) {
        let m = zoo::random_model(seed, 12);
        let text = m.graph_json();
        let g = parse_graph(&text).unwrap();
        prop_assert_eq!(&g, &m.to_graph());
        let again = edgesplit::model::Model::from_graph(g, m.weights().clone()).unwrap();
        prop_assert_eq!(again.graph_json(), text);
    }

    #[test]
    fn weights(seed: u64, extra in prop::collection::vec((1usize..4, 1usize..5), 0..4)) {
        let mut store = zoo::random_model(seed, 8).weights().clone();
        let mut r = rng(seed);
        for (i, (a, b)) in extra.into_iter().enumerate() {
            let data = (0..a * b).map(|_| f32::from_bits(r.random::<u32>() & 0x7f7f_ffff)).collect();
            store.insert(format!("extra/{i}"), WeightEntry::new(TensorSpec::new([a, b]), data).unwrap()).unwrap();
        }
        let bytes = store.encode();
        let back = WeightStore::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn mapping(seed: u64, ranks in 1usize..=5) {
        let m = zoo::random_model(seed, 12);
        let mut r = rng(seed);
        let platform = zoo::uniform_platform(3, 4, true);
        let ms = zoo::random_mapping(&m, &platform, ranks.min(m.hidden_layers().count()), &mut r);
        let text = ms.format();
        let back = MappingSpec::parse(&text).unwrap();
        prop_assert_eq!(&back, &ms);
        prop_assert_eq!(back.format(), text);
    }

    #[test]
    fn platform(seed: u64) {
        let p = zoo::random_platform(&mut rng(seed));
        let text = p.format();
        let back = PlatformSpec::parse(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.format(), text);
    }

    #[test]
    fn plan_and_rankfile(seed: u64, ranks in 1usize..=4) {
        let m = zoo::random_model(seed, 12);
        let platform = zoo::uniform_platform(4, 4, true);
        let ms = zoo::random_mapping(&m, &platform, ranks.min(m.hidden_layers().count()), &mut rng(seed));
        let c = compile(&m, &ms).unwrap();
        for p in &c.plans {
            let text = p.to_json();
            let back = ExecutionPlan::from_json(&text).unwrap();
            prop_assert_eq!(&back, p);
            prop_assert_eq!(back.to_json(), text);
        }
        let text = c.rankfile.format();
        let back = Rankfile::parse(&text).unwrap();
        prop_assert_eq!(&back, &c.rankfile);
        prop_assert_eq!(back.format(), text);
    }

    #[test]
    fn profile(seed: u64) {
        let m = zoo::random_model(seed, 10);
        let p = zoo::random_profile(&m, &["cpu1", "cpu4", "gpu", "dev0/cpu1"], &mut rng(seed));
        let text = p.format();
        let back = Profile::parse(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.format(), text);
    }
}
