mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use examguard::encoder::Label;
use examguard::ipdetector::{
    project_points, shuffle_set, DecisionReason, FlagReason, IpAddress, IpError, IpStore, QuestionBank,
    QuestionSetPool, SharedIpStore,
};
use examguard::numerics::Prng;
use proptest::prelude::*;

fn pool(n: usize) -> QuestionSetPool {
    QuestionSetPool::generate(&QuestionBank::placeholder(20, 4), n, 9).unwrap()
}

fn ip(s: &str) -> IpAddress {
    s.parse().unwrap()
}

#[test]
fn addresses_parse_and_render() {
    let a = ip("175.116.139.44");
    assert_eq!(a.to_string(), "175.116.139.44");
    assert_eq!(a.subnet24(), [175, 116, 139]);
    for bad in ["1.2.3", "1.2.3.256", "a.b.c.d", "1.2.3.4.5", ""] {
        assert!(bad.parse::<IpAddress>().is_err(), "{bad}");
    }
    assert_eq!(serde_json::to_string(&a).unwrap(), "\"175.116.139.44\"");
}

#[test]
fn repeat_ip_gets_a_different_set() {
    let p = pool(4);
    let mut store = IpStore::new();
    let mut rng = Prng::new(1);
    let twin = ip("211.243.246.3");
    let first = store.check_in(twin, None, &p, &mut rng).unwrap();
    assert!(!first.flagged);
    assert_eq!(first.reason, DecisionReason::None);
    let second = store.check_in(twin, None, &p, &mut rng).unwrap();
    assert!(second.flagged);
    assert_eq!(second.reason, DecisionReason::RepeatIp);
    assert_ne!(second.set_id, first.set_id);
    let third = store.check_in(twin, None, &p, &mut rng).unwrap();
    assert_eq!(third.reason, DecisionReason::PriorFlag);
    let entry = store.get(&twin).unwrap();
    assert_eq!(entry.check_in_count, 3);
    assert_eq!(entry.flag_reason, Some(FlagReason::RepeatIp));
}

#[test]
fn exhausted_pool_cycles() {
    let p = pool(2);
    let mut store = IpStore::new();
    let mut rng = Prng::new(4);
    let a = ip("1.1.1.1");
    let ids: Vec<String> = (0..5)
        .map(|_| store.check_in(a, None, &p, &mut rng).unwrap().set_id)
        .collect();
    for w in ids.windows(3) {
        assert_ne!(w[0], w[1]);
        assert_eq!(w[0], w[2]);
    }
}

#[test]
fn small_pools_are_refused() {
    let mut store = IpStore::new();
    let mut rng = Prng::new(4);
    let p = pool(1);
    store.check_in(ip("1.1.1.1"), None, &p, &mut rng).unwrap();
    assert!(matches!(
        store.check_in(ip("1.1.1.1"), None, &p, &mut rng),
        Err(IpError::PoolExhausted(1))
    ));
    assert!(matches!(
        store.flag_ip(&ip("9.9.9.9"), FlagReason::Manual),
        Err(IpError::Unknown(_))
    ));
}

#[test]
fn a_candidate_changing_address_is_flagged() {
    let p = pool(4);
    let mut store = IpStore::new();
    let mut rng = Prng::new(2);
    let first = store.check_in(ip("1.1.1.1"), Some("alice"), &p, &mut rng).unwrap();
    let moved = store.check_in(ip("2.2.2.2"), Some("alice"), &p, &mut rng).unwrap();
    assert!(moved.flagged);
    assert_ne!(moved.set_id, first.set_id);
    assert_eq!(
        store.get(&ip("2.2.2.2")).unwrap().flag_reason,
        Some(FlagReason::IpChange)
    );
    assert!(!store.is_flagged(&ip("1.1.1.1")));
}

#[test]
fn flags_keep_their_first_reason() {
    let p = pool(3);
    let mut store = IpStore::new();
    let mut rng = Prng::new(2);
    let a = ip("3.3.3.3");
    store.check_in(a, None, &p, &mut rng).unwrap();
    store.flag_ip(&a, FlagReason::BehaviorSuspected).unwrap();
    store.flag_ip(&a, FlagReason::Manual).unwrap();
    assert_eq!(store.get(&a).unwrap().flag_reason, Some(FlagReason::BehaviorSuspected));
    let d = store.check_in(a, None, &p, &mut rng).unwrap();
    assert_eq!(d.reason, DecisionReason::PriorFlag);
}

#[test]
fn store_persists() {
    let p = pool(4);
    let mut store = IpStore::new();
    let mut rng = Prng::new(2);
    for s in ["1.1.1.1", "2.2.2.2", "1.1.1.1"] {
        store.check_in(ip(s), Some("x"), &p, &mut rng).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    store.save(&path).unwrap();
    assert_eq!(IpStore::load(&path).unwrap(), store);
    assert!(IpStore::from_json("{\"1.2.3\": {}}").is_err());
}

#[test]
fn concurrent_check_ins_are_serialized() {
    let p = Arc::new(pool(4));
    let shared = Arc::new(SharedIpStore::new(IpStore::new()));
    let ips: Vec<IpAddress> = (0..5).map(|i| IpAddress::new(10, 0, 0, i)).collect();
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let (p, shared, ips) = (p.clone(), shared.clone(), ips.clone());
            std::thread::spawn(move || {
                let mut rng = Prng::new(t);
                for k in 0..50 {
                    shared
                        .check_in(ips[(k + t as usize) % ips.len()], None, &p, &mut rng)
                        .unwrap();
                }
            })
        })
        .collect();
    handles.into_iter().for_each(|h| h.join().unwrap());
    let store = Arc::try_unwrap(shared).unwrap().into_inner();
    let total: u64 = store.iter().map(|(_, e)| e.check_in_count).sum();
    assert_eq!(total, 400);
    for (_, e) in store.iter() {
        assert_eq!(e.assigned_set_ids.len() as u64, e.check_in_count);
        assert!(e.assigned_set_ids.windows(2).all(|w| w[0] != w[1]));
        assert!(e.first_seen < 400);
    }
}

#[test]
fn sets_are_permutations_of_the_bank() {
    let bank = QuestionBank::placeholder(20, 4);
    let set = shuffle_set(&bank, "A", 3);
    assert_eq!(set, shuffle_set(&bank, "A", 3));
    assert_ne!(set.question_order, shuffle_set(&bank, "A", 4).question_order);
    let mut order = set.question_order.clone();
    order.sort_unstable();
    assert_eq!(order, (0..20).collect::<Vec<_>>());
    for (pos, choices) in set.choice_orders.iter().enumerate() {
        let mut c = choices.clone();
        c.sort_unstable();
        assert_eq!(c, vec![0, 1, 2, 3]);
        let q = &bank.questions()[set.question_order[pos]];
        assert_eq!(choices[set.answer_position(&bank, pos)], q.answer_index);
    }
    let big = pool(28);
    let ids: Vec<&str> = big.ids().collect();
    assert_eq!((ids[0], ids[25], ids[26], ids[27]), ("A", "Z", "AA", "AB"));
}

#[test]
fn projection_preserves_octet_geometry() {
    let sample = common::lms_sample();
    let labelled: Vec<(IpAddress, Label)> = sample
        .samples()
        .iter()
        .map(|s| (s.raw.as_ref().unwrap().ip, s.label))
        .collect();
    let points = project_points(&labelled).unwrap();
    assert_eq!(points.len(), 6);
    // Two components of a 4-d cloud: projected distances never exceed the originals.
    let pos: BTreeMap<IpAddress, (f64, f64)> = points.iter().map(|p| (p.ip, (p.x, p.y))).collect();
    for a in pos.keys() {
        for b in pos.keys() {
            let d_orig: f64 = a
                .octets()
                .iter()
                .zip(b.octets())
                .map(|(x, y)| (f64::from(*x) - f64::from(y)).powi(2) / 255.0 / 255.0)
                .sum::<f64>()
                .sqrt();
            let (pa, pb) = (pos[a], pos[b]);
            let d_proj = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
            assert!(d_proj <= d_orig + 1e-12);
        }
    }
    let centroid: (f64, f64) = points.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.x, acc.1 + p.y));
    assert!(centroid.0.abs() < 1e-12 && centroid.1.abs() < 1e-12);
}

proptest! {
    #[test]
    fn check_in_postconditions(seed in any::<u64>(), n_sets in 2usize..6, steps in prop::collection::vec(0u8..8, 1..80)) {
        let p = pool(n_sets);
        let mut store = IpStore::new();
        let mut rng = Prng::new(seed);
        for s in steps {
            let a = IpAddress::new(192, 168, 0, s);
            let before = store.get(&a).cloned();
            let d = store.check_in(a, None, &p, &mut rng).unwrap();
            let after = store.get(&a).unwrap();
            match before {
                None => {
                    prop_assert!(!d.flagged);
                    prop_assert_eq!(after.check_in_count, 1);
                }
                Some(prev) => {
                    prop_assert!(d.flagged && after.flagged);
                    let reason = if prev.flagged { DecisionReason::PriorFlag } else { DecisionReason::RepeatIp };
                    prop_assert_eq!(d.reason, reason);
                    // Distinct from every earlier set while unused ones remain.
                    if prev.assigned_set_ids.len() < n_sets {
                        prop_assert!(!prev.assigned_set_ids.contains(&d.set_id));
                    } else {
                        prop_assert_ne!(prev.assigned_set_ids.last().unwrap(), &d.set_id);
                    }
                }
            }
            prop_assert!(p.get(&d.set_id).is_some());
        }
    }
}
