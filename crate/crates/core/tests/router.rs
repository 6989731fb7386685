use std::collections::BTreeMap;

use hyperwire::operator::{Catalog, OperatorKind};
use hyperwire::router::*;
use proptest::prelude::*;

mod common;
use common::replay::*;
use common::*;

#[test]
fn two_device_rotation_compiles_to_shared_split() {
    let cat = Catalog::standard();
    let w = compile(rotation(&cat), Target::new("viewer", "rot"), &available(), &cat).unwrap();
    let count = |k| w.operators().filter(|s| s.kind == k).count();
    assert_eq!(count(OperatorKind::Split), 1);
    assert_eq!(count(OperatorKind::Merge), 1);
    // two reinterprets and the integrator
    assert_eq!(count(OperatorKind::Cast), 3);
}

#[test]
fn dpad_event_yields_one_rotation() {
    let cat = Catalog::standard();
    let mut table = RouteTable::new();
    table
        .apply(vec![(rotation(&cat), Target::new("viewer", "rot"))], &[], &available(), &cat)
        .unwrap();
    let out = table.on_event("pad.dpad", ev(DPAD, 10, vec![0.5, -0.5]));
    assert_eq!(out.len(), 1);
    let d = &out[0];
    assert_eq!(d.event.event_type, t("rotation/3/unit_signed/absolute"));
    assert_eq!(d.event.scalars(), &[0.5, -0.5, 0.0]);
    assert_eq!(d.event.source_id, "rot");
    assert_eq!(d.target, Target::new("viewer", "rot"));

    let out = table.on_event("joy.stick", ev(STICK, 11, vec![1.0]));
    assert_eq!(out[0].event.scalars(), &[0.5, -0.5, 0.01]);
    let out = table.on_event("joy.stick", ev(STICK, 12, vec![-0.5]));
    let z = out[0].event.scalars()[2];
    assert!((z - 0.005).abs() < 1e-12);
}

#[test]
fn duplicate_wirings_keep_separate_state() {
    let cat = Catalog::standard();
    let mut table = RouteTable::new();
    let target = Target::new("viewer", "rot");
    let (ids, _) = table
        .apply(vec![(rotation(&cat), target.clone())], &[], &available(), &cat)
        .unwrap();
    table.on_event("joy.stick", ev(STICK, 0, vec![1.0]));
    let (more, _) = table
        .apply(vec![(rotation(&cat), target)], &[], &available(), &cat)
        .unwrap();
    let out = table.on_event("joy.stick", ev(STICK, 1, vec![1.0]));
    let z: BTreeMap<WiringId, f64> = out.iter().map(|d| (d.wiring_id, d.event.scalars()[2])).collect();
    assert!((z[&ids[0]] - 0.02).abs() < 1e-12);
    assert!((z[&more[0]] - 0.01).abs() < 1e-12);
}

#[test]
fn reconfigure_processes_pending_events_first() {
    let cat = Catalog::standard();
    let mut table = RouteTable::new();
    let (ids, _) = table
        .apply(vec![(button_axis(&cat), Target::new("app", "lever"))], &[], &available(), &cat)
        .unwrap();
    table.enqueue("pad.a", ev(BUTTON, 0, vec![1.0]));
    let v = table.version();
    let (_, flushed) = table.reconfigure(Vec::new(), &ids).unwrap();
    assert_eq!(flushed.len(), 1);
    assert_eq!(flushed[0].version, v);
    assert_eq!(table.version(), v + 1);
    assert!(table.on_event("pad.a", ev(BUTTON, 1, vec![1.0])).is_empty());
    assert_eq!(table.unrouted(), 1);
}

#[test]
fn failed_reconfigure_keeps_queued_events() {
    let cat = Catalog::standard();
    let mut table = RouteTable::new();
    table
        .apply(vec![(button_axis(&cat), Target::new("app", "lever"))], &[], &available(), &cat)
        .unwrap();
    table.enqueue("pad.b", ev(BUTTON, 0, vec![1.0]));
    assert!(table.reconfigure(Vec::new(), &[WiringId(42)]).is_err());
    let out = table.drain();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].event.scalars(), &[1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn replay_is_deterministic(steps in prop::collection::vec(step(), 0..60)) {
        prop_assert_eq!(replay(&steps, true, true), replay(&steps, true, true));
    }

    #[test]
    fn wirings_do_not_affect_each_other(steps in prop::collection::vec(step(), 0..60)) {
        let alone = replay(&steps, false, false);
        let shared = replay(&steps, true, true);
        prop_assert_eq!(for_requirement(&alone, "rot"), for_requirement(&shared, "rot"));
    }

    #[test]
    fn every_event_sees_a_single_version(steps in prop::collection::vec(step(), 0..60)) {
        let ds = replay(&steps, true, true);
        let mut by_seq: BTreeMap<u64, u64> = BTreeMap::new();
        let mut last = 0;
        for d in &ds {
            prop_assert!(d.version >= last);
            last = d.version;
            let v = *by_seq.entry(d.seq).or_insert(d.version);
            prop_assert_eq!(v, d.version);
        }
    }

    #[test]
    fn deliveries_match_requirement_types(steps in prop::collection::vec(step(), 0..60)) {
        for d in replay(&steps, true, false) {
            let want = if d.target.requirement_id == "rot" {
                t("rotation/3/unit_signed/absolute")
            } else {
                t("axis/1/unit_signed/absolute")
            };
            prop_assert_eq!(d.event.event_type, want);
            prop_assert!(d.event.is_valid());
        }
    }
}
