//! Recorded event streams replayed through a route table holding a rotation
//! wiring and an optional lever wiring.

use std::collections::BTreeMap;

use hyperwire::operator::Catalog;
use hyperwire::router::*;
use hyperwire::solver::{CapabilityId, Wiring};
use hyperwire::{Event, EventType};
use proptest::prelude::*;

use super::*;

pub const DPAD: &str = "axis/2/unit_signed/absolute";
pub const STICK: &str = "rotation/1/unit_signed/relative";
pub const BUTTON: &str = "button/1/discrete/absolute";

pub fn available() -> BTreeMap<CapabilityId, EventType> {
    caps(&[
        ("pad.dpad", DPAD),
        ("joy.stick", STICK),
        ("pad.a", BUTTON),
        ("pad.b", BUTTON),
    ])
    .into_iter()
    .collect()
}

pub fn rotation(cat: &Catalog) -> Wiring {
    let d = dpad_stick_wiring(cat, "pad.dpad", "joy.stick");
    Wiring {
        requirement_id: "rot".into(),
        cost: d.cost(cat).unwrap() as _,
        derivation: d,
    }
}

pub fn button_axis(cat: &Catalog) -> Wiring {
    let d = op(
        cat,
        &format!("button_pair:{BUTTON}+{BUTTON}>axis/1/unit_signed/absolute"),
        0,
        vec![leaf("pad.a", BUTTON), leaf("pad.b", BUTTON)],
    );
    Wiring {
        requirement_id: "lever".into(),
        cost: d.cost(cat).unwrap() as _,
        derivation: d,
    }
}

pub fn ev(ty: &str, ts: u64, payload: Vec<f64>) -> Event {
    Event::new("dev", t(ty), ts, payload).unwrap()
}

#[derive(Debug, Clone)]
pub enum Step {
    Dpad(f64, f64),
    Stick(f64),
    A(bool),
    B(bool),
    /// Remove the lever wiring and add it back.
    Swap,
}

pub fn step() -> impl Strategy<Value = Step> {
    let unit = -1.0f64..=1.0;
    prop_oneof![
        (unit.clone(), unit.clone()).prop_map(|(x, y)| Step::Dpad(x, y)),
        unit.prop_map(Step::Stick),
        any::<bool>().prop_map(Step::A),
        any::<bool>().prop_map(Step::B),
        Just(Step::Swap),
    ]
}

pub fn feed(ts: u64, s: &Step) -> Option<(&'static str, Event)> {
    let b = |on: bool| vec![if on { 1.0 } else { 0.0 }];
    Some(match s {
        Step::Dpad(x, y) => ("pad.dpad", ev(DPAD, ts, vec![*x, *y])),
        Step::Stick(d) => ("joy.stick", ev(STICK, ts, vec![*d])),
        Step::A(on) => ("pad.a", ev(BUTTON, ts, b(*on))),
        Step::B(on) => ("pad.b", ev(BUTTON, ts, b(*on))),
        Step::Swap => return None,
    })
}

/// Replays `steps` and returns every delivery. With `swap`, the lever wiring
/// is replaced at each `Swap` step.
pub fn replay(steps: &[Step], with_lever: bool, swap: bool) -> Vec<Delivery> {
    replay_recorded(steps, with_lever, swap).0
}

/// Like [`replay`], also returning the sequence number of every enqueued event.
pub fn replay_recorded(steps: &[Step], with_lever: bool, swap: bool) -> (Vec<Delivery>, Vec<u64>) {
    let cat = Catalog::standard();
    let caps = available();
    let mut table = RouteTable::new();
    let mut add = vec![(rotation(&cat), Target::new("viewer", "rot"))];
    if with_lever {
        add.push((button_axis(&cat), Target::new("app", "lever")));
    }
    let (mut ids, _) = table.apply(add, &[], &caps, &cat).unwrap();
    let mut out = Vec::new();
    let mut seqs = Vec::new();
    for (ts, s) in steps.iter().enumerate() {
        match feed(ts as u64, s) {
            Some((cap, e)) => {
                seqs.push(table.enqueue(cap, e));
                if ts % 3 == 0 {
                    out.extend(table.drain());
                }
            }
            None if swap && with_lever => {
                let lever = ids.pop().unwrap();
                let (new, flushed) = table
                    .apply(vec![(button_axis(&cat), Target::new("app", "lever"))], &[lever], &caps, &cat)
                    .unwrap();
                out.extend(flushed);
                ids.extend(new);
            }
            None => {}
        }
    }
    out.extend(table.drain());
    for (_, w) in table.iter() {
        let c = w.counters();
        assert_eq!(c.events_in, c.delivered + c.dropped);
        assert_eq!(c.dropped, 0);
    }
    (out, seqs)
}

pub fn for_requirement(ds: &[Delivery], req: &str) -> Vec<(u64, Vec<f64>)> {
    ds.iter()
        .filter(|d| d.target.requirement_id == req)
        .map(|d| (d.seq, d.event.scalars().to_vec()))
        .collect()
}

