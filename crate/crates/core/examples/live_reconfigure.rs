//! Swapping a wiring while events are queued.
//!
//! Pending events are delivered under the old table version before the swap
//! takes effect, so no event straddles two versions. A sibling wiring keeps
//! its state across the swap.

use std::collections::BTreeMap;

use hyperwire::solver::{Derivation, Wiring};
use hyperwire::{Catalog, Event, EventType, RouteTable, Target};

fn ty(s: &str) -> EventType {
    s.parse().unwrap()
}

fn wiring(cat: &Catalog, req: &str, neg: &str, pos: &str, out: &str) -> Wiring {
    let button = ty("button/1/discrete/absolute");
    let op = cat.get(&format!("button_pair:{button}+{button}>{out}")).unwrap();
    let derivation = Derivation::op(
        op,
        0,
        vec![Derivation::leaf(neg, button), Derivation::leaf(pos, button)],
    );
    Wiring { requirement_id: req.into(), cost: derivation.cost(cat).unwrap(), derivation }
}

fn main() {
    let cat = Catalog::standard();
    let button = ty("button/1/discrete/absolute");
    let caps: BTreeMap<String, EventType> =
        ["pad.l", "pad.r", "pad.up", "pad.down"].iter().map(|c| (c.to_string(), button)).collect();

    let steer = wiring(&cat, "steer", "pad.l", "pad.r", "axis/1/unit_signed/absolute");
    let pitch = wiring(&cat, "pitch", "pad.down", "pad.up", "axis/1/unit_signed/absolute");
    let mut table = RouteTable::new();
    let (ids, _) = table
        .apply(
            vec![(steer, Target::new("car", "steer")), (pitch, Target::new("car", "pitch"))],
            &[],
            &caps,
            &cat,
        )
        .unwrap();
    let names = |ids: &[hyperwire::WiringId]| ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    println!("version {} with {}", table.version(), names(&ids));

    let press = |ts| Event::new("pad", button, ts, vec![1.0]).unwrap();
    table.enqueue("pad.r", press(1));
    table.enqueue("pad.up", press(2));

    // invert steering; the queued right press is still routed the old way
    let inverted = wiring(&cat, "steer", "pad.r", "pad.l", "axis/1/unit_signed/absolute");
    let (added, flushed) = table
        .apply(vec![(inverted, Target::new("car", "steer"))], &ids[..1], &caps, &cat)
        .unwrap();
    for d in &flushed {
        println!("v{} seq {} {:<5} {:?}", d.version, d.seq, d.target.requirement_id, d.event.scalars());
    }
    println!("version {} with {} replacing {}", table.version(), names(&added), ids[0]);

    table.enqueue("pad.r", press(3));
    table.enqueue("pad.down", press(4));
    for d in table.drain() {
        println!("v{} seq {} {:<5} {:?}", d.version, d.seq, d.target.requirement_id, d.event.scalars());
    }
}
