//! Phone swipe plus keyboard arrows driving a 3-axis relative motion.
//!
//! The swipe supplies two lanes through a split; the up/down arrows become
//! the third lane through a button pair.

use std::collections::BTreeMap;

use hyperwire::solver::{build_graph, solve_distinct, DEFAULT_MAX_DEPTH};
use hyperwire::{Catalog, Derivation, Event, EventType, RouteTable, Target};

fn ty(s: &str) -> EventType {
    s.parse().unwrap()
}

fn main() {
    let cat = Catalog::standard();
    let button = ty("button/1/discrete/absolute");
    let caps: BTreeMap<String, EventType> = [
        ("phone.swipe", ty("position/2/unit_signed/relative")),
        ("keys.up", button),
        ("keys.down", button),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let list: Vec<_> = caps.clone().into_iter().collect();

    let g = build_graph(&list, cat.iter(), ty("axis/3/unit_signed/relative"));
    let ws = solve_distinct(&g, "motion3d", DEFAULT_MAX_DEPTH, 10);
    // keep the layout with the swipe on x/y and the arrows on z
    let pick = ws
        .iter()
        .find(|w| match &w.derivation {
            Derivation::Op { inputs, .. } => inputs[2].capabilities().contains("keys.up"),
            Derivation::Leaf { .. } => false,
        })
        .expect("swipe + arrows wiring")
        .clone();
    println!("{}", serde_json::to_string_pretty(&pick.derivation).unwrap());

    let mut table = RouteTable::new();
    table.apply(vec![(pick, Target::new("demo", "motion3d"))], &[], &caps, &cat).unwrap();
    let swipe = ty("position/2/unit_signed/relative");
    let steps = [
        ("phone.swipe", Event::new("phone", swipe, 1, vec![0.2, -0.1]).unwrap()),
        ("keys.up", Event::new("keys", button, 2, vec![1.0]).unwrap()),
        ("keys.up", Event::new("keys", button, 3, vec![0.0]).unwrap()),
        ("keys.down", Event::new("keys", button, 4, vec![1.0]).unwrap()),
    ];
    for (cap, e) in steps {
        for d in table.on_event(cap, e) {
            println!("{cap:<12} {:?}", d.event.scalars());
        }
    }
}
