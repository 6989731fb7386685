//! The built-in operators applied by hand: split, eager merge, the button
//! pair cast and the integrating relative-to-absolute cast.

use hyperwire::operator::{apply_cast, apply_merge, apply_split};
use hyperwire::{Catalog, Event, EventType, OperatorState};

fn main() {
    let cat = Catalog::standard();
    println!("{} operators in the standard catalog", cat.len());

    let pos: EventType = "position/2/unit_unsigned/absolute".parse().unwrap();
    let split = cat.get(&format!("split:{pos}")).unwrap();
    let merge = cat.get(&format!("merge:{pos}")).unwrap();
    let e = Event::new("touch", pos, 10, vec![0.25, 0.75]).unwrap();
    let parts = apply_split(split, &e).unwrap();
    for p in &parts {
        println!("split  {} {:?}", p.event_type, p.scalars());
    }

    // unseen lanes read as zero until they are updated
    let mut held = OperatorState::new(merge);
    let first = apply_merge(merge, &mut held, &parts[1], 1).unwrap().unwrap();
    println!("merge  after lane 1 {:?}", first.scalars());
    let both = apply_merge(merge, &mut held, &parts[0], 0).unwrap().unwrap();
    println!("merge  after lane 0 {:?}", both.scalars());

    let button: EventType = "button/1/discrete/absolute".parse().unwrap();
    let pair = cat
        .get(&format!("button_pair:{button}+{button}>axis/1/unit_signed/absolute"))
        .unwrap();
    let mut st = OperatorState::new(pair);
    let press = |lane, v: f64| Event::new("keys", button, 0, vec![v]).map(|e| (lane, e)).unwrap();
    for (lane, e) in [press(1, 1.0), press(0, 1.0), press(1, 0.0)] {
        let out = apply_cast(pair, &mut st, &e, lane).unwrap();
        println!("pair   lane {lane} = {} -> {:?}", e.scalars()[0], out.scalars());
    }

    let rel: EventType = "rotation/1/unit_signed/relative".parse().unwrap();
    let abs: EventType = "rotation/1/unit_signed/absolute".parse().unwrap();
    let integrate = cat.get(&format!("relative_to_absolute:{rel}>{abs}")).unwrap();
    let mut acc = OperatorState::new(integrate);
    for delta in [1.0, 1.0, -0.5] {
        let e = Event::new("stick", rel, 0, vec![delta]).unwrap();
        let out = apply_cast(integrate, &mut acc, &e, 0).unwrap();
        println!("integrate {delta:+} -> {:?}", out.scalars());
    }
}
