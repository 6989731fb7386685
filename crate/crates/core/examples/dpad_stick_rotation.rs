//! A gamepad d-pad and a joystick stick combined into one 3D rotation.
//!
//! Registers both devices, asks the registry for ranked candidates, routes a
//! few events through the cheapest one and prints the deliveries.
//!
//! ```sh
//! cargo run --example dpad_stick_rotation
//! ```

use hyperwire::registry::{Registry, Requirement};
use hyperwire::router::{RouteTable, Target};
use hyperwire::sim::DeviceKind;
use hyperwire::{Catalog, Event, EventType};

fn main() {
    let mut reg = Registry::new(Catalog::standard());
    reg.register_device("gamepad", DeviceKind::Gamepad.capabilities(), None, 0).unwrap();
    reg.register_device("joystick", DeviceKind::Joystick.capabilities(), None, 0).unwrap();

    let rotation: EventType = "rotation/3/unit_signed/absolute".parse().unwrap();
    reg.register_app("viewer", vec![Requirement::new("rotation3d", rotation, "camera orbit")], None)
        .unwrap();

    let candidates = reg.candidate_wirings("viewer", "rotation3d").unwrap();
    println!("{} candidates", candidates.len());
    for w in candidates.iter().take(3) {
        let caps: Vec<_> = w.derivation.capabilities().into_iter().collect();
        println!("  cost {:>2}  {} operators  {:?}", w.cost, w.derivation.operator_count(), caps);
    }

    let best = candidates[0].clone();
    let mut table = RouteTable::new();
    table
        .apply(vec![(best, Target::new("viewer", "rotation3d"))], &[], &reg.capability_types(), reg.catalog())
        .unwrap();

    let dpad: EventType = "axis/2/unit_signed/absolute".parse().unwrap();
    let stick: EventType = "rotation/1/unit_signed/relative".parse().unwrap();
    let inputs = [
        ("gamepad.dpad", Event::new("gamepad", dpad, 1, vec![1.0, 0.0]).unwrap()),
        ("joystick.stick", Event::new("joystick", stick, 2, vec![0.5]).unwrap()),
        ("joystick.stick", Event::new("joystick", stick, 3, vec![0.5]).unwrap()),
        ("gamepad.dpad", Event::new("gamepad", dpad, 4, vec![0.0, -1.0]).unwrap()),
    ];
    for (cap, e) in inputs {
        for d in table.on_event(cap, e) {
            println!("{cap:>15} -> {:?}", d.event.scalars());
        }
    }
}
