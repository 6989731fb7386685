#![allow(dead_code)]

pub mod arb;
pub mod instances;
pub mod procs;
pub mod replay;

use hyperwire::operator::Catalog;
use hyperwire::solver::{CapabilityId, Derivation};
use hyperwire::EventType;

pub fn t(s: &str) -> EventType {
    s.parse().unwrap()
}

pub fn caps(list: &[(&str, &str)]) -> Vec<(CapabilityId, EventType)> {
    list.iter().map(|(id, ty)| (id.to_string(), t(ty))).collect()
}

pub fn leaf(id: &str, ty: &str) -> Derivation {
    Derivation::leaf(id, t(ty))
}

pub fn op(cat: &Catalog, id: &str, port: usize, inputs: Vec<Derivation>) -> Derivation {
    Derivation::op(cat.get(id).unwrap_or_else(|| panic!("no operator {id}")), port, inputs)
}

/// merge(reinterpret(split.0(dpad)), reinterpret(split.1(dpad)), relative_to_absolute(stick))
pub fn dpad_stick_wiring(cat: &Catalog, dpad: &str, stick: &str) -> Derivation {
    let dpad_ty = "axis/2/unit_signed/absolute";
    let lane = |port| {
        op(
            cat,
            "reinterpret:axis/1/unit_signed/absolute>rotation/1/unit_signed/absolute",
            0,
            vec![op(cat, &format!("split:{dpad_ty}"), port, vec![leaf(dpad, dpad_ty)])],
        )
    };
    let integrated = op(
        cat,
        "relative_to_absolute:rotation/1/unit_signed/relative>rotation/1/unit_signed/absolute",
        0,
        vec![leaf(stick, "rotation/1/unit_signed/relative")],
    );
    op(
        cat,
        "merge:rotation/3/unit_signed/absolute",
        0,
        vec![lane(0), lane(1), integrated],
    )
}

/// merge(reinterpret(split.0(swipe)), reinterpret(split.1(swipe)), button_pair(down, up))
pub fn swipe_keys_wiring(cat: &Catalog) -> Derivation {
    swipe_keys_wiring_with(cat, "swipe", "down", "up")
}

pub fn swipe_keys_wiring_with(cat: &Catalog, swipe: &str, down: &str, up: &str) -> Derivation {
    let swipe_ty = "position/2/unit_signed/relative";
    let lane = |port| {
        op(
            cat,
            "reinterpret:position/1/unit_signed/relative>axis/1/unit_signed/relative",
            0,
            vec![op(cat, &format!("split:{swipe_ty}"), port, vec![leaf(swipe, swipe_ty)])],
        )
    };
    let button = "button/1/discrete/absolute";
    let pair = op(
        cat,
        &format!("button_pair:{button}+{button}>axis/1/unit_signed/relative"),
        0,
        vec![leaf(down, button), leaf(up, button)],
    );
    op(cat, "merge:axis/3/unit_signed/relative", 0, vec![lane(0), lane(1), pair])
}

