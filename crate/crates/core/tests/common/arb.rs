//! Proptest generators for wire messages.

use std::sync::Arc;

use hyperwire::registry::{Capability, Direction, Requirement};
use hyperwire::solver::Derivation;
use hyperwire::transport::{EventFrame, Message, Role};
use hyperwire::{EventType, Payload};
use proptest::prelude::*;

pub fn arb_type() -> impl Strategy<Value = EventType> {
    let all = EventType::all();
    (0..all.len()).prop_map(move |i| all[i])
}

pub fn arb_f64() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), -1.0f64..=1.0]
}

pub fn arb_event() -> impl Strategy<Value = EventFrame> {
    (arb_type(), any::<bool>(), "[a-z.]{1,12}", any::<u64>())
        .prop_flat_map(|(ty, is_cap, id, ts)| {
            let payload = if ty.is_text() {
                ".{0,8}".prop_map(|s| Payload::Text([s])).boxed()
            } else {
                prop::collection::vec(arb_f64(), ty.arity() as usize)
                    .prop_map(Payload::Scalars)
                    .boxed()
            };
            payload.prop_map(move |payload| EventFrame {
                capability_id: is_cap.then(|| id.clone()),
                requirement_id: (!is_cap).then(|| id.clone()),
                ty,
                ts_ns: ts,
                payload,
            })
        })
}

pub fn arb_derivation() -> impl Strategy<Value = Derivation> {
    let leaf = ("[a-z.]{1,8}", arb_type()).prop_map(|(c, ty)| Derivation::leaf(c, ty));
    leaf.prop_recursive(3, 12, 3, |inner| {
        ("[a-z:>+/_]{1,20}", 0usize..3, arb_type(), prop::collection::vec(inner, 1..4)).prop_map(
            |(op, port, ty, inputs)| Derivation::Op {
                op,
                port,
                ty,
                inputs: inputs.into_iter().map(Arc::new).collect(),
            },
        )
    })
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    let role = prop_oneof![Just(Role::Device), Just(Role::App), Just(Role::Ui)];
    let direction = prop_oneof![Just(Direction::Produces), Just(Direction::Consumes)];
    let cap = ("[a-z]{1,6}", arb_type(), direction).prop_map(|(id, ty, direction)| Capability { id, ty, direction });
    let req = ("[a-z]{1,6}", arb_type(), ".{0,10}").prop_map(|(id, ty, label)| Requirement { id, ty, label });
    prop_oneof![
        (role, ".{0,16}").prop_map(|(role, name)| Message::Hello { role, name }),
        ".{0,16}".prop_map(|assigned_id| Message::Welcome { assigned_id }),
        prop::collection::vec(cap, 0..5).prop_map(|capabilities| Message::AnnounceCaps { capabilities }),
        prop::collection::vec(req, 0..5).prop_map(|requirements| Message::AnnounceReqs { requirements }),
        arb_event().prop_map(Message::Event),
        ("[a-z0-9]{1,10}", arb_derivation())
            .prop_map(|(requirement_id, wiring)| Message::WiringSet { requirement_id, wiring }),
        Just(Message::Heartbeat {}),
        ("[a-z_]{1,10}", ".{0,30}").prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}

