//! Random small solver instances.

use std::collections::BTreeSet;

use hyperwire::event::{components, Domain, Kind, Mode};
use hyperwire::operator::OperatorSpec;
use hyperwire::solver::CapabilityId;
use hyperwire::EventType;
use proptest::prelude::*;

/// Small random instance: a pool of at most 8 types, at most 10 operators.
#[derive(Debug, Clone)]
pub struct Instance {
    pub catalog: Vec<OperatorSpec>,
    pub caps: Vec<(CapabilityId, EventType)>,
    pub target: EventType,
    pub depth: u32,
}

pub fn arb_instance() -> impl Strategy<Value = Instance> {
    let kinds = prop::sample::select(vec![Kind::Axis, Kind::Rotation, Kind::Position]);
    let modes = prop::sample::select(vec![Mode::Absolute, Mode::Relative]);
    let multi = (kinds.clone(), 2u8..=3, modes.clone())
        .prop_map(|(k, a, m)| EventType::new(k, a, Domain::UnitSigned, m).unwrap());
    let single = (kinds, modes).prop_map(|(k, m)| EventType::new(k, 1, Domain::UnitSigned, m).unwrap());
    (
        prop::collection::vec(multi, 1..=2),
        prop::collection::vec(single, 0..=3),
    )
        .prop_flat_map(|(multis, singles)| {
            let mut pool: BTreeSet<EventType> = BTreeSet::new();
            for m in &multis {
                pool.insert(*m);
                pool.insert(components(m).unwrap()[0]);
            }
            pool.extend(singles);
            let pool: Vec<EventType> = pool.into_iter().take(8).collect();
            let n = pool.len();
            let structural = prop::collection::vec(any::<bool>(), 2 * multis.len());
            let casts = prop::collection::vec(
                (
                    prop::collection::vec(0..n, 1..=2),
                    0..n,
                    0u32..=2,
                    0u8..3,
                ),
                2..=8,
            );
            let caps = prop::collection::vec(0..n, 1..=3);
            (
                Just(pool),
                Just(multis),
                structural,
                casts,
                caps,
                0..n,
                1u32..=4,
            )
        })
        .prop_map(|(pool, multis, structural, casts, cap_idx, target, depth)| {
            let mut catalog = Vec::new();
            for (i, m) in multis.iter().enumerate() {
                if structural[2 * i] {
                    catalog.push(OperatorSpec::split(*m));
                }
                if structural[2 * i + 1] {
                    catalog.push(OperatorSpec::merge(*m));
                }
            }
            for (inputs, out, cost, rule) in casts {
                let inputs: Vec<EventType> = inputs.iter().map(|&i| pool[i]).collect();
                if inputs == [pool[out]] {
                    continue;
                }
                catalog.push(OperatorSpec::cast(&format!("rule{rule}"), inputs, pool[out], cost));
            }
            catalog.truncate(10);
            catalog.sort_by(|a, b| a.id.cmp(&b.id));
            catalog.dedup_by(|a, b| a.id == b.id);
            let caps = cap_idx
                .iter()
                .enumerate()
                .map(|(i, &p)| (format!("cap{i}"), pool[p]))
                .collect();
            Instance {
                catalog,
                caps,
                target: pool[target],
                depth,
            }
        })
}

