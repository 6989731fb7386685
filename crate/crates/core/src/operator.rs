//! Split, merge and cast operators: the hyperedges of the wiring hypergraph
//! together with their runtime semantics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{components, Domain, Event, EventType, Kind, Mode, Payload};

pub type OpId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Split,
    Merge,
    Cast,
}

/// Built-in cast rules. Catalogs may name rules this runtime does not know;
/// those fail at application time with [`OperatorError::UnknownCast`].
pub mod rules {
    /// Two buttons (negative, positive) to a signed unit axis.
    pub const BUTTON_PAIR: &str = "button_pair";
    pub const BUTTON_TO_TRIGGER: &str = "button_to_trigger";
    /// `2x - 1`
    pub const UNSIGNED_TO_SIGNED: &str = "unsigned_to_signed";
    /// `(x + 1) / 2`
    pub const SIGNED_TO_UNSIGNED: &str = "signed_to_unsigned";
    /// Integrates deltas into a clamped accumulator, scaled by the `gain` param.
    pub const RELATIVE_TO_ABSOLUTE: &str = "relative_to_absolute";
    /// Payload-preserving change of kind.
    pub const REINTERPRET: &str = "reinterpret";
}

/// Gain used by the standard catalog's integrating casts.
pub const DEFAULT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: OpId,
    pub kind: OperatorKind,
    /// Cast rule name; absent for split and merge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    pub inputs: Vec<EventType>,
    pub outputs: Vec<EventType>,
    #[serde(default)]
    pub stateful: bool,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_cost")]
    pub cost: u32,
}

fn default_cost() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("operator {op} expected {expected}, got {got}")]
    TypeMismatch {
        op: OpId,
        expected: EventType,
        got: EventType,
    },
    #[error("operator {op} has no lane {lane}")]
    LaneOutOfRange { op: OpId, lane: usize },
    #[error("operator {op} is not a {expected:?}")]
    WrongKind { op: OpId, expected: OperatorKind },
    #[error("unknown cast rule `{rule}` on {op}")]
    UnknownCast { op: OpId, rule: String },
    #[error("invalid operator {op}: {reason}")]
    Invalid { op: OpId, reason: String },
    #[error("operator {op} received a malformed payload")]
    Payload { op: OpId },
}

impl OperatorSpec {
    pub fn split(input: EventType) -> Self {
        let outputs = components(&input).expect("split of an atomic type");
        OperatorSpec {
            id: format!("split:{input}"),
            kind: OperatorKind::Split,
            rule: None,
            inputs: vec![input],
            outputs,
            stateful: false,
            params: BTreeMap::new(),
            cost: 1,
        }
    }

    pub fn merge(output: EventType) -> Self {
        let inputs = components(&output).expect("merge into an atomic type");
        OperatorSpec {
            id: format!("merge:{output}"),
            kind: OperatorKind::Merge,
            rule: None,
            inputs,
            outputs: vec![output],
            stateful: true,
            params: BTreeMap::new(),
            cost: 1,
        }
    }

    pub fn cast(rule: &str, inputs: Vec<EventType>, output: EventType, cost: u32) -> Self {
        let joined = inputs
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("+");
        let stateful = inputs.len() > 1 || rule == rules::RELATIVE_TO_ABSOLUTE;
        OperatorSpec {
            id: format!("{rule}:{joined}>{output}"),
            kind: OperatorKind::Cast,
            rule: Some(rule.to_string()),
            inputs,
            outputs: vec![output],
            stateful,
            params: BTreeMap::new(),
            cost,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    /// Checks the signature invariants of the operator kind.
    pub fn validate(&self) -> Result<(), OperatorError> {
        let invalid = |reason: &str| OperatorError::Invalid {
            op: self.id.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            OperatorKind::Split => {
                let [input] = self.inputs[..] else {
                    return Err(invalid("split takes exactly one input"));
                };
                if components(&input).ok().as_ref() != Some(&self.outputs) {
                    return Err(invalid("split outputs must be the input's components"));
                }
            }
            OperatorKind::Merge => {
                let [output] = self.outputs[..] else {
                    return Err(invalid("merge has exactly one output"));
                };
                if !(2..=3).contains(&self.inputs.len())
                    || components(&output).ok().as_ref() != Some(&self.inputs)
                {
                    return Err(invalid("merge inputs must be the output's components"));
                }
            }
            OperatorKind::Cast => {
                if !(1..=2).contains(&self.inputs.len()) || self.outputs.len() != 1 {
                    return Err(invalid("cast takes one or two inputs and one output"));
                }
                if self.inputs == self.outputs {
                    return Err(invalid("cast must change the type"));
                }
                if self.rule.is_none() {
                    return Err(invalid("cast without a rule"));
                }
            }
        }
        if self.cost == 0 && self.kind != OperatorKind::Cast {
            return Err(invalid("only casts may be free"));
        }
        Ok(())
    }

    fn check_input(&self, lane: usize, e: &Event) -> Result<(), OperatorError> {
        let expected = *self
            .inputs
            .get(lane)
            .ok_or_else(|| OperatorError::LaneOutOfRange {
                op: self.id.clone(),
                lane,
            })?;
        if e.event_type != expected {
            return Err(OperatorError::TypeMismatch {
                op: self.id.clone(),
                expected,
                got: e.event_type,
            });
        }
        if !e.is_valid() {
            return Err(OperatorError::Payload {
                op: self.id.clone(),
            });
        }
        Ok(())
    }

    fn expect_kind(&self, kind: OperatorKind) -> Result<(), OperatorError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(OperatorError::WrongKind {
                op: self.id.clone(),
                expected: kind,
            })
        }
    }
}

/// Per-instance runtime state: held payload per input lane plus the
/// accumulator of integrating casts.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorState {
    held: Vec<Vec<f64>>,
    acc: Vec<f64>,
}

impl OperatorState {
    /// Zeroed lanes; integrators start at the domain midpoint for
    /// `UnitUnsigned` and at zero otherwise.
    pub fn new(spec: &OperatorSpec) -> Self {
        let held = spec
            .inputs
            .iter()
            .map(|t| vec![t.zero(); if t.is_text() { 0 } else { t.arity() as usize }])
            .collect();
        let acc = match spec.outputs.first() {
            Some(out) if spec.rule.as_deref() == Some(rules::RELATIVE_TO_ABSOLUTE) => {
                let start = if out.domain() == Domain::UnitUnsigned {
                    0.5
                } else {
                    0.0
                };
                vec![start; out.arity() as usize]
            }
            _ => Vec::new(),
        };
        OperatorState { held, acc }
    }

    pub fn held(&self, lane: usize) -> Option<&[f64]> {
        self.held.get(lane).map(Vec::as_slice)
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }

    /// Overrides the integrator accumulator (tests, profile restore).
    pub fn set_accumulator(&mut self, acc: Vec<f64>) {
        self.acc = acc;
    }

    /// Stores `e` as the latest value of `lane` without emitting.
    pub fn hold(&mut self, spec: &OperatorSpec, lane: usize, e: &Event) -> Result<(), OperatorError> {
        spec.check_input(lane, e)?;
        self.held[lane] = e.scalars().to_vec();
        Ok(())
    }

    /// Computes the output of a merge or cast from the held lanes and, for
    /// integrating casts, the input `delta` lane.
    pub fn fire(&mut self, spec: &OperatorSpec, timestamp: u64) -> Result<Event, OperatorError> {
        let out = spec.outputs[0];
        let values = match spec.kind {
            OperatorKind::Merge => self.held.concat(),
            OperatorKind::Cast => self.cast_values(spec)?,
            OperatorKind::Split => {
                return Err(OperatorError::WrongKind {
                    op: spec.id.clone(),
                    expected: OperatorKind::Cast,
                })
            }
        };
        let values: Vec<f64> = values.into_iter().map(|x| out.domain().clamp(x)).collect();
        Event::new(spec.id.clone(), out, timestamp, values).map_err(|_| OperatorError::Payload {
            op: spec.id.clone(),
        })
    }

    fn cast_values(&mut self, spec: &OperatorSpec) -> Result<Vec<f64>, OperatorError> {
        let rule = spec.rule.as_deref().unwrap_or_default();
        let first = &self.held[0];
        Ok(match rule {
            rules::BUTTON_PAIR => {
                let neg = first.first().copied().unwrap_or(0.0);
                let pos = self
                    .held
                    .get(1)
                    .and_then(|l| l.first())
                    .copied()
                    .unwrap_or(0.0);
                vec![pos - neg]
            }
            rules::BUTTON_TO_TRIGGER | rules::REINTERPRET => first.clone(),
            rules::UNSIGNED_TO_SIGNED => first.iter().map(|x| 2.0 * x - 1.0).collect(),
            rules::SIGNED_TO_UNSIGNED => first.iter().map(|x| (x + 1.0) / 2.0).collect(),
            rules::RELATIVE_TO_ABSOLUTE => {
                let gain = spec.param("gain").unwrap_or(DEFAULT_GAIN);
                let domain = spec.outputs[0].domain();
                for (acc, delta) in self.acc.iter_mut().zip(first) {
                    *acc = domain.clamp(*acc + gain * delta);
                }
                self.acc.clone()
            }
            other => {
                return Err(OperatorError::UnknownCast {
                    op: spec.id.clone(),
                    rule: other.to_string(),
                })
            }
        })
    }
}

/// Projects `e` onto its components, one event per component in canonical
/// order, all carrying `e`'s timestamp.
pub fn apply_split(spec: &OperatorSpec, e: &Event) -> Result<Vec<Event>, OperatorError> {
    spec.expect_kind(OperatorKind::Split)?;
    spec.check_input(0, e)?;
    let Payload::Scalars(xs) = &e.payload else {
        return Err(OperatorError::Payload {
            op: spec.id.clone(),
        });
    };
    Ok(spec
        .outputs
        .iter()
        .zip(xs)
        .map(|(t, &x)| Event {
            source_id: spec.id.clone(),
            event_type: *t,
            timestamp: e.timestamp,
            payload: Payload::Scalars(vec![x]),
        })
        .collect())
}

/// Eager-zero merge: updates `lane` and emits the concatenation of all held
/// lanes, with unseen lanes reading as zero.
pub fn apply_merge(
    spec: &OperatorSpec,
    state: &mut OperatorState,
    e: &Event,
    lane: usize,
) -> Result<Option<Event>, OperatorError> {
    spec.expect_kind(OperatorKind::Merge)?;
    state.hold(spec, lane, e)?;
    state.fire(spec, e.timestamp).map(Some)
}

/// Applies a cast to an update on `lane` (always 0 for single-input casts).
pub fn apply_cast(
    spec: &OperatorSpec,
    state: &mut OperatorState,
    e: &Event,
    lane: usize,
) -> Result<Event, OperatorError> {
    spec.expect_kind(OperatorKind::Cast)?;
    state.hold(spec, lane, e)?;
    state.fire(spec, e.timestamp)
}

fn ty(kind: Kind, arity: u8, domain: Domain, mode: Mode) -> Option<EventType> {
    EventType::new(kind, arity, domain, mode).ok()
}

/// The built-in operator catalog, sorted by id.
pub fn standard_catalog() -> Vec<OperatorSpec> {
    let mut ops = Vec::new();
    let continuous = [Kind::Axis, Kind::Position, Kind::Rotation];

    for t in EventType::all() {
        if t.arity() >= 2 {
            ops.push(OperatorSpec::split(t));
            ops.push(OperatorSpec::merge(t));
        }
    }

    let button = ty(Kind::Button, 1, Domain::Discrete, Mode::Absolute).unwrap();
    let trigger = ty(Kind::Trigger, 1, Domain::Discrete, Mode::Absolute).unwrap();
    ops.push(OperatorSpec::cast(rules::BUTTON_TO_TRIGGER, vec![button], trigger, 1));
    for mode in Mode::ALL {
        let axis = ty(Kind::Axis, 1, Domain::UnitSigned, mode).unwrap();
        ops.push(OperatorSpec::cast(rules::BUTTON_PAIR, vec![button, button], axis, 1));
    }

    for kind in continuous {
        for arity in 1..=3 {
            for mode in Mode::ALL {
                let (Some(unsigned), Some(signed)) = (
                    ty(kind, arity, Domain::UnitUnsigned, mode),
                    ty(kind, arity, Domain::UnitSigned, mode),
                ) else {
                    continue;
                };
                ops.push(OperatorSpec::cast(rules::UNSIGNED_TO_SIGNED, vec![unsigned], signed, 1));
                ops.push(OperatorSpec::cast(rules::SIGNED_TO_UNSIGNED, vec![signed], unsigned, 1));
            }
            for domain in [Domain::UnitSigned, Domain::UnitUnsigned, Domain::Unbounded] {
                let rel = ty(kind, arity, domain, Mode::Relative).unwrap();
                let abs = ty(kind, arity, domain, Mode::Absolute).unwrap();
                ops.push(
                    OperatorSpec::cast(rules::RELATIVE_TO_ABSOLUTE, vec![rel], abs, 1)
                        .with_param("gain", DEFAULT_GAIN),
                );
            }
        }
    }

    for arity in 1..=3 {
        for domain in Domain::ALL {
            for mode in Mode::ALL {
                let axis = ty(Kind::Axis, arity, domain, mode).unwrap();
                let rot = ty(Kind::Rotation, arity, domain, mode).unwrap();
                let pos = ty(Kind::Position, arity, domain, mode).unwrap();
                ops.push(OperatorSpec::cast(rules::REINTERPRET, vec![axis], rot, 0));
                ops.push(OperatorSpec::cast(rules::REINTERPRET, vec![rot], axis, 0));
                ops.push(OperatorSpec::cast(rules::REINTERPRET, vec![pos], axis, 0));
            }
        }
    }

    ops.sort_by(|a, b| a.id.cmp(&b.id));
    ops
}

/// Catalog lookup by operator id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    ops: BTreeMap<OpId, OperatorSpec>,
}

impl Catalog {
    pub fn new(ops: impl IntoIterator<Item = OperatorSpec>) -> Result<Self, OperatorError> {
        let mut map = BTreeMap::new();
        for op in ops {
            op.validate()?;
            if map.contains_key(&op.id) {
                return Err(OperatorError::Invalid {
                    op: op.id,
                    reason: "duplicate operator id".into(),
                });
            }
            map.insert(op.id.clone(), op);
        }
        Ok(Catalog { ops: map })
    }

    pub fn standard() -> Self {
        Catalog::new(standard_catalog()).expect("standard catalog is valid")
    }

    pub fn get(&self, id: &str) -> Option<&OperatorSpec> {
        self.ops.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.ops.values()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.ops.values().collect::<Vec<_>>()).expect("catalog serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, OperatorError> {
        let ops: Vec<OperatorSpec> =
            serde_json::from_value(value.clone()).map_err(|e| OperatorError::Invalid {
                op: String::new(),
                reason: e.to_string(),
            })?;
        Catalog::new(ops)
    }
}
