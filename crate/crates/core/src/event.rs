//! Event types (the vertices of the wiring hypergraph) and runtime event values.
//!
//! An [`EventType`] is a structured descriptor `kind/arity/domain/mode`. Two
//! types are compatible for direct wiring only when they are structurally
//! equal; every other reconciliation goes through an explicit cast operator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Semantic class of an interaction signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Button,
    Axis,
    Position,
    Rotation,
    Text,
    Trigger,
}

/// Value range of every component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    /// `[-1, 1]`
    UnitSigned,
    /// `[0, 1]`
    UnitUnsigned,
    /// Integers.
    Discrete,
    /// Any finite real.
    Unbounded,
}

/// Whether values are states or deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Absolute,
    Relative,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Button,
        Kind::Axis,
        Kind::Position,
        Kind::Rotation,
        Kind::Text,
        Kind::Trigger,
    ];

    /// Inclusive arity bounds for this kind.
    pub fn arity_bounds(self) -> (u8, u8) {
        match self {
            Kind::Button | Kind::Text | Kind::Trigger => (1, 1),
            // Position keeps arity 1 so that split components of a 2D/3D
            // position are themselves valid types.
            Kind::Axis | Kind::Position | Kind::Rotation => (1, 3),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Kind::Button => "button",
            Kind::Axis => "axis",
            Kind::Position => "position",
            Kind::Rotation => "rotation",
            Kind::Text => "text",
            Kind::Trigger => "trigger",
        }
    }
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::UnitSigned,
        Domain::UnitUnsigned,
        Domain::Discrete,
        Domain::Unbounded,
    ];

    fn as_str(self) -> &'static str {
        match self {
            Domain::UnitSigned => "unit_signed",
            Domain::UnitUnsigned => "unit_unsigned",
            Domain::Discrete => "discrete",
            Domain::Unbounded => "unbounded",
        }
    }

    /// Whether `x` is a member of the domain. Non-finite values never are.
    pub fn contains(self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self {
            Domain::UnitSigned => (-1.0..=1.0).contains(&x),
            Domain::UnitUnsigned => (0.0..=1.0).contains(&x),
            Domain::Discrete => x.fract() == 0.0,
            Domain::Unbounded => true,
        }
    }

    /// Clamps (and for `Discrete`, rounds) `x` into the domain.
    /// NaN maps to zero, infinities to the nearest bound or `f64::MAX`.
    pub fn clamp(self, x: f64) -> f64 {
        let x = if x.is_nan() {
            0.0
        } else {
            x.clamp(f64::MIN, f64::MAX)
        };
        let y = match self {
            Domain::UnitSigned => x.clamp(-1.0, 1.0),
            Domain::UnitUnsigned => x.clamp(0.0, 1.0),
            Domain::Discrete => x.round(),
            Domain::Unbounded => x,
        };
        // normalise -0.0 so that clamping is bitwise idempotent
        if y == 0.0 {
            0.0
        } else {
            y
        }
    }
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Absolute, Mode::Relative];

    fn as_str(self) -> &'static str {
        match self {
            Mode::Absolute => "absolute",
            Mode::Relative => "relative",
        }
    }
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal) => {
        impl FromStr for $ty {
            type Err = TypeError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty>::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| TypeError::Parse(format!("unknown {} `{}`", $what, s)))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

parse_enum!(Kind, "kind");
parse_enum!(Domain, "domain");
parse_enum!(Mode, "mode");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("arity {arity} out of range for {kind}")]
    Arity { kind: Kind, arity: u8 },
    #[error("{0} requires the discrete domain")]
    Domain(Kind),
    #[error("atomic type {0} has no components")]
    Atomic(EventType),
    #[error("malformed event type: {0}")]
    Parse(String),
}

/// Descriptor of an interaction signal. Field order defines the canonical
/// structural ordering used for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventType {
    kind: Kind,
    arity: u8,
    domain: Domain,
    mode: Mode,
}

impl EventType {
    pub fn new(kind: Kind, arity: u8, domain: Domain, mode: Mode) -> Result<Self, TypeError> {
        let (lo, hi) = kind.arity_bounds();
        if !(lo..=hi).contains(&arity) {
            return Err(TypeError::Arity { kind, arity });
        }
        if matches!(kind, Kind::Button | Kind::Trigger | Kind::Text) && domain != Domain::Discrete
        {
            return Err(TypeError::Domain(kind));
        }
        Ok(EventType {
            kind,
            arity,
            domain,
            mode,
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn arity(&self) -> u8 {
        self.arity
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_text(&self) -> bool {
        self.kind == Kind::Text
    }

    /// Same kind, domain and mode with a different arity.
    pub fn with_arity(&self, arity: u8) -> Result<Self, TypeError> {
        EventType::new(self.kind, arity, self.domain, self.mode)
    }

    /// Every valid type of the lattice, in canonical order.
    pub fn all() -> Vec<EventType> {
        let mut out = Vec::new();
        for kind in Kind::ALL {
            let (lo, hi) = kind.arity_bounds();
            for arity in lo..=hi {
                for domain in Domain::ALL {
                    for mode in Mode::ALL {
                        if let Ok(t) = EventType::new(kind, arity, domain, mode) {
                            out.push(t);
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// The zero element of one component.
    pub fn zero(&self) -> f64 {
        0.0
    }

    /// Whether a payload is a valid instance of this type.
    pub fn admits(&self, payload: &Payload) -> bool {
        match payload {
            Payload::Text(_) => self.is_text(),
            Payload::Scalars(xs) => {
                !self.is_text()
                    && xs.len() == self.arity as usize
                    && xs.iter().all(|&x| self.domain.contains(x))
                    && (!matches!(self.kind, Kind::Button | Kind::Trigger)
                        || xs.iter().all(|&x| x == 0.0 || x == 1.0))
            }
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.kind, self.arity, self.domain, self.mode
        )
    }
}

impl FromStr for EventType {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let [kind, arity, domain, mode] = parts[..] else {
            return Err(TypeError::Parse(format!("expected kind/arity/domain/mode, got `{s}`")));
        };
        // reject leading zeros and signs so the textual form stays canonical
        if arity.len() != 1 || !arity.as_bytes()[0].is_ascii_digit() {
            return Err(TypeError::Parse(format!("bad arity `{arity}`")));
        }
        EventType::new(
            kind.parse()?,
            arity.parse().map_err(|_| TypeError::Parse(format!("bad arity `{arity}`")))?,
            domain.parse()?,
            mode.parse()?,
        )
    }
}

impl Serialize for EventType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Direct-wiring predicate: exact structural match only.
pub fn compatible(a: &EventType, b: &EventType) -> bool {
    a == b
}

/// Clamps a raw scalar list into `t`'s domain. `Discrete` values are rounded.
pub fn clamp_to_domain(t: &EventType, raw: &[f64]) -> Result<Vec<f64>, EventError> {
    if t.is_text() {
        return Err(EventError::TextPayload(*t));
    }
    if raw.len() != t.arity as usize {
        return Err(EventError::Arity {
            expected: t.arity as usize,
            got: raw.len(),
        });
    }
    let mut out: Vec<f64> = raw.iter().map(|&x| t.domain.clamp(x)).collect();
    if matches!(t.kind, Kind::Button | Kind::Trigger) {
        for x in &mut out {
            *x = x.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Canonical split decomposition: `arity` copies of the arity-1 variant in
/// component order x, y, z.
pub fn components(t: &EventType) -> Result<Vec<EventType>, TypeError> {
    if t.arity < 2 {
        return Err(TypeError::Atomic(*t));
    }
    let unit = t.with_arity(1)?;
    Ok(vec![unit; t.arity as usize])
}

/// Component names in canonical order.
pub const COMPONENT_NAMES: [&str; 3] = ["x", "y", "z"];

/// Event payload: scalars for every kind except `Text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Scalars(Vec<f64>),
    Text([String; 1]),
}

impl Payload {
    pub fn scalars(&self) -> Option<&[f64]> {
        match self {
            Payload::Scalars(xs) => Some(xs),
            Payload::Text(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Scalars(xs) => xs.len(),
            Payload::Text(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<Vec<f64>> for Payload {
    fn from(xs: Vec<f64>) -> Self {
        Payload::Scalars(xs)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("payload has {got} components, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("payload does not satisfy {0}")]
    OutOfDomain(EventType),
    #[error("{0} carries a string payload")]
    TextPayload(EventType),
}

/// A timestamped value instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub source_id: String,
    pub event_type: EventType,
    /// Monotonic nanoseconds since broker start.
    pub timestamp: u64,
    pub payload: Payload,
}

impl Event {
    /// Builds an event, rejecting payloads that violate the type.
    pub fn new(
        source_id: impl Into<String>,
        event_type: EventType,
        timestamp: u64,
        payload: impl Into<Payload>,
    ) -> Result<Self, EventError> {
        let payload = payload.into();
        if payload.len() != event_type.arity as usize {
            return Err(EventError::Arity {
                expected: event_type.arity as usize,
                got: payload.len(),
            });
        }
        if !event_type.admits(&payload) {
            return Err(EventError::OutOfDomain(event_type));
        }
        Ok(Event {
            source_id: source_id.into(),
            event_type,
            timestamp,
            payload,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.event_type.admits(&self.payload)
    }

    pub fn scalars(&self) -> &[f64] {
        self.payload.scalars().unwrap_or(&[])
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn t(s: &str) -> EventType {
        s.parse().unwrap()
    }

    pub(crate) fn arb_type() -> impl Strategy<Value = EventType> {
        let all = EventType::all();
        (0..all.len()).prop_map(move |i| all[i])
    }

    #[test]
    fn compatible_is_exact_match() {
        let a = t("axis/3/unit_signed/absolute");
        assert!(compatible(&a, &a));
        assert!(!compatible(&a, &t("axis/2/unit_signed/absolute")));
        assert!(!compatible(
            &t("button/1/discrete/absolute"),
            &t("trigger/1/discrete/absolute")
        ));
    }

    #[test]
    fn clamp_examples() {
        let signed = t("axis/3/unit_signed/absolute");
        assert_eq!(
            clamp_to_domain(&signed, &[1.7, -0.2, 0.0]).unwrap(),
            vec![1.0, -0.2, 0.0]
        );
        assert_eq!(
            clamp_to_domain(&t("axis/1/discrete/absolute"), &[0.6]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            clamp_to_domain(&t("axis/1/unit_unsigned/absolute"), &[-0.3]).unwrap(),
            vec![0.0]
        );
        assert!(matches!(
            clamp_to_domain(&signed, &[0.1]),
            Err(EventError::Arity { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn components_examples() {
        let rot = t("rotation/3/unit_signed/relative");
        assert_eq!(
            components(&rot).unwrap(),
            vec![t("rotation/1/unit_signed/relative"); 3]
        );
        assert_eq!(
            components(&t("position/2/unbounded/absolute")).unwrap(),
            vec![t("position/1/unbounded/absolute"); 2]
        );
        assert!(matches!(
            components(&t("button/1/discrete/absolute")),
            Err(TypeError::Atomic(_))
        ));
    }

    #[test]
    fn invalid_types_are_rejected() {
        assert!("button/2/discrete/absolute".parse::<EventType>().is_err());
        assert!("button/1/unit_signed/absolute".parse::<EventType>().is_err());
        assert!("axis/4/unit_signed/absolute".parse::<EventType>().is_err());
        assert!("axis/0/unit_signed/absolute".parse::<EventType>().is_err());
        assert!("axis/03/unit_signed/absolute".parse::<EventType>().is_err());
        assert!("Axis/3/unit_signed/absolute".parse::<EventType>().is_err());
        assert!("axis/3/unit_signed".parse::<EventType>().is_err());
    }

    #[test]
    fn canonical_text_form() {
        let a = EventType::new(Kind::Axis, 3, Domain::UnitSigned, Mode::Absolute).unwrap();
        assert_eq!(a.to_string(), "axis/3/unit_signed/absolute");
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            "\"axis/3/unit_signed/absolute\""
        );
    }

    #[test]
    fn event_rejects_bad_payload() {
        let b = t("button/1/discrete/absolute");
        assert!(Event::new("k", b, 0, vec![1.0]).is_ok());
        assert!(Event::new("k", b, 0, vec![2.0]).is_err());
        assert!(Event::new("k", b, 0, vec![1.0, 0.0]).is_err());
        let txt = t("text/1/discrete/absolute");
        assert!(Event::new("k", txt, 0, Payload::Text(["hi".into()])).is_ok());
        assert!(Event::new("k", txt, 0, vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn structural_equality_is_an_equivalence(a in arb_type(), b in arb_type(), c in arb_type()) {
            prop_assert!(compatible(&a, &a));
            prop_assert_eq!(compatible(&a, &b), compatible(&b, &a));
            if compatible(&a, &b) && compatible(&b, &c) {
                prop_assert!(compatible(&a, &c));
            }
        }

        #[test]
        fn text_form_round_trips(a in arb_type()) {
            prop_assert_eq!(a.to_string().parse::<EventType>().unwrap(), a);
        }

        #[test]
        fn clamp_is_idempotent(
            a in arb_type().prop_filter("scalar", |t| !t.is_text()),
            raw in proptest::collection::vec(prop_oneof![any::<f64>(), -3.0..3.0f64], 3),
        ) {
            let raw = &raw[..a.arity() as usize];
            let once = clamp_to_domain(&a, raw).unwrap();
            let twice = clamp_to_domain(&a, &once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(a.admits(&Payload::Scalars(once)));
        }

        #[test]
        fn components_shape(a in arb_type().prop_filter("multi", |t| t.arity() >= 2)) {
            let cs = components(&a).unwrap();
            prop_assert_eq!(cs.len(), a.arity() as usize);
            for c in cs {
                prop_assert_eq!(c.arity(), 1);
                prop_assert_eq!((c.kind(), c.domain(), c.mode()), (a.kind(), a.domain(), a.mode()));
            }
        }
    }
}
