//! HyperWire decouples interaction devices from applications.
//!
//! Devices announce typed *capabilities*, applications announce typed
//! *requirements*, and the broker searches a hypergraph whose vertices are
//! event types and whose hyperedges are split, merge and cast operators for
//! every way to wire the former into the latter. The chosen wiring is then
//! compiled into a small dataflow and fed with live events.

pub mod broker;
pub mod client;
pub mod config_service;
pub mod event;
pub mod operator;
pub mod registry;
pub mod router;
pub mod sim;
pub mod solver;
pub mod transport;

pub use event::{Domain, Event, EventType, Kind, Mode, Payload};
pub use operator::{Catalog, OperatorKind, OperatorSpec, OperatorState};
pub use solver::{build_graph, solve, solve_exhaustive, validate, Derivation, Hypergraph, Wiring};
pub use router::{compile, Delivery, RouteTable, Target, WiringId};
