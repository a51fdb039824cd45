//! # sixsim-core
//!
//! A deterministic, slot-level simulator of 6TiSCH low-power mesh networks.
//!
//! The library models the standard stack — TSCH medium access on a single
//! slotframe, 6P cell negotiation with the Minimal Scheduling Function (MSF),
//! and RPL/OF0 DODAG routing — together with a cross-layer "PB" mode that
//! piggybacks cell reservation onto RPL control packets (slot lists in
//! DIO/DAO, grants in the link-layer ACK, temporary join slots, early
//! reservation under queue pressure, nearest-slot selection).
//!
//! Everything is driven by one synchronous loop over the Absolute Slot
//! Number; all randomness flows from a seeded generator hierarchy keyed by
//! `(seed, node, purpose)`, so a `(seed, config)` pair fully determines every
//! metric byte the simulator emits.
//!
//! Entry points:
//! - [`engine::ScenarioConfig`] + [`engine::Simulation::run`] for one run,
//! - [`analytics::ExperimentPlan`] for paired MSF/PB sweeps,
//! - [`sixtop::first_attempt_success_probability`] and friends for the
//!   closed-form calculators.

pub mod analytics;
pub mod engine;
pub mod mac;
pub mod model;
pub mod packet;
pub mod pb;
pub mod radio;
pub mod rpl;
pub mod rng;
pub mod sixtop;

pub use engine::{RunOutput, ScenarioConfig, Simulation, StackMode};
pub use model::{Asn, CellCoord, CellKind, CellOption, NodeId, SlotframeSchedule};
