//! Run trace: protocol-level events for trace-based tests, and the
//! invariant-violation ledger every run is judged against.

use crate::model::{Asn, NodeStatus};
use crate::sixtop::SixpReason;

/// Compact protocol events appended during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Status {
        asn: Asn,
        node: u16,
        from: NodeStatus,
        to: NodeStatus,
    },
    ParentSwitch {
        asn: Asn,
        node: u16,
        old: Option<u16>,
        new: u16,
    },
    SixpInitiated {
        asn: Asn,
        requester: u16,
        responder: u16,
        reason: SixpReason,
        seqnum: u32,
        is_delete: bool,
    },
    /// One 6P control packet put on air (request/response/confirmation),
    /// labeled with the transaction it belongs to.
    SixpPacket {
        asn: Asn,
        from: u16,
        to: u16,
        seqnum: u32,
    },
    SixpResolved {
        asn: Asn,
        requester: u16,
        responder: u16,
        seqnum: u32,
        granted: u16,
        timed_out: bool,
    },
    /// Slots granted through a PB link-ACK.
    AckGrant {
        asn: Asn,
        granter: u16,
        child: u16,
        slots: Vec<u16>,
    },
    DaoReserving {
        asn: Asn,
        node: u16,
        target: u16,
        nb: u8,
    },
    Joined {
        asn: Asn,
        node: u16,
        parent: u16,
    },
}

/// Event sink plus the always-on invariant ledger.
#[derive(Debug, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub violations: Vec<String>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn violation(&mut self, asn: Asn, msg: impl Into<String>) {
        self.violations.push(format!("asn {}: {}", asn.0, msg.into()));
    }
}
