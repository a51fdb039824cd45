//! Packet model: everything a TSCH queue can hold.
//!
//! Link-layer acknowledgments are not queued packets; they resolve within
//! the slot of the data transmission they confirm (see [`crate::mac::LinkAck`]).

use crate::model::{Asn, NodeId};
use crate::pb::{PbDaoPayload, PbDioPayload};

/// How a queued packet finds its next hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    /// One-shot broadcast on the minimal cell.
    Broadcast,
    /// Toward the DAG root via whoever the current preferred parent is at
    /// transmission time.
    Upward,
    /// Link-local unicast to a fixed neighbor.
    Link(NodeId),
    /// Downward source route computed at the root (DAO-ACK).
    SourceRoute { hops: Vec<NodeId>, next: usize },
}

/// Why a DAO was generated. Only parent-switch/join DAOs carry reservation
/// payloads in PB mode; periodic route refreshes are untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaoKind {
    Periodic,
    ParentSwitch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DioContent {
    pub rank: u32,
    /// Slot lists and temporary-slot proposals; `None` in MSF mode. Injected
    /// at dequeue time, so it reflects the schedule at the transmit instant.
    pub pb: Option<PbDioPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaoContent {
    pub origin: NodeId,
    pub announced_parent: NodeId,
    pub kind: DaoKind,
    /// Selected slots + sender free list; `None` in MSF mode and for
    /// periodic DAOs. Rewritten hop by hop, injected at dequeue time.
    pub pb: Option<PbDaoPayload>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SixpCommand {
    pub requester: NodeId,
    pub responder: NodeId,
    pub seqnum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketKind {
    /// Enhanced beacon; `join_capable` mirrors the join-metadata field (only
    /// routable nodes can serve as join proxies).
    Eb {
        join_capable: bool,
    },
    /// Secure-joining handshake, modeled as one request/response exchange on
    /// shared cells ahead of the DIS; no cryptography.
    JoinRequest,
    JoinResponse,
    Dis {
        broadcast: bool,
    },
    Dio(DioContent),
    Dao(DaoContent),
    DaoAck {
        target: NodeId,
    },
    /// 6P ADD request. In 2-step mode `proposed` carries the requester's
    /// locked candidates; in 3-step mode it is empty and the responder
    /// proposes.
    SixpAddRequest {
        cmd: SixpCommand,
        num_cells: u8,
        proposed: Vec<crate::model::CellCoord>,
    },
    /// 6P response: the grant (2-step) or the responder's proposal (3-step).
    SixpResponse {
        cmd: SixpCommand,
        cells: Vec<crate::model::CellCoord>,
        is_proposal: bool,
    },
    /// Third message of a 3-step ADD: the requester's final pick.
    SixpConfirmation {
        cmd: SixpCommand,
        cells: Vec<crate::model::CellCoord>,
    },
    SixpDeleteRequest {
        cmd: SixpCommand,
        cells: Vec<crate::model::CellCoord>,
    },
    SixpDeleteResponse {
        cmd: SixpCommand,
    },
    Data {
        origin: NodeId,
        order: u32,
        created: Asn,
    },
}

impl PacketKind {
    pub fn is_sixp(&self) -> bool {
        matches!(
            self,
            PacketKind::SixpAddRequest { .. }
                | PacketKind::SixpResponse { .. }
                | PacketKind::SixpConfirmation { .. }
                | PacketKind::SixpDeleteRequest { .. }
                | PacketKind::SixpDeleteResponse { .. }
        )
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, PacketKind::Data { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub kind: PacketKind,
    pub route: Route,
    pub created: Asn,
    pub enqueued: Asn,
    pub attempts: u8,
    /// Relay count so far; guards against forwarding cycles.
    pub hops: u8,
}

/// Byte sizes charged per packet kind. The DIO/DAO columns differ between
/// the MSF and PB stacks; the PB values cap the piggybacked extensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketSizes {
    pub max_payload: u16,
    pub dio: u16,
    pub dao: u16,
    pub eb: u16,
    pub dis: u16,
    pub sixp: u16,
    pub ack: u16,
}

impl Packet {
    /// Serialized size. PB extensions on DIO and reserving DAO are charged
    /// on top of the conventional base sizes.
    pub fn size_bytes(&self, sizes: &PacketSizes, base_dio: u16, base_dao: u16) -> u16 {
        match &self.kind {
            PacketKind::Eb { .. } => sizes.eb,
            PacketKind::JoinRequest | PacketKind::JoinResponse => sizes.sixp,
            PacketKind::Dis { .. } => sizes.dis,
            PacketKind::Dio(content) => {
                base_dio + content.pb.as_ref().map_or(0, |p| p.wire_len() as u16)
            }
            PacketKind::Dao(content) => {
                base_dao + content.pb.as_ref().map_or(0, |p| p.wire_len() as u16)
            }
            PacketKind::DaoAck { .. } => base_dao,
            k if k.is_sixp() => sizes.sixp,
            PacketKind::Data { .. } => sizes.max_payload,
            _ => unreachable!(),
        }
    }
}
