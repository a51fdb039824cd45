//! Cross-layer piggyback ("PB") mechanics: the slot-list codec, the
//! slot-aware parent-switching decision, nearest-slot selection, and the
//! byte budgets that keep extended DIO/DAO packets inside the TSCH payload
//! cap.
//!
//! Slot ids ride in one byte each, which is why scenario loading rejects
//! slotframes longer than 256 slots.

use crate::model::{Asn, NodeId, SlotframeSchedule};
use thiserror::Error;

/// Whether a [`SlotListCodec`] carries the free slots or the occupied ones.
///
/// Slot 0 is reserved by every node on joining, so it never appears in a
/// free list; its occupancy is implied and it is omitted from occupied lists
/// too. The encoder always ships whichever list is shorter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotListMode {
    FreeList,
    OccupiedList,
}

const FLAG_FREE: u8 = 0x00;
const FLAG_OCCUPIED: u8 = 0x01;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("slot list truncated: expected {expected} ids, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unknown slot-list flag {0:#04x}")]
    BadFlag(u8),
    #[error("slot id {0} outside slotframe of length {1}")]
    SlotOutOfRange(u16, u16),
    #[error("slot ids must be strictly ascending and nonzero")]
    BadOrdering,
}

/// Compact schedule advertisement: `[flag][count][count x 1-byte slot ids]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotListCodec {
    pub mode: SlotListMode,
    /// Strictly ascending, never containing slot 0.
    pub slot_ids: Vec<u8>,
}

impl SlotListCodec {
    /// Encodes a schedule, shipping the shorter of the free list and the
    /// occupied-minus-slot-0 list. Round-trips to the exact free-slot set.
    pub fn encode(schedule: &SlotframeSchedule) -> SlotListCodec {
        let free = schedule.free_slots();
        let occupied = schedule.occupied_slots_excluding_zero();
        if free.len() <= occupied.len() {
            SlotListCodec::free_list(&free)
        } else {
            SlotListCodec {
                mode: SlotListMode::OccupiedList,
                slot_ids: occupied.iter().map(|&s| s as u8).collect(),
            }
        }
    }

    /// Free-list advertisement of exactly the given slots (used when a byte
    /// budget forces a truncated, under-advertised set).
    pub fn free_list(free: &[u16]) -> SlotListCodec {
        SlotListCodec {
            mode: SlotListMode::FreeList,
            slot_ids: free.iter().map(|&s| s as u8).collect(),
        }
    }

    /// The advertised free-slot set, reconstructed exactly.
    pub fn free_set(&self, slotframe_len: u16) -> Vec<u16> {
        match self.mode {
            SlotListMode::FreeList => self.slot_ids.iter().map(|&s| u16::from(s)).collect(),
            SlotListMode::OccupiedList => {
                let occupied: Vec<u16> = self.slot_ids.iter().map(|&s| u16::from(s)).collect();
                (1..slotframe_len).filter(|s| !occupied.contains(s)).collect()
            }
        }
    }

    /// Total encoded bytes: flag + count + one byte per id.
    pub fn encoded_len(&self) -> usize {
        2 + self.slot_ids.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(match self.mode {
            SlotListMode::FreeList => FLAG_FREE,
            SlotListMode::OccupiedList => FLAG_OCCUPIED,
        });
        out.push(self.slot_ids.len() as u8);
        out.extend_from_slice(&self.slot_ids);
        out
    }

    /// Parses one codec from the front of `bytes`; returns the codec and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8], slotframe_len: u16) -> Result<(SlotListCodec, usize), CodecError> {
        if bytes.len() < 2 {
            return Err(CodecError::Truncated { expected: 2, found: bytes.len() });
        }
        let mode = match bytes[0] {
            FLAG_FREE => SlotListMode::FreeList,
            FLAG_OCCUPIED => SlotListMode::OccupiedList,
            other => return Err(CodecError::BadFlag(other)),
        };
        let count = usize::from(bytes[1]);
        if bytes.len() < 2 + count {
            return Err(CodecError::Truncated { expected: 2 + count, found: bytes.len() });
        }
        let slot_ids = bytes[2..2 + count].to_vec();
        let mut prev = 0u16;
        for &id in &slot_ids {
            let id = u16::from(id);
            if id == 0 || id <= prev && prev != 0 {
                return Err(CodecError::BadOrdering);
            }
            if id >= slotframe_len {
                return Err(CodecError::SlotOutOfRange(id, slotframe_len));
            }
            prev = id;
        }
        Ok((SlotListCodec { mode, slot_ids }, 2 + count))
    }
}

/// Largest slot-id list a joined node ever needs to inject: half the
/// slotframe minus the three cells every joined node holds (minimal,
/// autonomous Rx, autonomous Tx).
pub fn max_injected_list_length(slotframe_len: u16) -> Result<u16, String> {
    if slotframe_len < 6 {
        return Err(format!(
            "slotframe length {slotframe_len} too short for slot-list injection (minimum 6)"
        ));
    }
    Ok(slotframe_len / 2 - 3)
}

/// Picks up to `nb` slots from `free` minimizing circular distance to
/// `current_slot`; ties at equal distance prefer the forward (later) slot.
/// The result is ordered by distance, then by slot id.
pub fn select_nearest_slots(free: &[u16], current_slot: u16, nb: usize, slotframe_len: u16) -> Vec<u16> {
    let len = u32::from(slotframe_len);
    let mut ranked: Vec<(u32, bool, u16)> = free
        .iter()
        .map(|&s| {
            let fd = (u32::from(s) + len - u32::from(current_slot)) % len;
            let bd = (len - fd) % len;
            let dist = fd.min(bd);
            let backward = bd < fd;
            (dist, backward, s)
        })
        .collect();
    // Selection order: distance, then forward before backward, then slot id.
    ranked.sort_unstable_by_key(|&(d, backward, s)| (d, backward, s));
    ranked.truncate(nb);
    ranked.sort_unstable_by_key(|&(d, _, s)| (d, s));
    ranked.into_iter().map(|(_, _, s)| s).collect()
}

/// DIO extension: the sender's free slots plus its temporary-slot proposals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbDioPayload {
    pub free_slots: SlotListCodec,
    /// Slot offsets where the sender keeps temporary Rx cells open for DAOs.
    pub proposed_slots: Vec<u16>,
    /// When the proposals lapse at the sender (not serialized: receivers
    /// derive it from the network-wide DIO-cells-duration parameter).
    pub proposal_expiry: Asn,
}

impl PbDioPayload {
    /// Bytes added on top of the base DIO: slot-list codec plus
    /// `[proposed count][proposed ids]`.
    pub fn wire_len(&self) -> usize {
        self.free_slots.encoded_len() + 1 + self.proposed_slots.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.free_slots.to_bytes();
        out.push(self.proposed_slots.len() as u8);
        out.extend(self.proposed_slots.iter().map(|&s| s as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8], slotframe_len: u16, expiry: Asn) -> Result<PbDioPayload, CodecError> {
        let (free_slots, used) = SlotListCodec::from_bytes(bytes, slotframe_len)?;
        let rest = &bytes[used..];
        if rest.is_empty() {
            return Err(CodecError::Truncated { expected: used + 1, found: bytes.len() });
        }
        let count = usize::from(rest[0]);
        if rest.len() < 1 + count {
            return Err(CodecError::Truncated { expected: used + 1 + count, found: bytes.len() });
        }
        let proposed_slots = rest[1..1 + count].iter().map(|&s| u16::from(s)).collect();
        Ok(PbDioPayload {
            free_slots,
            proposed_slots,
            proposal_expiry: expiry,
        })
    }
}

/// DAO extension: the sender's slot picks for its (new) uplink, its free
/// list for the next hop, and how many cells each hop should reserve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbDaoPayload {
    /// Slots the DAO sender wants on the link to the node this DAO is
    /// physically transmitted to; at most `max_cells_at_once`.
    pub selected_slots: Vec<u16>,
    pub child_free_slots: SlotListCodec,
    pub requested_count: u8,
}

impl PbDaoPayload {
    /// Bytes added on top of the base DAO: codec + `[requested count]` +
    /// the selected ids (they run to the end of the extension).
    pub fn wire_len(&self) -> usize {
        self.child_free_slots.encoded_len() + 1 + self.selected_slots.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.child_free_slots.to_bytes();
        out.push(self.requested_count);
        out.extend(self.selected_slots.iter().map(|&s| s as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8], slotframe_len: u16) -> Result<PbDaoPayload, CodecError> {
        let (child_free_slots, used) = SlotListCodec::from_bytes(bytes, slotframe_len)?;
        let rest = &bytes[used..];
        if rest.is_empty() {
            return Err(CodecError::Truncated { expected: used + 1, found: bytes.len() });
        }
        let requested_count = rest[0];
        let selected_slots = rest[1..].iter().map(|&s| u16::from(s)).collect();
        Ok(PbDaoPayload {
            selected_slots,
            child_free_slots,
            requested_count,
        })
    }
}

/// Outcome of the slot-aware parent-switching procedure run on a DIO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwitchDecision {
    Switch {
        parent: NodeId,
        /// Cells to request on the new uplink.
        nb: u8,
        /// Nearest-slot picks at decision time; recomputed at dequeue.
        selected: Vec<u16>,
    },
    Stay,
}

/// A DIO sender considered for parent selection.
#[derive(Debug, Clone)]
pub struct ParentCandidate {
    pub id: NodeId,
    pub rank: u32,
    pub advertised_free: Vec<u16>,
}

/// Slot-aware parent switching: pick the minimum-rank candidate that
/// advertises free slots, size the reservation (`min_nb` when joining, the
/// old uplink's cell count capped at `max_nb` when switching), and select
/// the nearest common free slots. Stays put when the node's own free slots
/// or the common pool cannot cover `min_nb`.
#[allow(clippy::too_many_arguments)]
pub fn parent_switch_decision(
    candidates: &[ParentCandidate],
    child_free: &[u16],
    old_parent: Option<NodeId>,
    old_parent_rank: Option<u32>,
    cells_to_old_parent: u16,
    current_slot: u16,
    slotframe_len: u16,
    min_nb: u8,
    max_nb: u8,
) -> SwitchDecision {
    let best = candidates
        .iter()
        .filter(|c| !c.advertised_free.is_empty() && Some(c.id) != old_parent)
        .min_by_key(|c| (c.rank, c.id.index));
    let Some(best) = best else {
        return SwitchDecision::Stay;
    };
    // Same hysteresis as the benchmark: only strictly better-ranked parents
    // are worth a switch.
    if let Some(current_rank) = old_parent_rank {
        if best.rank >= current_rank {
            return SwitchDecision::Stay;
        }
    }
    if child_free.len() < usize::from(min_nb) {
        return SwitchDecision::Stay;
    }
    let nb = if old_parent.is_none() {
        min_nb
    } else {
        (cells_to_old_parent.min(u16::from(max_nb)) as u8).max(min_nb)
    };
    let common: Vec<u16> = child_free
        .iter()
        .copied()
        .filter(|s| best.advertised_free.contains(s))
        .collect();
    if common.len() < usize::from(min_nb) {
        return SwitchDecision::Stay;
    }
    let selected = select_nearest_slots(&common, current_slot, usize::from(nb), slotframe_len);
    SwitchDecision::Switch {
        parent: best.id,
        nb,
        selected,
    }
}

/// Builds the free-list codec to inject into a packet under a byte budget:
/// at most `capacity_bytes` total and at most `id_cap` ids. Prefers the
/// exact occupied-mode encoding when it fits; otherwise under-advertises by
/// keeping the free slots nearest to `current_slot`.
pub fn inject_free_list(
    schedule: &SlotframeSchedule,
    current_slot: u16,
    capacity_bytes: usize,
    id_cap: u16,
) -> SlotListCodec {
    let exact = SlotListCodec::encode(schedule);
    let id_budget = capacity_bytes.saturating_sub(2).min(usize::from(id_cap));
    if exact.slot_ids.len() <= id_budget {
        return exact;
    }
    let free = schedule.free_slots();
    let mut kept = select_nearest_slots(&free, current_slot, id_budget, schedule.length());
    kept.sort_unstable();
    SlotListCodec::free_list(&kept)
}
