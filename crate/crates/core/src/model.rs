//! Foundational time, cell, schedule and node-status types.
//!
//! A cell is a `(slot offset, channel offset)` coordinate in the repeating
//! slotframe; the physical channel actually used in a given slot comes from
//! [`hop_channel`]. One node owns exactly one slotframe schedule, and a slot
//! offset holds at most one entry, so schedule conflicts within a node are
//! impossible by construction.

use std::fmt;

/// Absolute Slot Number: count of elapsed time slots since simulation start.
///
/// Strictly monotonic during a run, incremented by exactly one per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Asn(pub u64);

impl Asn {
    /// Slot offset of this ASN within a slotframe of `length` slots.
    pub fn slot_offset(self, length: u16) -> u16 {
        (self.0 % u64::from(length)) as u16
    }

    /// Wall-clock seconds represented by this ASN at the given slot duration.
    pub fn to_seconds(self, slot_duration: f64) -> f64 {
        self.0 as f64 * slot_duration
    }

    pub fn next(self) -> Asn {
        Asn(self.0 + 1)
    }

    pub fn saturating_sub(self, other: Asn) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Physical channel used in slot `asn` by a cell with the given channel
/// offset: `(ASN + offset) mod nb_channels`.
pub fn hop_channel(asn: Asn, channel_offset: u16, nb_channels: u16) -> u16 {
    debug_assert!(nb_channels >= 1);
    debug_assert!(channel_offset < nb_channels);
    ((asn.0 + u64::from(channel_offset)) % u64::from(nb_channels)) as u16
}

/// Channel offset a node derives autonomously from a MAC-address hash, so
/// that a cell can be advertised by slot offset alone.
pub fn autonomous_channel(mac_hash: u64, nb_channels: u16) -> u16 {
    debug_assert!(nb_channels >= 1);
    (mac_hash % u64::from(nb_channels)) as u16
}

/// 64-bit FNV-1a over a synthetic MAC address; the value all autonomous-cell
/// coordinates are derived from.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Node identity: dense index within a scenario plus the MAC-address hash
/// that drives autonomous cell placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub index: u16,
    pub mac_hash: u64,
}

impl NodeId {
    /// Builds the identity for node `index` under the given scenario seed.
    /// The synthetic 64-bit MAC is a pure function of `(seed, index)` so that
    /// paired runs over the same seed see identical addresses.
    pub fn derive(index: u16, seed: u64) -> NodeId {
        let mac = crate::rng::splitmix64(seed ^ 0x6d61_635f * u64::from(index) ^ u64::from(index));
        NodeId {
            index,
            mac_hash: fnv1a64(&mac.to_be_bytes()),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index)
    }
}

/// A `(slot offset, channel offset)` coordinate in the slotframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellCoord {
    pub slot_offset: u16,
    pub channel_offset: u16,
}

impl CellCoord {
    pub fn new(slot_offset: u16, channel_offset: u16) -> CellCoord {
        CellCoord {
            slot_offset,
            channel_offset,
        }
    }
}

/// What the radio does in a scheduled cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellOption {
    Tx,
    Rx,
    /// Contention-based transmit/receive (the minimal cell).
    TxRxShared,
}

/// Who installed a schedule entry and under which mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// The shared bootstrap cell at (slot 0, channel 0).
    Minimal,
    /// Always-on receive cell at coordinates derived from the own MAC hash.
    AutonomousRx,
    /// On-demand transmit cell at a neighbor's autonomous coordinates.
    AutonomousTx,
    /// Cell agreed through 6P or a PB link-ACK grant.
    Negotiated,
    /// Short-lived receive/transmit cell advertised in a DIO (PB join phase).
    TemporaryDio,
    /// Cell proposed in an open 6P transaction, unavailable until the
    /// transaction resolves or the lock deadline passes.
    Locked,
}

/// One slot of a node's schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub coord: CellCoord,
    pub option: CellOption,
    pub kind: CellKind,
    /// Peer this cell talks to; `None` for the minimal cell and own
    /// autonomous receive cell.
    pub neighbor: Option<NodeId>,
    /// Expiry for `Locked` and `TemporaryDio` entries (strictly-past
    /// deadlines are expired, a deadline equal to the current ASN is not).
    pub lock_deadline: Option<Asn>,
}

impl ScheduleEntry {
    pub fn minimal() -> ScheduleEntry {
        ScheduleEntry {
            coord: CellCoord::new(0, 0),
            option: CellOption::TxRxShared,
            kind: CellKind::Minimal,
            neighbor: None,
            lock_deadline: None,
        }
    }
}

/// A node's single slotframe schedule: at most one entry per slot offset.
#[derive(Debug, Clone)]
pub struct SlotframeSchedule {
    length: u16,
    slots: Vec<Option<ScheduleEntry>>,
    occupied: u16,
}

impl SlotframeSchedule {
    pub fn new(length: u16) -> SlotframeSchedule {
        assert!(length >= 2, "slotframe needs at least the minimal cell plus one slot");
        SlotframeSchedule {
            length,
            slots: vec![None; usize::from(length)],
            occupied: 0,
        }
    }

    pub fn length(&self) -> u16 {
        self.length
    }

    pub fn entry(&self, slot_offset: u16) -> Option<&ScheduleEntry> {
        self.slots[usize::from(slot_offset)].as_ref()
    }

    pub fn entry_mut(&mut self, slot_offset: u16) -> Option<&mut ScheduleEntry> {
        self.slots[usize::from(slot_offset)].as_mut()
    }

    /// Installs an entry; fails (returns `false`) if the slot is taken.
    pub fn insert(&mut self, entry: ScheduleEntry) -> bool {
        debug_assert!(entry.coord.slot_offset < self.length);
        debug_assert!(entry.kind != CellKind::Locked || entry.lock_deadline.is_some());
        let slot = &mut self.slots[usize::from(entry.coord.slot_offset)];
        if slot.is_some() {
            return false;
        }
        *slot = Some(entry);
        self.occupied += 1;
        true
    }

    pub fn remove(&mut self, slot_offset: u16) -> Option<ScheduleEntry> {
        let removed = self.slots[usize::from(slot_offset)].take();
        if removed.is_some() {
            self.occupied -= 1;
        }
        removed
    }

    pub fn is_free(&self, slot_offset: u16) -> bool {
        slot_offset != 0
            && slot_offset < self.length
            && self.slots[usize::from(slot_offset)].is_none()
    }

    pub fn occupied_count(&self) -> u16 {
        self.occupied
    }

    /// Ascending slot offsets with no entry and no live lock. Slot 0 is the
    /// reserved bootstrap slot and never appears, whether or not the minimal
    /// cell is installed yet.
    pub fn free_slots(&self) -> Vec<u16> {
        (1..self.length).filter(|&s| self.is_free(s)).collect()
    }

    /// Ascending occupied slot offsets, slot 0 excluded (its occupancy is
    /// implied once a node joins, which is what lets the slot-list codec use
    /// it as a mode sentinel).
    pub fn occupied_slots_excluding_zero(&self) -> Vec<u16> {
        (1..self.length)
            .filter(|&s| self.slots[usize::from(s)].is_some())
            .collect()
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = &ScheduleEntry> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }

    pub fn iter_entries_mut(&mut self) -> impl Iterator<Item = &mut ScheduleEntry> {
        self.slots.iter_mut().filter_map(|s| s.as_mut())
    }
}

/// The three stations of the node life cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeStatus {
    /// Powered on, scanning for Enhanced Beacons.
    Pledge,
    /// Time-synchronized to the network, not yet routable.
    Synchronized,
    /// Parent selected and first dedicated transmit cell usable.
    Joined,
}

/// Stimuli that drive the status cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusEvent {
    /// Enough EBs heard to synchronize.
    EbThresholdReached,
    /// Parent acquired and a dedicated cell toward it is usable.
    JoinCompleted,
    /// Link to the parent failed or the Dis_join window elapsed.
    ParentLinkLost,
    /// No packet received within the Dy_sync window.
    DySyncExpired,
}

/// Applies one event to the status cycle. Illegal `(state, event)` pairs are
/// non-fatal: the state is left unchanged and `legal` comes back `false` so
/// the caller can count them.
pub fn advance_status(state: NodeStatus, event: StatusEvent) -> (NodeStatus, bool) {
    use NodeStatus::*;
    use StatusEvent::*;
    match (state, event) {
        (Pledge, EbThresholdReached) => (Synchronized, true),
        (Synchronized, JoinCompleted) => (Joined, true),
        (Joined, ParentLinkLost) => (Synchronized, true),
        (Synchronized, DySyncExpired) | (Joined, DySyncExpired) => (Pledge, true),
        (state, _) => (state, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_channel_matches_direct_arithmetic() {
        assert_eq!(hop_channel(Asn(0), 0, 16), 0);
        assert_eq!(hop_channel(Asn(5), 3, 16), 8);
        assert_eq!(hop_channel(Asn(20), 10, 16), 14);
    }

    #[test]
    fn autonomous_channel_is_hash_mod_channels() {
        assert_eq!(autonomous_channel(0, 16), 0);
        assert_eq!(autonomous_channel(33, 16), 1);
        assert_eq!(autonomous_channel(16, 16), 0);
    }

    #[test]
    fn free_slots_excludes_zero_and_occupied() {
        let mut sched = SlotframeSchedule::new(5);
        assert!(sched.insert(ScheduleEntry::minimal()));
        assert_eq!(sched.free_slots(), vec![1, 2, 3, 4]);

        for slot in [2, 3] {
            assert!(sched.insert(ScheduleEntry {
                coord: CellCoord::new(slot, 1),
                option: CellOption::Rx,
                kind: CellKind::Negotiated,
                neighbor: Some(NodeId::derive(1, 7)),
                lock_deadline: None,
            }));
        }
        assert_eq!(sched.free_slots(), vec![1, 4]);

        for slot in [1, 4] {
            assert!(sched.insert(ScheduleEntry {
                coord: CellCoord::new(slot, 0),
                option: CellOption::Tx,
                kind: CellKind::Negotiated,
                neighbor: Some(NodeId::derive(2, 7)),
                lock_deadline: None,
            }));
        }
        assert!(sched.free_slots().is_empty());
    }

    #[test]
    fn free_slots_excludes_zero_even_without_minimal_cell() {
        let sched = SlotframeSchedule::new(5);
        assert_eq!(sched.free_slots(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn one_entry_per_slot() {
        let mut sched = SlotframeSchedule::new(10);
        let entry = ScheduleEntry {
            coord: CellCoord::new(4, 2),
            option: CellOption::Rx,
            kind: CellKind::AutonomousRx,
            neighbor: None,
            lock_deadline: None,
        };
        assert!(sched.insert(entry));
        assert!(!sched.insert(entry));
        assert_eq!(sched.occupied_count(), 1);
    }

    #[test]
    fn free_and_occupied_partition_nonzero_slots() {
        let mut sched = SlotframeSchedule::new(20);
        sched.insert(ScheduleEntry::minimal());
        for slot in [3, 7, 11] {
            sched.insert(ScheduleEntry {
                coord: CellCoord::new(slot, 5),
                option: CellOption::Rx,
                kind: CellKind::Negotiated,
                neighbor: None,
                lock_deadline: None,
            });
        }
        let free = sched.free_slots();
        let occupied = sched.occupied_slots_excluding_zero();
        let mut all: Vec<u16> = free.iter().chain(occupied.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (1..20).collect::<Vec<u16>>());
    }

    #[test]
    fn status_cycle_follows_legal_edges() {
        use NodeStatus::*;
        use StatusEvent::*;
        assert_eq!(advance_status(Pledge, EbThresholdReached), (Synchronized, true));
        assert_eq!(advance_status(Joined, DySyncExpired), (Pledge, true));
        assert_eq!(advance_status(Joined, ParentLinkLost), (Synchronized, true));
        assert_eq!(advance_status(Synchronized, JoinCompleted), (Joined, true));
    }

    #[test]
    fn status_cycle_ignores_illegal_edges() {
        use NodeStatus::*;
        use StatusEvent::*;
        assert_eq!(advance_status(Pledge, JoinCompleted), (Pledge, false));
        assert_eq!(advance_status(Pledge, DySyncExpired), (Pledge, false));
        assert_eq!(advance_status(Joined, EbThresholdReached), (Joined, false));
        assert_eq!(advance_status(Synchronized, ParentLinkLost), (Synchronized, false));
    }

    #[test]
    fn joined_only_reachable_through_synchronized() {
        use StatusEvent::*;
        // Walk every event sequence of length <= 4 from Pledge and record the
        // predecessor of every Joined arrival.
        let events = [EbThresholdReached, JoinCompleted, ParentLinkLost, DySyncExpired];
        let mut stack = vec![(NodeStatus::Pledge, 0usize)];
        while let Some((state, depth)) = stack.pop() {
            if depth == 4 {
                continue;
            }
            for ev in events {
                let (next, _) = advance_status(state, ev);
                if next == NodeStatus::Joined && state != NodeStatus::Joined {
                    assert_eq!(state, NodeStatus::Synchronized);
                }
                stack.push((next, depth + 1));
            }
        }
    }
}
