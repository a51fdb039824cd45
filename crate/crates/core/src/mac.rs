//! TSCH MAC building blocks: the bounded transmit queue, link-layer ACKs
//! (with the PB slot-grant payload), shared-cell backoff, and per-slot
//! energy accounting.

use crate::model::{Asn, NodeId};
use crate::packet::Packet;
use rand::Rng;
use std::collections::VecDeque;

/// Radio/CPU state a node can spend a slot in. Exactly one is charged per
/// synchronized slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyState {
    Sleep,
    IdleListen,
    TxDataRxAck,
    RxDataTxAck,
    TxData,
    RxData,
}

pub const ENERGY_STATES: [EnergyState; 6] = [
    EnergyState::Sleep,
    EnergyState::IdleListen,
    EnergyState::TxDataRxAck,
    EnergyState::RxDataTxAck,
    EnergyState::TxData,
    EnergyState::RxData,
];

impl EnergyState {
    pub fn index(self) -> usize {
        match self {
            EnergyState::Sleep => 0,
            EnergyState::IdleListen => 1,
            EnergyState::TxDataRxAck => 2,
            EnergyState::RxDataTxAck => 3,
            EnergyState::TxData => 4,
            EnergyState::RxData => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnergyState::Sleep => "sleep",
            EnergyState::IdleListen => "idle_listen",
            EnergyState::TxDataRxAck => "tx_data_rx_ack",
            EnergyState::RxDataTxAck => "rx_data_tx_ack",
            EnergyState::TxData => "tx_data",
            EnergyState::RxData => "rx_data",
        }
    }
}

/// Charge drawn per slot in each state. Held in tenths of a microcoulomb so
/// the online accumulator and the end-of-run settlement are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChargeTable {
    deci_uc: [u64; 6],
}

impl ChargeTable {
    /// Builds from microcoulomb-per-slot figures (one decimal of precision).
    pub fn from_uc(values_uc: [f64; 6]) -> Result<ChargeTable, String> {
        let mut deci_uc = [0u64; 6];
        for (i, &v) in values_uc.iter().enumerate() {
            if !(0.0..=1e6).contains(&v) {
                return Err(format!("charge value {v} out of range for state index {i}"));
            }
            deci_uc[i] = (v * 10.0).round() as u64;
        }
        Ok(ChargeTable { deci_uc })
    }

    pub fn deci_uc(&self, state: EnergyState) -> u64 {
        self.deci_uc[state.index()]
    }
}

/// Per-node energy bookkeeping: slot counters per state plus an online
/// charge accumulator fed slot by slot.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    counters: [u64; 6],
    online_deci_uc: u64,
}

impl EnergyLedger {
    /// Charges one slot spent in `state`.
    pub fn tally(&mut self, state: EnergyState, table: &ChargeTable) {
        self.counters[state.index()] += 1;
        self.online_deci_uc += table.deci_uc(state);
    }

    pub fn count(&self, state: EnergyState) -> u64 {
        self.counters[state.index()]
    }

    pub fn total_slots(&self) -> u64 {
        self.counters.iter().sum()
    }

    /// Total charge recomputed from the counters, in microcoulombs.
    pub fn settle_charge(&self, table: &ChargeTable) -> f64 {
        self.settle_deci_uc(table) as f64 / 10.0
    }

    pub fn settle_deci_uc(&self, table: &ChargeTable) -> u64 {
        ENERGY_STATES
            .iter()
            .map(|&s| self.counters[s.index()] * table.deci_uc(s))
            .sum()
    }

    /// Charge accumulated online, in tenths of a microcoulomb. Must equal
    /// [`EnergyLedger::settle_deci_uc`] exactly.
    pub fn online_deci_uc(&self) -> u64 {
        self.online_deci_uc
    }
}

/// Outcome of pushing a packet into the TSCH queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnqueueOutcome {
    /// Accepted; carries the number of free places left afterwards, which is
    /// what the PB queue-pressure hook triggers on.
    Accepted { free_after: usize },
    /// Queue was full; the packet comes back to the caller.
    Dropped(Box<Packet>),
}

/// Bounded FIFO feeding the radio. One per node, shared by control and data.
#[derive(Debug, Clone)]
pub struct TschQueue {
    packets: VecDeque<Packet>,
    capacity: usize,
}

impl TschQueue {
    pub fn new(capacity: usize) -> TschQueue {
        assert!(capacity >= 1);
        TschQueue {
            packets: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn enqueue(&mut self, mut packet: Packet, now: Asn) -> EnqueueOutcome {
        if self.packets.len() >= self.capacity {
            return EnqueueOutcome::Dropped(Box::new(packet));
        }
        packet.enqueued = now;
        self.packets.push_back(packet);
        debug_assert!(self.packets.len() <= self.capacity);
        EnqueueOutcome::Accepted {
            free_after: self.capacity - self.packets.len(),
        }
    }

    /// Index of the newest application packet, if any.
    pub fn rposition_data(&self) -> Option<usize> {
        self.packets
            .iter()
            .rposition(|p| matches!(p.kind, crate::packet::PacketKind::Data { .. }))
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Index of the first packet matching `pred` (head-of-queue order).
    pub fn position<F: Fn(&Packet) -> bool>(&self, pred: F) -> Option<usize> {
        self.packets.iter().position(pred)
    }

    pub fn get(&self, idx: usize) -> Option<&Packet> {
        self.packets.get(idx)
    }

    pub fn get_mut(&mut self, idx: usize) -> Option<&mut Packet> {
        self.packets.get_mut(idx)
    }

    pub fn remove(&mut self, idx: usize) -> Option<Packet> {
        self.packets.remove(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    /// Drops every packet matching `pred`, returning how many went away.
    pub fn purge<F: FnMut(&Packet) -> bool>(&mut self, mut pred: F) -> usize {
        let before = self.packets.len();
        self.packets.retain(|p| !pred(p));
        before - self.packets.len()
    }
}

/// Link-layer acknowledgment, returned within the slot of a successful
/// unicast reception. In PB mode it can carry up to five granted slot ids;
/// a detached receiver flags that it cannot serve routing work (an
/// information-element style disassociation notice).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkAck {
    pub src: NodeId,
    pub dst: NodeId,
    pub ack_for: u64,
    pub granted_slots: Vec<u16>,
    pub detached: bool,
}

pub const MAX_ACK_GRANTS: usize = 5;

/// Binary-exponential backoff counted in shared-cell occurrences.
#[derive(Debug, Clone, Copy)]
pub struct SharedBackoff {
    exponent: u8,
    max_exponent: u8,
    skip: u8,
}

pub const SHARED_BACKOFF_MIN_EXP: u8 = 1;
pub const SHARED_BACKOFF_MAX_EXP: u8 = 7;

impl Default for SharedBackoff {
    fn default() -> SharedBackoff {
        SharedBackoff::with_cap(SHARED_BACKOFF_MAX_EXP)
    }
}

impl SharedBackoff {
    /// Backoff with a bounded window; pools of parallel cells (the PB
    /// temporary slots) use a small cap since the pool itself dilutes
    /// contention.
    pub fn with_cap(max_exponent: u8) -> SharedBackoff {
        SharedBackoff {
            exponent: SHARED_BACKOFF_MIN_EXP,
            max_exponent,
            skip: 0,
        }
    }

    /// Whether this shared-cell occurrence may transmit; decrements the
    /// wait otherwise.
    pub fn may_transmit(&mut self) -> bool {
        if self.skip == 0 {
            true
        } else {
            self.skip -= 1;
            false
        }
    }

    /// Failed shared transmission: widen the window and draw a new wait.
    pub fn on_failure<R: Rng>(&mut self, rng: &mut R) {
        self.exponent = (self.exponent + 1).min(self.max_exponent);
        self.skip = rng.gen_range(1..=(1u8 << self.exponent));
    }

    pub fn on_success(&mut self) {
        self.exponent = SHARED_BACKOFF_MIN_EXP;
        self.skip = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{PacketKind, Route};

    fn packet(id: u64) -> Packet {
        Packet {
            id,
            kind: PacketKind::Eb { join_capable: true },
            route: Route::Broadcast,
            created: Asn(0),
            enqueued: Asn(0),
            attempts: 0,
            hops: 0,
        }
    }

    #[test]
    fn queue_accepts_until_capacity() {
        let mut q = TschQueue::new(10);
        for i in 0..9 {
            assert!(matches!(q.enqueue(packet(i), Asn(i)), EnqueueOutcome::Accepted { .. }));
        }
        assert_eq!(
            q.enqueue(packet(9), Asn(9)),
            EnqueueOutcome::Accepted { free_after: 0 }
        );
        assert_eq!(q.len(), 10);
        assert!(matches!(q.enqueue(packet(10), Asn(10)), EnqueueOutcome::Dropped(_)));
        assert_eq!(q.len(), 10);
    }

    #[test]
    fn enqueue_reports_free_space_for_pressure_hook() {
        let mut q = TschQueue::new(10);
        for i in 0..7 {
            q.enqueue(packet(i), Asn(0));
        }
        // Eighth packet: 2 places left, at the pressure threshold.
        assert_eq!(
            q.enqueue(packet(7), Asn(0)),
            EnqueueOutcome::Accepted { free_after: 2 }
        );
    }

    #[test]
    fn enqueue_stamps_time() {
        let mut q = TschQueue::new(2);
        q.enqueue(packet(0), Asn(77));
        assert_eq!(q.get(0).unwrap().enqueued, Asn(77));
    }

    #[test]
    fn charge_settlement_matches_online_accumulation() {
        let table = ChargeTable::from_uc([0.1, 6.4, 54.5, 32.6, 49.5, 22.6]).unwrap();
        let mut ledger = EnergyLedger::default();
        let pattern = [
            EnergyState::Sleep,
            EnergyState::Sleep,
            EnergyState::IdleListen,
            EnergyState::TxDataRxAck,
            EnergyState::RxDataTxAck,
            EnergyState::TxData,
            EnergyState::RxData,
            EnergyState::Sleep,
        ];
        for _ in 0..1000 {
            for state in pattern {
                ledger.tally(state, &table);
            }
        }
        assert_eq!(ledger.online_deci_uc(), ledger.settle_deci_uc(&table));
        assert_eq!(ledger.total_slots(), 8000);
        // Hand recomputation of the same mix.
        let expected_uc = 1000.0 * (3.0 * 0.1 + 6.4 + 54.5 + 32.6 + 49.5 + 22.6);
        assert!((ledger.settle_charge(&table) - expected_uc).abs() < 1e-9);
    }

    #[test]
    fn zero_counters_settle_to_zero() {
        let table = ChargeTable::from_uc([0.1, 6.4, 54.5, 32.6, 49.5, 22.6]).unwrap();
        let ledger = EnergyLedger::default();
        assert_eq!(ledger.settle_charge(&table), 0.0);
    }

    #[test]
    fn sleep_only_charge_is_linear() {
        let table = ChargeTable::from_uc([0.5, 6.4, 54.5, 32.6, 49.5, 22.6]).unwrap();
        let mut ledger = EnergyLedger::default();
        for _ in 0..10 {
            ledger.tally(EnergyState::Sleep, &table);
        }
        assert!((ledger.settle_charge(&table) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn backoff_window_stays_in_bounds() {
        let mut rng = rand::rngs::mock::StepRng::new(7, 13);
        let mut backoff = SharedBackoff::default();
        assert!(backoff.may_transmit());
        for _ in 0..20 {
            backoff.on_failure(&mut rng);
        }
        // After repeated failures the wait is within 1..=2^4.
        let mut waited = 0;
        while !backoff.may_transmit() {
            waited += 1;
        }
        assert!(waited <= 16);
        backoff.on_success();
        assert!(backoff.may_transmit());
    }
}
