//! Per-node runtime: status cycle, schedule ownership, queueing, RPL and 6P
//! state machines, and the PB cross-layer hooks. One instance per simulated
//! node, mutated exclusively by the simulation loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::config::{ScenarioConfig, SixpAddStyle};
use crate::engine::metrics::DropCounters;
use crate::engine::trace::{Trace, TraceEvent};
use crate::mac::{EnqueueOutcome, LinkAck, SharedBackoff, TschQueue, MAX_ACK_GRANTS};
use crate::model::{
    advance_status, autonomous_channel, Asn, CellCoord, CellKind, CellOption, NodeId, NodeStatus,
    ScheduleEntry, SlotframeSchedule, StatusEvent,
};
use crate::packet::{DaoContent, DaoKind, DioContent, Packet, PacketKind, Route, SixpCommand};
use crate::pb::{
    inject_free_list, parent_switch_decision, select_nearest_slots, ParentCandidate, PbDaoPayload,
    PbDioPayload, SwitchDecision,
};
use crate::rng::{Purpose, RngHub};
use crate::rpl::{compute_rank_of0, select_parent_msf, NeighborEntry, TrickleAction, TrickleState};
use crate::sixtop::{
    sample_proposal, select_grant, CellUsageWindow, SixpCommandKind, SixpKind, SixpReason,
    SixpState, SixpTransaction,
};

/// Rank placeholder before a node has a parent.
const NO_RANK: u32 = u32::MAX;
/// Parent links whose delivery estimate falls below this are abandoned.
const PARENT_QUALITY_FLOOR: f64 = 0.3;
/// Candidates must clear this delivery estimate to be adopted.
const CANDIDATE_QUALITY_FLOOR: f64 = 0.5;
/// Backoff-key flag for the temporary-slot pool of a peer.
const TEMP_KEY_FLAG: u16 = 0x8000;
/// Backoff cap inside a temporary-slot pool.
const TEMP_BACKOFF_CAP: u8 = 3;
/// Hop guard for forwarded packets.
const MAX_HOPS: u8 = 16;
/// Unicast DIS is retried (as broadcast) at this period until a DIO lands.
const DIS_RETRY_SLOTFRAMES: u64 = 16;
/// Secure-join handshake is re-attempted at this period until answered.
const HANDSHAKE_RETRY_SLOTFRAMES: u64 = 6;


/// Static per-run facts shared by all node methods.
pub(crate) struct SimCtx<'a> {
    pub cfg: &'a ScenarioConfig,
    pub frame_len: u16,
    pub l_length: u16,
    pub dy_sync_slots: u64,
    pub dis_join_slots: u64,
    pub dao_period_slots: u64,
    pub eb_period_slots: u64,
    pub app_period_slots: u64,
    pub t_lock_slots: u64,
    pub cooldown_slots: u64,
    pub initial_phase_end: u64,
    pub dio_ext_capacity: usize,
    pub dao_ext_capacity: usize,
}

/// Network-wide accounting of application packets, keyed by origin.
#[derive(Debug, Default)]
pub struct DataLedger {
    pub generated: Vec<u64>,
    pub delivered: Vec<u64>,
    pub dropped: Vec<u64>,
    /// Delivered (order, latency in slots) samples per origin.
    pub deliveries: Vec<Vec<(u32, u64)>>,
    /// Debug: drop counts by path.
    pub drop_paths: [u64; 9],
}

impl DataLedger {
    pub fn new(n: usize) -> DataLedger {
        DataLedger {
            generated: vec![0; n],
            delivered: vec![0; n],
            dropped: vec![0; n],
            deliveries: vec![Vec::new(); n],
            drop_paths: [0; 9],
        }
    }
}

/// Mutable run-wide sinks threaded through the handlers.
pub(crate) struct SimSinks<'a> {
    pub trace: &'a mut Trace,
    pub ledger: &'a mut DataLedger,
}

/// What the radio does this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RadioPlan {
    /// Pledge outside its scan slot: no action, no energy (desynchronized
    /// slots are not charged).
    Off,
    Sleep,
    Listen {
        channel: u16,
        cell: Option<CellKind>,
    },
    Tx {
        queue_idx: usize,
        channel: u16,
        dst: Option<NodeId>,
        /// Contention cell (minimal / autonomous / temporary): failures feed
        /// the shared backoff keyed by `backoff_key`.
        contention: bool,
        backoff_key: Option<u16>,
        /// Negotiated cell: outcomes feed the link-quality estimate.
        dedicated: bool,
    },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NodeCounters {
    pub tx_frames: u64,
    pub rx_frames: u64,
    pub eb_sent: u64,
    pub drops: DropCounters,
    pub illegal_status_events: u32,
    pub parent_switches: u32,
    pub data_generated: u64,
}

/// A reserving DAO in flight (PB join or parent switch).
#[derive(Debug, Clone)]
struct PbPending {
    target: NodeId,
    joining: bool,
    new_rank: u32,
    old_parent: Option<NodeId>,
    /// Set when a zero-grant ACK pushed us onto the classic 6P path.
    fallback_at: Option<Asn>,
    fallback_attempts: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TxnRole {
    Requester,
    Responder,
}

#[derive(Debug, Clone)]
struct TxnEntry {
    txn: SixpTransaction,
    role: TxnRole,
}

pub struct NodeRuntime {
    pub id: NodeId,
    pub seed: u64,
    pub is_root: bool,
    pub status: NodeStatus,
    pub schedule: SlotframeSchedule,
    pub queue: TschQueue,

    // Randomness, one stream per purpose.
    rng_beacon: ChaCha8Rng,
    rng_trickle: ChaCha8Rng,
    rng_traffic: ChaCha8Rng,
    rng_sixtop: ChaCha8Rng,
    rng_backoff: ChaCha8Rng,
    rng_pb: ChaCha8Rng,

    next_pkt_seq: u64,

    // Synchronization state.
    eb_heard: u32,
    join_proxy: Option<NodeId>,
    handshake_done: bool,
    handshake_retry_at: Option<Asn>,
    handshake_attempts: u32,
    last_rx: Asn,
    dis_retry_at: Option<Asn>,
    dis_attempts: u32,

    // RPL state.
    pub rank: u32,
    pub parent: Option<NodeId>,
    neighbors: Vec<NeighborEntry>,
    trickle: TrickleState,
    next_dao: Option<Asn>,
    /// Root only: child -> parent edges learned from DAOs.
    pub routes: BTreeMap<u16, u16>,

    // Timers.
    next_eb: Option<Asn>,
    eb_window: u64,
    eb_anchor: Asn,
    scan_channel: u16,
    next_app: Option<Asn>,
    app_order: u32,

    // Link supervision: consecutive retry exhaustions toward the parent.
    parent_fail_streak: u8,

    // 6P state.
    txns: Vec<TxnEntry>,
    seqnum: u32,
    sixp_retry_at: Option<Asn>,
    usage: CellUsageWindow,
    last_pressure: Option<Asn>,

    // PB state.
    pb_pending: Option<PbPending>,
    pb_retry_at: Option<Asn>,
    temp_rx_slots: Vec<u16>,

    /// Candidates that recently failed to serve a reservation, with the ASN
    /// their penalty expires.
    deprioritized: Vec<(u16, u64)>,
    /// Nodes whose DAOs we recently forwarded: our routing descendants.
    /// Adopting one as parent would close a loop.
    recent_descendants: Vec<(u16, u64)>,

    // MAC state.
    backoffs: Vec<(Option<u16>, SharedBackoff)>,
    deadlines: BinaryHeap<Reverse<(u64, u16)>>,

    // Metrics.
    pub counters: NodeCounters,
    pub t_sync: Option<Asn>,
    pub t_join: Option<Asn>,
}

impl NodeRuntime {
    pub(crate) fn new(id: NodeId, is_root: bool, hub: &RngHub, cfg: &ScenarioConfig) -> NodeRuntime {
        let mut node = NodeRuntime {
            id,
            seed: cfg.rng_seed,
            is_root,
            status: NodeStatus::Pledge,
            schedule: SlotframeSchedule::new(cfg.slotframe_length),
            queue: TschQueue::new(cfg.queue_capacity),
            rng_beacon: hub.stream(id.index, Purpose::Beacon),
            rng_trickle: hub.stream(id.index, Purpose::Trickle),
            rng_traffic: hub.stream(id.index, Purpose::Traffic),
            rng_sixtop: hub.stream(id.index, Purpose::Sixtop),
            rng_backoff: hub.stream(id.index, Purpose::SharedBackoff),
            rng_pb: hub.stream(id.index, Purpose::Piggyback),
            next_pkt_seq: 0,
            eb_heard: 0,
            join_proxy: None,
            handshake_done: false,
            handshake_retry_at: None,
            handshake_attempts: 0,
            last_rx: Asn(0),
            dis_retry_at: None,
            dis_attempts: 0,
            rank: NO_RANK,
            parent: None,
            neighbors: Vec::new(),
            trickle: TrickleState::new(
                cfg.trickle_imin_slotframes * u64::from(cfg.slotframe_length),
                cfg.trickle_doublings,
                cfg.trickle_redundancy,
            ),
            next_dao: None,
            routes: BTreeMap::new(),
            next_eb: None,
            eb_window: 0,
            eb_anchor: Asn(0),
            scan_channel: 0,
            next_app: None,
            app_order: 0,
            parent_fail_streak: 0,
            txns: Vec::new(),
            seqnum: 0,
            sixp_retry_at: None,
            usage: CellUsageWindow::default(),
            last_pressure: None,
            pb_pending: None,
            pb_retry_at: None,
            temp_rx_slots: Vec::new(),
            deprioritized: Vec::new(),
            recent_descendants: Vec::new(),
            backoffs: Vec::new(),
            deadlines: BinaryHeap::new(),
            counters: NodeCounters::default(),
            t_sync: None,
            t_join: None,
        };
        if is_root {
            node.status = NodeStatus::Joined;
            node.rank = crate::rpl::ROOT_RANK;
            node.t_sync = Some(Asn(0));
            node.t_join = Some(Asn(0));
            node.install_bootstrap_cells(cfg.nb_channels);
            node.next_eb = Some(Asn(0));
            node.eb_window = 1;
            node.eb_anchor = Asn(0);
            node.trickle.start(Asn(0), &mut node.rng_trickle);
        }
        node
    }

    fn alloc_pkt_id(&mut self) -> u64 {
        let id = (u64::from(self.id.index) << 40) | self.next_pkt_seq;
        self.next_pkt_seq += 1;
        id
    }

    fn make_packet(&mut self, kind: PacketKind, route: Route, now: Asn) -> Packet {
        Packet {
            id: self.alloc_pkt_id(),
            kind,
            route,
            created: now,
            enqueued: now,
            attempts: 0,
            hops: 0,
        }
    }

    // ------------------------------------------------------------------
    // Schedule management
    // ------------------------------------------------------------------

    fn own_autonomous_slot(&self, frame_len: u16) -> u16 {
        autonomous_slot(self.id, frame_len)
    }

    /// Installs the minimal shared cell and the autonomous Rx cell (the
    /// "permanent DIO slot" every neighbor can derive from our MAC hash).
    fn install_bootstrap_cells(&mut self, nb_channels: u16) {
        let frame_len = self.schedule.length();
        self.schedule.insert(ScheduleEntry::minimal());
        let slot = self.own_autonomous_slot(frame_len);
        self.schedule.insert(ScheduleEntry {
            coord: CellCoord::new(slot, autonomous_channel(self.id.mac_hash, nb_channels)),
            option: CellOption::Rx,
            kind: CellKind::AutonomousRx,
            neighbor: None,
            lock_deadline: None,
        });
    }

    /// Ensures an on-demand autonomous Tx cell toward `peer` exists, unless
    /// a negotiated cell already serves it or the slot is taken.
    fn ensure_autotx(&mut self, peer: NodeId, ctx: &SimCtx) {
        if self.has_negotiated_tx_to(peer) {
            return;
        }
        let slot = autonomous_slot(peer, ctx.frame_len);
        match self.schedule.entry(slot) {
            Some(e) if e.kind == CellKind::AutonomousTx && e.neighbor == Some(peer) => {}
            Some(_) => {} // blocked: traffic to `peer` rides the minimal cell
            None => {
                self.schedule.insert(ScheduleEntry {
                    coord: CellCoord::new(
                        slot,
                        autonomous_channel(peer.mac_hash, ctx.cfg.nb_channels),
                    ),
                    option: CellOption::Tx,
                    kind: CellKind::AutonomousTx,
                    neighbor: Some(peer),
                    lock_deadline: None,
                });
            }
        }
    }

    fn drop_autotx_if_idle(&mut self, peer: NodeId, ctx: &SimCtx) {
        let slot = autonomous_slot(peer, ctx.frame_len);
        let still_needed = self
            .queue
            .iter()
            .any(|p| self.resolve_next_hop(p) == Some(peer));
        if still_needed {
            return;
        }
        if let Some(e) = self.schedule.entry(slot) {
            if e.kind == CellKind::AutonomousTx && e.neighbor == Some(peer) {
                self.schedule.remove(slot);
            }
        }
    }

    /// Free slots available for cell allocation: schedule-free minus the
    /// autonomous lanes of every known peer (blocking a peer's lane severs
    /// the fallback control path toward it). Peers are drawn from the
    /// neighbor table, the join proxy, every schedule entry's binding, and
    /// optionally the other end of the transaction being served.
    fn allocatable_slots(&self, extra_peer: Option<NodeId>, ctx: &SimCtx) -> Vec<u16> {
        let mut lanes: Vec<u16> = self
            .neighbors
            .iter()
            .map(|n| autonomous_slot(n.id, ctx.frame_len))
            .collect();
        if let Some(proxy) = self.join_proxy {
            lanes.push(autonomous_slot(proxy, ctx.frame_len));
        }
        for e in self.schedule.iter_entries() {
            if let Some(peer) = e.neighbor {
                lanes.push(autonomous_slot(peer, ctx.frame_len));
            }
        }
        if let Some(peer) = extra_peer {
            lanes.push(autonomous_slot(peer, ctx.frame_len));
        }
        self.schedule
            .free_slots()
            .into_iter()
            .filter(|s| !lanes.contains(s))
            .collect()
    }

    /// At most one relocation per frame: find a queued unicast whose next
    /// hop lacks both a negotiated cell and a free autonomous lane because
    /// one of our negotiated cells occupies that slot; evict the squatter.
    fn repair_blocked_lane(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let mut victim: Option<(u16, NodeId)> = None;
        for pkt in self.queue.iter() {
            if pkt.kind_is_shared_pinned() {
                continue;
            }
            let Some(peer) = self.resolve_next_hop(pkt) else { continue };
            if self.has_negotiated_tx_to(peer) {
                continue;
            }
            let slot = autonomous_slot(peer, ctx.frame_len);
            match self.schedule.entry(slot) {
                Some(e) if e.kind == CellKind::Negotiated => {
                    victim = Some((slot, e.neighbor.unwrap_or(peer)));
                    break;
                }
                _ => {}
            }
        }
        let Some((slot, squatter)) = victim else { return };
        let Some(entry) = self.schedule.remove(slot) else { return };
        self.initiate_delete(squatter, vec![entry.coord], now, ctx, sinks);
    }

    fn has_negotiated_rx_from(&self, peer: NodeId) -> bool {
        self.schedule.iter_entries().any(|e| {
            e.kind == CellKind::Negotiated && e.option == CellOption::Rx && e.neighbor == Some(peer)
        })
    }

    fn has_negotiated_tx_to(&self, peer: NodeId) -> bool {
        self.schedule.iter_entries().any(|e| {
            e.kind == CellKind::Negotiated && e.option == CellOption::Tx && e.neighbor == Some(peer)
        })
    }

    fn negotiated_tx_count(&self, peer: NodeId) -> u16 {
        self.schedule
            .iter_entries()
            .filter(|e| {
                e.kind == CellKind::Negotiated
                    && e.option == CellOption::Tx
                    && e.neighbor == Some(peer)
            })
            .count() as u16
    }

    fn negotiated_tx_slots(&self, peer: NodeId) -> Vec<CellCoord> {
        self.schedule
            .iter_entries()
            .filter(|e| {
                e.kind == CellKind::Negotiated
                    && e.option == CellOption::Tx
                    && e.neighbor == Some(peer)
            })
            .map(|e| e.coord)
            .collect()
    }

    fn push_deadline(&mut self, deadline: Asn, slot: u16) {
        self.deadlines.push(Reverse((deadline.0, slot)));
    }

    /// Removes Locked and TemporaryDio entries whose deadline has strictly
    /// passed; returns how many cells were unlocked and resolves timed-out
    /// transactions.
    fn expire_deadlines(&mut self, now: Asn) -> u32 {
        let mut unlocked = 0;
        while let Some(&Reverse((deadline, slot))) = self.deadlines.peek() {
            if deadline >= now.0 {
                break;
            }
            self.deadlines.pop();
            let expired = match self.schedule.entry(slot) {
                Some(e)
                    if matches!(e.kind, CellKind::Locked | CellKind::TemporaryDio)
                        && e.lock_deadline == Some(Asn(deadline)) =>
                {
                    true
                }
                _ => false,
            };
            if expired {
                let entry = self.schedule.remove(slot).unwrap();
                if entry.kind == CellKind::Locked {
                    unlocked += 1;
                } else {
                    self.temp_rx_slots.retain(|&s| s != slot);
                }
            }
        }
        unlocked
    }

    /// Marks transactions whose lock window has passed as timed out,
    /// dropping any remaining locks they hold. A responder-side grant whose
    /// response never reached the requester is rolled back the same way.
    fn timeout_transactions(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let mut expired: Vec<TxnEntry> = Vec::new();
        self.txns.retain(|t| {
            if t.txn.lock_deadline < now {
                expired.push(t.clone());
                false
            } else {
                true
            }
        });
        for entry in expired {
            let rollback_kind = if entry.txn.state == SixpState::Done {
                CellKind::Negotiated
            } else {
                CellKind::Locked
            };
            for cell in &entry.txn.proposed {
                if let Some(e) = self.schedule.entry(cell.slot_offset) {
                    if e.kind == rollback_kind {
                        self.schedule.remove(cell.slot_offset);
                    }
                }
            }
            // Zombie messages of a dead transaction must not hit the air.
            let seq = entry.txn.seqnum;
            self.queue.purge(|p| sixp_seqnum(p) == Some(seq));
            sinks.trace.push(TraceEvent::SixpResolved {
                asn: now,
                requester: entry.txn.requester.index,
                responder: entry.txn.responder.index,
                seqnum: entry.txn.seqnum,
                granted: 0,
                timed_out: true,
            });
            if entry.role == TxnRole::Requester
                && entry.txn.reason == SixpReason::JoinOrSwitch
                && entry.txn.command == SixpCommandKind::Add
            {
                self.give_up_on_responder(entry.txn.responder, now, ctx);
                self.schedule_sixp_retry(now, ctx);
            }
        }
    }

    /// Sidelines a candidate that failed to serve a reservation; the next
    /// selection falls to the runner-up until the penalty lapses.
    fn deprioritize(&mut self, peer: NodeId, now: Asn, ctx: &SimCtx) {
        let until = now.0 + 60 * u64::from(ctx.frame_len);
        self.deprioritized.retain(|&(id, _)| id != peer.index);
        self.deprioritized.push((peer.index, until));
    }

    fn is_deprioritized(&self, peer: NodeId, now: Asn) -> bool {
        self.deprioritized
            .iter()
            .any(|&(id, until)| id == peer.index && now.0 < until)
    }

    /// Known routing descendant (direct cells or recently relayed DAOs);
    /// never a valid parent.
    fn is_descendant(&self, peer: NodeId, now: Asn) -> bool {
        self.has_negotiated_rx_from(peer)
            || self
                .recent_descendants
                .iter()
                .any(|&(id, until)| id == peer.index && now.0 < until)
    }

    fn schedule_pb_retry(&mut self, now: Asn, ctx: &SimCtx) {
        let frames = self
            .rng_pb
            .gen_range(ctx.cfg.sixp_retry_min_slotframes..=ctx.cfg.sixp_retry_max_slotframes);
        self.pb_retry_at = Some(Asn(now.0 + frames * u64::from(ctx.frame_len)));
    }

    fn schedule_sixp_retry(&mut self, now: Asn, ctx: &SimCtx) {
        let frames = self
            .rng_sixtop
            .gen_range(ctx.cfg.sixp_retry_min_slotframes..=ctx.cfg.sixp_retry_max_slotframes);
        self.sixp_retry_at = Some(Asn(now.0 + frames * u64::from(ctx.frame_len)));
    }

    fn backoff_pos(&mut self, key: Option<u16>) -> usize {
        match self.backoffs.iter().position(|(k, _)| *k == key) {
            Some(pos) => pos,
            None => {
                let cap = if key.is_some_and(|k| k & TEMP_KEY_FLAG != 0) {
                    TEMP_BACKOFF_CAP
                } else {
                    crate::mac::SHARED_BACKOFF_MAX_EXP
                };
                self.backoffs.push((key, SharedBackoff::with_cap(cap)));
                self.backoffs.len() - 1
            }
        }
    }

    fn backoff_for(&mut self, key: Option<u16>) -> &mut SharedBackoff {
        let pos = self.backoff_pos(key);
        &mut self.backoffs[pos].1
    }

    // ------------------------------------------------------------------
    // Status cycle
    // ------------------------------------------------------------------

    fn apply_status_event(
        &mut self,
        event: StatusEvent,
        now: Asn,
        sinks: &mut SimSinks,
    ) -> bool {
        let (next, legal) = advance_status(self.status, event);
        if !legal {
            self.counters.illegal_status_events += 1;
            return false;
        }
        if next != self.status {
            sinks.trace.push(TraceEvent::Status {
                asn: now,
                node: self.id.index,
                from: self.status,
                to: next,
            });
            self.status = next;
        }
        true
    }

    fn synchronize(
        &mut self,
        proxy: NodeId,
        proxy_join_capable: bool,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if !self.apply_status_event(StatusEvent::EbThresholdReached, now, sinks) {
            return;
        }
        self.t_sync.get_or_insert(now);
        self.last_rx = now;
        self.join_proxy = proxy_join_capable.then_some(proxy);
        self.install_bootstrap_cells(ctx.cfg.nb_channels);
        // Time synchronization propagates from here on: beacons start now,
        // advertising join capability only once routable.
        self.eb_anchor = now;
        self.eb_window = 0;
        self.schedule_next_eb(ctx);
        if ctx.cfg.secure_joining {
            // Stagger the first solicitation: synchronization often happens
            // in bursts (one beacon serves many pledges), and a thundering
            // herd of join requests would monopolize the shared cell. With
            // no join-capable proxy yet, the next capable beacon arms this.
            if self.join_proxy.is_some() {
                let jitter = self
                    .rng_backoff
                    .gen_range(1..=HANDSHAKE_RETRY_SLOTFRAMES * u64::from(ctx.frame_len));
                self.handshake_retry_at = Some(Asn(now.0 + jitter));
            }
        } else {
            self.handshake_done = true;
            if let Some(proxy) = self.join_proxy {
                self.send_dis(proxy, now, ctx, sinks);
            }
        }
    }

    fn send_dis(&mut self, proxy: NodeId, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let pkt = self.make_packet(
            PacketKind::Dis { broadcast: false },
            Route::Link(proxy),
            now,
        );
        self.ensure_autotx(proxy, ctx);
        self.enqueue_packet(pkt, now, ctx, sinks);
        self.dis_retry_at = Some(Asn(now.0 + DIS_RETRY_SLOTFRAMES * u64::from(ctx.frame_len)));
    }

    /// Full reset back to pledge; volatile protocol state is flushed and
    /// queued application packets are charged as drops.
    fn reset_to_pledge(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if !self.apply_status_event(StatusEvent::DySyncExpired, now, sinks) {
            return;
        }
        self.flush_queue_on_detach(sinks);
        self.schedule = SlotframeSchedule::new(ctx.frame_len);
        self.deadlines.clear();
        self.eb_heard = 0;
        self.join_proxy = None;
        self.handshake_done = false;
        self.handshake_retry_at = None;
        self.handshake_attempts = 0;
        self.dis_retry_at = None;
        self.detach_routing(now);
        self.neighbors.clear();
        self.txns.clear();
        self.sixp_retry_at = None;
        self.pb_pending = None;
        self.temp_rx_slots.clear();
        self.next_eb = None;
        self.next_dao = None;
        self.pb_retry_at = None;
        self.deprioritized.clear();
        self.recent_descendants.clear();
        self.backoffs.clear();
    }

    fn detach_routing(&mut self, _now: Asn) {
        self.parent_fail_streak = 0;
        self.parent = None;
        self.rank = if self.is_root { crate::rpl::ROOT_RANK } else { NO_RANK };
        self.usage.reset();
    }

    fn flush_queue_on_detach(&mut self, sinks: &mut SimSinks) {
        let mut dropped_origins: Vec<u16> = Vec::new();
        self.queue.purge(|p| {
            if let PacketKind::Data { origin, .. } = &p.kind {
                dropped_origins.push(origin.index);
            }
            true
        });
        for origin in dropped_origins {
            self.counters.drops.no_route += 1;
            sinks.ledger.dropped[usize::from(origin)] += 1;
            sinks.ledger.drop_paths[6] += 1;
        }
    }

    /// Parent link failed: regress to synchronized, drop uplink cells and
    /// upward traffic, and let the next DIO re-attach us.
    fn lose_parent(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if self.status != NodeStatus::Joined {
            return;
        }
        if !self.apply_status_event(StatusEvent::ParentLinkLost, now, sinks) {
            return;
        }
        if let Some(old) = self.parent {
            for cell in self.negotiated_tx_slots(old) {
                self.schedule.remove(cell.slot_offset);
            }
        }
        // Upward packets have no next hop anymore, and a detached node has
        // no business advertising the DODAG.
        let mut dropped_origins: Vec<u16> = Vec::new();
        let mut control_dropped = 0u64;
        self.queue.purge(|p| {
            let stale_advert = matches!(p.kind, PacketKind::Dio(_));
            if matches!(p.route, Route::Upward) || stale_advert {
                if let PacketKind::Data { origin, .. } = &p.kind {
                    dropped_origins.push(origin.index);
                } else {
                    control_dropped += 1;
                }
                true
            } else {
                false
            }
        });
        for origin in dropped_origins {
            self.counters.drops.no_route += 1;
            sinks.ledger.dropped[usize::from(origin)] += 1;
            sinks.ledger.drop_paths[5] += 1;
        }
        self.counters.drops.no_route += control_dropped;
        self.detach_routing(now);
        self.pb_pending = None;
        // Solicit fresh topology information right away; the broadcast DIS
        // also tells our former children their uplink is gone.
        self.dis_attempts = 2; // next solicitation broadcasts
        self.dis_retry_at = Some(Asn(now.0 + u64::from(ctx.frame_len)));
    }

    fn joined_setup(&mut self, parent: NodeId, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if !self.apply_status_event(StatusEvent::JoinCompleted, now, sinks) {
            return;
        }
        let first_join = self.t_join.is_none();
        self.t_join.get_or_insert(now);
        sinks.trace.push(TraceEvent::Joined {
            asn: now,
            node: self.id.index,
            parent: parent.index,
        });
        self.trickle.start(now, &mut self.rng_trickle);
        self.next_dao = Some(Asn(now.0 + ctx.dao_period_slots));
        if first_join {
            let jitter = self.rng_traffic.gen_range(0..ctx.app_period_slots.max(1));
            self.next_app = Some(Asn(now.0 + jitter));
        }
        self.dis_retry_at = None;
    }

    fn schedule_next_eb(&mut self, ctx: &SimCtx) {
        let period = ctx.eb_period_slots.max(1);
        let offset = self.rng_beacon.gen_range(0..period);
        self.next_eb = Some(Asn(self.eb_anchor.0 + self.eb_window * period + offset));
        self.eb_window += 1;
    }

    // ------------------------------------------------------------------
    // Queueing
    // ------------------------------------------------------------------

    /// Enqueues with overflow accounting; fires the PB queue-pressure hook
    /// on accepted packets when free space falls to the threshold.
    pub(crate) fn enqueue_packet(
        &mut self,
        pkt: Packet,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        let is_data = matches!(pkt.kind, PacketKind::Data { .. });
        let data_origin = match &pkt.kind {
            PacketKind::Data { origin, .. } => Some(origin.index),
            _ => None,
        };
        if let (Route::Link(peer), false) = (&pkt.route, pkt.kind_is_shared_pinned()) {
            self.ensure_autotx(*peer, ctx);
        }
        let mut outcome = self.queue.enqueue(pkt, now);
        if let EnqueueOutcome::Dropped(returned) = outcome {
            // Control preempts data under overflow: evict the newest data
            // packet to admit the control frame.
            outcome = EnqueueOutcome::Dropped(returned);
            if !is_data {
                if let Some(victim_idx) = self.queue.rposition_data() {
                    let victim = self.queue.remove(victim_idx).unwrap();
                    self.counters.drops.qfull_data += 1;
                    if let PacketKind::Data { origin, .. } = &victim.kind {
                        sinks.ledger.dropped[usize::from(origin.index)] += 1;
                        sinks.ledger.drop_paths[1] += 1;
                    }
                    if let EnqueueOutcome::Dropped(returned) = outcome {
                        outcome = self.queue.enqueue(*returned, now);
                    }
                }
            }
        }
        match outcome {
            EnqueueOutcome::Dropped(_) => {
                if is_data {
                    self.counters.drops.qfull_data += 1;
                    if let Some(origin) = data_origin {
                        sinks.ledger.dropped[usize::from(origin)] += 1;
                        sinks.ledger.drop_paths[0] += 1;
                    }
                } else {
                    self.counters.drops.qfull_control += 1;
                }
            }
            EnqueueOutcome::Accepted { free_after } => {
                if ctx.cfg.is_pb() {
                    self.queue_pressure_hook(free_after, now, ctx, sinks);
                }
            }
        }
        debug_assert!(self.queue.len() <= self.queue.capacity());
    }

    /// Early cell reservation: when the queue is nearly full and the
    /// cooldown has elapsed, ask the preferred parent for one more cell.
    fn queue_pressure_hook(&mut self, free_after: usize, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if free_after > ctx.cfg.queue_free_threshold {
            return;
        }
        if self.status != NodeStatus::Joined {
            return;
        }
        // Overflow protection serves the application backlog; pure control
        // bursts drain on their own (and preempt data when space runs out).
        let has_data = self
            .queue
            .iter()
            .any(|p| matches!(p.kind, PacketKind::Data { .. }));
        if !has_data {
            return;
        }
        let Some(parent) = self.parent else { return };
        if let Some(last) = self.last_pressure {
            if now.0 - last.0 < ctx.cooldown_slots {
                return;
            }
        }
        if self.has_txn_with(parent) {
            return;
        }
        self.last_pressure = Some(now);
        self.initiate_add(
            parent,
            ctx.cfg.cells_on_pressure,
            SixpReason::QueuePressure,
            now,
            ctx,
            sinks,
        );
    }

    fn resolve_next_hop(&self, pkt: &Packet) -> Option<NodeId> {
        match &pkt.route {
            Route::Broadcast => None,
            Route::Link(peer) => Some(*peer),
            Route::Upward => self.parent,
            Route::SourceRoute { hops, next } => hops.get(*next).copied(),
        }
    }

    // ------------------------------------------------------------------
    // 6P
    // ------------------------------------------------------------------

    fn has_txn_with(&self, peer: NodeId) -> bool {
        self.txns
            .iter()
            .any(|t| t.txn.requester == peer || t.txn.responder == peer)
    }

    pub(crate) fn initiate_add(
        &mut self,
        responder: NodeId,
        num_cells: u8,
        reason: SixpReason,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if self.has_txn_with(responder) {
            return;
        }
        let style = ctx.cfg.sixp_add_style;
        let proposed = if style == SixpAddStyle::TwoStep {
            let free = self.allocatable_slots(Some(responder), ctx);
            match sample_proposal(
                &free,
                ctx.cfg.sixp_proposal_cells,
                ctx.cfg.nb_channels,
                &mut self.rng_sixtop,
            ) {
                Some(cells) => cells,
                None => {
                    // InsufficientCells: abort without locking anything.
                    if reason == SixpReason::JoinOrSwitch {
                        self.schedule_sixp_retry(now, ctx);
                    }
                    return;
                }
            }
        } else {
            Vec::new()
        };
        let deadline = Asn(now.0 + ctx.t_lock_slots);
        for cell in &proposed {
            let ok = self.schedule.insert(ScheduleEntry {
                coord: *cell,
                option: CellOption::Tx,
                kind: CellKind::Locked,
                neighbor: Some(responder),
                lock_deadline: Some(deadline),
            });
            debug_assert!(ok, "proposal sampled from free slots");
            self.push_deadline(deadline, cell.slot_offset);
        }
        self.seqnum += 1;
        let seqnum = self.seqnum;
        let txn = SixpTransaction {
            requester: self.id,
            responder,
            kind: match style {
                SixpAddStyle::TwoStep => SixpKind::TwoStep,
                SixpAddStyle::ThreeStep => SixpKind::ThreeStep,
            },
            command: SixpCommandKind::Add,
            reason,
            num_cells,
            proposed: proposed.clone(),
            state: SixpState::AwaitingResponse,
            lock_deadline: deadline,
            seqnum,
        };
        self.txns.push(TxnEntry {
            txn,
            role: TxnRole::Requester,
        });
        sinks.trace.push(TraceEvent::SixpInitiated {
            asn: now,
            requester: self.id.index,
            responder: responder.index,
            reason,
            seqnum,
            is_delete: false,
        });
        let cmd = SixpCommand {
            requester: self.id,
            responder,
            seqnum,
        };
        let pkt = self.make_packet(
            PacketKind::SixpAddRequest {
                cmd,
                num_cells,
                proposed,
            },
            Route::Link(responder),
            now,
        );
        sinks.trace.push(TraceEvent::SixpPacket {
            asn: now,
            from: self.id.index,
            to: responder.index,
            seqnum,
        });
        self.enqueue_packet(pkt, now, ctx, sinks);
    }

    fn initiate_delete(
        &mut self,
        responder: NodeId,
        cells: Vec<CellCoord>,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if cells.is_empty() || self.has_txn_with(responder) {
            return;
        }
        self.seqnum += 1;
        let seqnum = self.seqnum;
        self.txns.push(TxnEntry {
            txn: SixpTransaction {
                requester: self.id,
                responder,
                kind: SixpKind::TwoStep,
                command: SixpCommandKind::Delete,
                reason: SixpReason::JoinOrSwitch,
                num_cells: cells.len() as u8,
                proposed: Vec::new(),
                state: SixpState::AwaitingResponse,
                lock_deadline: Asn(now.0 + ctx.t_lock_slots),
                seqnum,
            },
            role: TxnRole::Requester,
        });
        sinks.trace.push(TraceEvent::SixpInitiated {
            asn: now,
            requester: self.id.index,
            responder: responder.index,
            reason: SixpReason::JoinOrSwitch,
            seqnum,
            is_delete: true,
        });
        let cmd = SixpCommand {
            requester: self.id,
            responder,
            seqnum,
        };
        let pkt = self.make_packet(
            PacketKind::SixpDeleteRequest { cmd, cells },
            Route::Link(responder),
            now,
        );
        sinks.trace.push(TraceEvent::SixpPacket {
            asn: now,
            from: self.id.index,
            to: responder.index,
            seqnum,
        });
        self.enqueue_packet(pkt, now, ctx, sinks);
    }

    // ------------------------------------------------------------------
    // RPL adoption
    // ------------------------------------------------------------------

    fn neighbor_mut(&mut self, id: NodeId) -> Option<&mut NeighborEntry> {
        self.neighbors.iter_mut().find(|n| n.id == id)
    }

    fn neighbor(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.neighbors.iter().find(|n| n.id == id)
    }

    fn parent_rank(&self) -> Option<u32> {
        let parent = self.parent?;
        self.neighbor(parent).map(|n| n.rank)
    }

    /// The parent rank this node last adopted its own rank from, if the
    /// entry still exists.
    pub fn parent_rank_view(&self) -> Option<u32> {
        self.parent_rank()
    }

    /// Benchmark-mode adoption: switch immediately, negotiate cells after.
    fn msf_adopt(&mut self, candidate: NodeId, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let cand_rank = match self.neighbor(candidate) {
            Some(n) => n.rank,
            None => return,
        };
        let old = self.parent;
        if let Some(old_parent) = old {
            let cells = self.negotiated_tx_slots(old_parent);
            for cell in &cells {
                self.schedule.remove(cell.slot_offset);
            }
            self.initiate_delete(old_parent, cells, now, ctx, sinks);
            self.counters.parent_switches += 1;
        }
        self.parent = Some(candidate);
        let new_rank = compute_rank_of0(
            cand_rank,
            ctx.cfg.rank_step,
            self.neighbor(candidate).map_or(1.0, |n| n.link_quality),
            ctx.cfg.rank_stretch,
        );
        if new_rank != self.rank && self.status == NodeStatus::Joined {
            self.trickle.reset_inconsistent(now, &mut self.rng_trickle);
        }
        self.rank = new_rank;
        self.usage.reset();
        sinks.trace.push(TraceEvent::ParentSwitch {
            asn: now,
            node: self.id.index,
            old: old.map(|p| p.index),
            new: candidate.index,
        });
        // Cell reservation is kicked off first so the parent-switch DAO can
        // ride the negotiated cell once granted.
        self.initiate_add(candidate, 1, SixpReason::JoinOrSwitch, now, ctx, sinks);
        let dao = self.make_packet(
            PacketKind::Dao(DaoContent {
                origin: self.id,
                announced_parent: candidate,
                kind: DaoKind::ParentSwitch,
                pb: None,
            }),
            Route::Upward,
            now,
        );
        self.enqueue_packet(dao, now, ctx, sinks);
    }

    /// PB-mode adoption: run the slot-aware switching procedure and, on a
    /// Switch decision, stage the reserving DAO toward the candidate.
    fn pb_adopt(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if self.pb_pending.is_some() || self.sixp_retry_at.is_some() {
            return;
        }
        let current_slot = now.slot_offset(ctx.frame_len);
        let candidates: Vec<ParentCandidate> = self
            .neighbors
            .iter()
            .filter(|n| n.link_quality >= CANDIDATE_QUALITY_FLOOR)
            .filter(|n| !self.is_descendant(n.id, now))
            .filter(|n| !self.is_deprioritized(n.id, now))
            .filter_map(|n| {
                n.advertised_free.as_ref().map(|free| ParentCandidate {
                    id: n.id,
                    rank: n.rank,
                    advertised_free: free.clone(),
                })
            })
            .collect();
        let child_free = self.schedule.free_slots();
        let cells_old = self.parent.map_or(0, |p| self.negotiated_tx_count(p));
        let decision = parent_switch_decision(
            &candidates,
            &child_free,
            self.parent,
            self.parent_rank(),
            cells_old,
            current_slot,
            ctx.frame_len,
            ctx.cfg.min_nb,
            ctx.cfg.max_cells_at_once,
        );
        let SwitchDecision::Switch { parent: target, nb, .. } = decision else {
            return;
        };
        let target_rank = self.neighbor(target).map(|n| n.rank).unwrap_or(NO_RANK);
        let new_rank = compute_rank_of0(
            target_rank,
            ctx.cfg.rank_step,
            self.neighbor(target).map_or(1.0, |n| n.link_quality),
            ctx.cfg.rank_stretch,
        );
        self.pb_pending = Some(PbPending {
            target,
            joining: self.parent.is_none(),
            new_rank,
            old_parent: self.parent,
            fallback_at: None,
            fallback_attempts: 0,
        });
        sinks.trace.push(TraceEvent::DaoReserving {
            asn: now,
            node: self.id.index,
            target: target.index,
            nb,
        });
        // Stage transmit opportunities inside the candidate's proposed
        // temporary slots; the permanent (autonomous) slot is the fallback.
        self.install_temp_tx_toward(target, now, ctx);
        self.ensure_autotx(target, ctx);
        let dao = self.make_packet(
            PacketKind::Dao(DaoContent {
                origin: self.id,
                announced_parent: target,
                kind: DaoKind::ParentSwitch,
                pb: Some(PbDaoPayload {
                    selected_slots: Vec::new(),
                    child_free_slots: crate::pb::SlotListCodec::free_list(&[]),
                    requested_count: nb,
                }),
            }),
            Route::Link(target),
            now,
        );
        self.enqueue_packet(dao, now, ctx, sinks);
    }

    /// Picks `ceil(n / ratio)` of the target's live proposed slots and opens
    /// temporary Tx cells there for the reserving DAO.
    fn install_temp_tx_toward(&mut self, target: NodeId, now: Asn, ctx: &SimCtx) {
        let Some(entry) = self.neighbor(target) else { return };
        let proposed: Vec<u16> = entry.live_proposed(now).to_vec();
        let expiry = entry.proposal_expiry;
        if proposed.is_empty() {
            return;
        }
        let pick_count = proposed.len().div_ceil(usize::from(ctx.cfg.slot_selection_ratio));
        let mut pool = proposed;
        let channel = autonomous_channel(target.mac_hash, ctx.cfg.nb_channels);
        let mut picked = 0;
        while picked < pick_count && !pool.is_empty() {
            let i = self.rng_pb.gen_range(0..pool.len());
            let slot = pool.swap_remove(i);
            if self.schedule.is_free(slot) {
                self.schedule.insert(ScheduleEntry {
                    coord: CellCoord::new(slot, channel),
                    option: CellOption::Tx,
                    kind: CellKind::TemporaryDio,
                    neighbor: Some(target),
                    lock_deadline: Some(expiry),
                });
                self.push_deadline(expiry, slot);
                picked += 1;
            }
        }
    }

    fn clear_temp_tx(&mut self) {
        let slots: Vec<u16> = self
            .schedule
            .iter_entries()
            .filter(|e| e.kind == CellKind::TemporaryDio && e.option == CellOption::Tx)
            .map(|e| e.coord.slot_offset)
            .collect();
        for slot in slots {
            self.schedule.remove(slot);
        }
    }

    // ------------------------------------------------------------------
    // Timer phase
    // ------------------------------------------------------------------

    pub(crate) fn phase_timers(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        self.expire_deadlines(now);
        if !self.txns.is_empty() {
            self.timeout_transactions(now, ctx, sinks);
        }

        if self.status != NodeStatus::Pledge && !self.is_root {
            // Dy_sync: silence long enough means we lost the network.
            if now.0.saturating_sub(self.last_rx.0) > ctx.dy_sync_slots {
                self.reset_to_pledge(now, ctx, sinks);
                return;
            }
        }

        // Once per frame: neighbor staleness and parent silence.
        if now.slot_offset(ctx.frame_len) == 0 && self.status != NodeStatus::Pledge {
            self.frame_housekeeping(now, ctx, sinks);
        }

        if self.status != NodeStatus::Pledge {
            if let Some(at) = self.next_eb {
                if now >= at {
                    let pkt = self.make_packet(
                        PacketKind::Eb {
                            join_capable: self.status == NodeStatus::Joined,
                        },
                        Route::Broadcast,
                        now,
                    );
                    self.enqueue_packet(pkt, now, ctx, sinks);
                    self.counters.eb_sent += 1;
                    self.schedule_next_eb(ctx);
                }
            }
        }

        if self.status == NodeStatus::Joined {
            if let Some(TrickleAction::Transmit) = self.trickle.tick(now, &mut self.rng_trickle) {
                let pkt = self.make_packet(
                    PacketKind::Dio(DioContent { rank: self.rank, pb: None }),
                    Route::Broadcast,
                    now,
                );
                self.enqueue_packet(pkt, now, ctx, sinks);
            }
            if let Some(at) = self.next_dao {
                if now >= at && !self.is_root {
                    let parent = self.parent;
                    if let Some(parent) = parent {
                        let dao = self.make_packet(
                            PacketKind::Dao(DaoContent {
                                origin: self.id,
                                announced_parent: parent,
                                kind: DaoKind::Periodic,
                                pb: None,
                            }),
                            Route::Upward,
                            now,
                        );
                        self.enqueue_packet(dao, now, ctx, sinks);
                    }
                    self.next_dao = Some(Asn(now.0 + ctx.dao_period_slots));
                }
            }
        }

        // Application traffic: cadence anchored at first join, paused while
        // not joined.
        if let Some(at) = self.next_app {
            if now >= at {
                if self.status == NodeStatus::Joined && !self.is_root {
                    let origin = self.id;
                    let order = self.app_order;
                    self.app_order += 1;
                    self.counters.data_generated += 1;
                    sinks.ledger.generated[usize::from(origin.index)] += 1;
                    let pkt = self.make_packet(
                        PacketKind::Data {
                            origin,
                            order,
                            created: now,
                        },
                        Route::Upward,
                        now,
                    );
                    self.enqueue_packet(pkt, now, ctx, sinks);
                }
                self.next_app = Some(Asn(at.0 + ctx.app_period_slots));
            }
        }

        // Handshake retry: the join request or its response was lost.
        if let Some(at) = self.handshake_retry_at {
            if now >= at && self.status == NodeStatus::Synchronized && !self.handshake_done {
                if let Some(proxy) = self.join_proxy {
                    let pending = self
                        .queue
                        .position(|p| matches!(p.kind, PacketKind::JoinRequest));
                    if pending.is_none() {
                        let pkt = self.make_packet(PacketKind::JoinRequest, Route::Link(proxy), now);
                        self.enqueue_packet(pkt, now, ctx, sinks);
                    }
                }
                self.handshake_retry_at =
                    Some(Asn(now.0 + HANDSHAKE_RETRY_SLOTFRAMES * u64::from(ctx.frame_len)));
            }
        }

        // DIS retry: still parentless after the handshake, nudge again
        // (broadcast resets trickle timers around us).
        if let Some(at) = self.dis_retry_at {
            if now >= at && self.status == NodeStatus::Synchronized && self.handshake_done {
                let pending = self.queue.position(|p| matches!(p.kind, PacketKind::Dis { .. }));
                if pending.is_none() {
                    self.dis_attempts += 1;
                    // Unicast solicitation is cheap; the trickle-resetting
                    // broadcast is a last resort.
                    let pkt = match self.join_proxy {
                        Some(proxy) if self.dis_attempts % 3 != 0 => {
                            self.ensure_autotx(proxy, ctx);
                            self.make_packet(PacketKind::Dis { broadcast: false }, Route::Link(proxy), now)
                        }
                        _ => self.make_packet(PacketKind::Dis { broadcast: true }, Route::Broadcast, now),
                    };
                    self.enqueue_packet(pkt, now, ctx, sinks);
                }
                // Exponential pacing so a crowd of stuck solicitors cannot
                // saturate the shared cell.
                let base = DIS_RETRY_SLOTFRAMES * u64::from(ctx.frame_len);
                let scale = 1u64 << self.dis_attempts.min(3);
                let jitter = self.rng_backoff.gen_range(0..base.max(1));
                self.dis_retry_at = Some(Asn(now.0 + base * scale + jitter));
            }
        }

        // Re-run the slot-aware switching procedure from cached state after
        // a failed reserving DAO.
        if let Some(at) = self.pb_retry_at {
            if now >= at {
                self.pb_retry_at = None;
                if ctx.cfg.is_pb() && self.status != NodeStatus::Pledge {
                    self.pb_adopt(now, ctx, sinks);
                }
            }
        }

        // Deferred 6P ADD (retry after timeout/empty grant, or PB fallback).
        if let Some(at) = self.sixp_retry_at {
            if now >= at {
                self.sixp_retry_at = None;
                let target = match self.pb_pending.as_mut() {
                    Some(pending) if pending.fallback_at.is_some() => {
                        pending.fallback_attempts += 1;
                        if pending.fallback_attempts > 3 {
                            let target = pending.target;
                            self.pb_pending = None;
                            self.deprioritize(target, now, ctx);
                            self.schedule_pb_retry(now, ctx);
                            None
                        } else {
                            Some(pending.target)
                        }
                    }
                    _ => None,
                };
                if let Some(target) = target {
                    self.initiate_add(target, ctx.cfg.min_nb, SixpReason::JoinOrSwitch, now, ctx, sinks);
                } else if self.status != NodeStatus::Pledge && ctx.cfg.is_pb() {
                    // PB nodes only reach here for queue-pressure retries.
                } else if self.status != NodeStatus::Pledge {
                    match self.parent {
                        Some(parent) => {
                            if !self.has_negotiated_tx_to(parent) {
                                self.initiate_add(parent, 1, SixpReason::JoinOrSwitch, now, ctx, sinks);
                            }
                        }
                        None => self.msf_evaluate(now, ctx, sinks),
                    }
                }
            }
        }
    }

    fn frame_housekeeping(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        // Parent silence beyond the desynchronization window: the link is
        // dead (retry exhaustion catches active failures much faster).
        if self.status == NodeStatus::Joined && !self.is_root {
            if let Some(parent) = self.parent {
                let stale = self
                    .neighbor(parent)
                    .map(|n| now.0.saturating_sub(n.last_heard.0) > ctx.dy_sync_slots)
                    .unwrap_or(true);
                if stale {
                    self.lose_parent(now, ctx, sinks);
                    return;
                }
            }
        }
        // A parent whose dedicated link keeps failing is not worth keeping,
        // and a parent that routes its own traffic through us is a loop.
        if self.status == NodeStatus::Joined && !self.is_root {
            if let Some(parent) = self.parent {
                let poor = self
                    .neighbor(parent)
                    .map(|n| n.link_quality < PARENT_QUALITY_FLOOR)
                    .unwrap_or(false);
                if poor || self.is_descendant(parent, now) {
                    self.lose_parent(now, ctx, sinks);
                    return;
                }
            }
        }

        // Lane repair: a negotiated cell squatting on the autonomous slot of
        // a peer we currently need to reach starves the fallback control
        // path; relocate it (remove + 6P delete, capacity re-adapts).
        self.repair_blocked_lane(now, ctx, sinks);

        // Orphaned reserving state: the DAO is gone (overflow or purge) and
        // no fallback is running.
        if let Some(pending) = &self.pb_pending {
            if pending.fallback_at.is_none() {
                let queued = self.queue.position(|p| {
                    matches!(&p.kind, PacketKind::Dao(c) if c.pb.is_some() && c.origin == self.id)
                });
                if queued.is_none() {
                    self.pb_pending = None;
                    self.clear_temp_tx();
                    self.schedule_pb_retry(now, ctx);
                }
            }
        }

        // Forget neighbors long silent and release the cells negotiated with
        // them.
        let gc_window = 2 * ctx.dis_join_slots;
        let parent = self.parent;
        let stale_ids: Vec<NodeId> = self
            .neighbors
            .iter()
            .filter(|n| {
                Some(n.id) != parent && now.0.saturating_sub(n.last_heard.0) > gc_window
            })
            .map(|n| n.id)
            .collect();
        for id in stale_ids {
            self.neighbors.retain(|n| n.id != id);
            let slots: Vec<u16> = self
                .schedule
                .iter_entries()
                .filter(|e| e.kind == CellKind::Negotiated && e.neighbor == Some(id))
                .map(|e| e.coord.slot_offset)
                .collect();
            for slot in slots {
                self.schedule.remove(slot);
            }
        }
    }

    // ------------------------------------------------------------------
    // Planning (per-slot MAC decision)
    // ------------------------------------------------------------------

    pub(crate) fn plan_slot(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) -> RadioPlan {
        let slot = now.slot_offset(ctx.frame_len);
        if self.status == NodeStatus::Pledge {
            // Scan model: a pledge camps on one random channel per slotframe
            // and listens continuously; it hears whichever beacon lands
            // there. Desynchronized listening draws no accounted charge.
            if slot == 0 {
                self.scan_channel = self.rng_beacon.gen_range(0..ctx.cfg.nb_channels);
            }
            return RadioPlan::Listen {
                channel: self.scan_channel,
                cell: None,
            };
        }
        let Some(entry) = self.schedule.entry(slot).copied() else {
            if slot == beacon_slot(self.id, ctx.frame_len) {
                if let Some(idx) = self
                    .queue
                    .position(|p| matches!(p.kind, PacketKind::Eb { .. }))
                {
                    return RadioPlan::Tx {
                        queue_idx: idx,
                        channel: crate::model::hop_channel(
                            now,
                            autonomous_channel(self.id.mac_hash, ctx.cfg.nb_channels),
                            ctx.cfg.nb_channels,
                        ),
                        dst: None,
                        contention: false,
                        backoff_key: None,
                        dedicated: false,
                    };
                }
            }
            return RadioPlan::Sleep;
        };
        let channel = crate::model::hop_channel(now, entry.coord.channel_offset, ctx.cfg.nb_channels);
        match (entry.option, entry.kind) {
            (CellOption::Rx, CellKind::Locked) => RadioPlan::Sleep,
            (CellOption::Rx, CellKind::AutonomousRx) => {
                // The autonomous cell doubles as the beacon transmit slot:
                // advertisers never contend with the minimal cell, and
                // beacons from different senders land on different channels.
                if let Some(idx) = self
                    .queue
                    .position(|p| matches!(p.kind, PacketKind::Eb { .. }))
                {
                    RadioPlan::Tx {
                        queue_idx: idx,
                        channel,
                        dst: None,
                        contention: false,
                        backoff_key: None,
                        dedicated: false,
                    }
                } else {
                    RadioPlan::Listen { channel, cell: Some(CellKind::AutonomousRx) }
                }
            }
            (CellOption::Rx, kind) => RadioPlan::Listen { channel, cell: Some(kind) },
            (CellOption::TxRxShared, _) => {
                match self.pick_shared_packet(now, ctx, sinks) {
                    Some(idx) => {
                        if self.backoff_for(None).may_transmit() {
                            let dst = self
                                .queue
                                .get(idx)
                                .and_then(|p| self.resolve_next_hop(p));
                            self.prepare_tx_content(idx, dst, now, ctx, sinks);
                            RadioPlan::Tx {
                                queue_idx: idx,
                                channel,
                                dst,
                                contention: true,
                                backoff_key: None,
                                dedicated: false,
                            }
                        } else {
                            RadioPlan::Listen { channel, cell: Some(CellKind::Minimal) }
                        }
                    }
                    None => RadioPlan::Listen { channel, cell: Some(CellKind::Minimal) },
                }
            }
            (CellOption::Tx, kind) => {
                let peer = entry.neighbor;
                let idx = match kind {
                    CellKind::Locked => None,
                    CellKind::TemporaryDio => peer.and_then(|p| self.pick_reserving_dao(p)),
                    _ => peer.and_then(|p| self.pick_unicast_packet(p, now)),
                };
                // Usage accounting toward the parent for MSF adaptation.
                if kind == CellKind::Negotiated && peer.is_some() && peer == self.parent {
                    let verdict = self.usage.observe(
                        idx.is_some(),
                        ctx.cfg.msf_window,
                        ctx.cfg.msf_hi_threshold,
                        ctx.cfg.msf_lo_threshold,
                        self.negotiated_tx_count(peer.unwrap()),
                    );
                    if let Some(cmd) = verdict {
                        self.apply_adaptation(cmd, now, ctx, sinks);
                    }
                }
                match idx {
                    Some(queue_idx) => {
                        let contention = matches!(
                            kind,
                            CellKind::AutonomousTx | CellKind::TemporaryDio
                        );
                        let key = peer.map(|p| {
                            if kind == CellKind::TemporaryDio {
                                p.index | TEMP_KEY_FLAG
                            } else {
                                p.index
                            }
                        });
                        if contention && !self.backoff_for(key).may_transmit() {
                            return RadioPlan::Sleep;
                        }
                        self.prepare_tx_content(queue_idx, peer, now, ctx, sinks);
                        RadioPlan::Tx {
                            queue_idx,
                            channel,
                            dst: peer,
                            contention,
                            backoff_key: key,
                            dedicated: kind == CellKind::Negotiated,
                        }
                    }
                    None => RadioPlan::Sleep,
                }
            }
        }
    }

    fn apply_adaptation(&mut self, cmd: crate::sixtop::AdaptCommand, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let Some(parent) = self.parent else { return };
        match cmd {
            crate::sixtop::AdaptCommand::AddOne => {
                self.initiate_add(parent, 1, SixpReason::TrafficAdapt, now, ctx, sinks);
            }
            crate::sixtop::AdaptCommand::DeleteOne => {
                let mut cells = self.negotiated_tx_slots(parent);
                if cells.len() > 1 {
                    let cell = cells.pop().unwrap();
                    self.schedule.remove(cell.slot_offset);
                    self.initiate_delete(parent, vec![cell], now, ctx, sinks);
                }
            }
        }
    }

    /// Queued packet for the minimal shared cell. Priority: the secure-join
    /// handshake, then unicast control with no better cell (its only path),
    /// then broadcasts, which are periodic and loss-tolerant. Data never
    /// rides the shared cell.
    fn pick_shared_packet(&mut self, _now: Asn, ctx: &SimCtx, _sinks: &mut SimSinks) -> Option<usize> {
        let mut best: Option<(u8, usize)> = None;
        for (i, pkt) in self.queue.iter().enumerate() {
            let tier = match (&pkt.route, &pkt.kind) {
                (_, PacketKind::JoinRequest | PacketKind::JoinResponse) => Some(0),
                // A detached node must not advertise the DODAG it left;
                // time-sync beacons keep flowing from any synchronized node.
                (Route::Broadcast, PacketKind::Dio(_)) => {
                    if self.status == NodeStatus::Joined && self.rank != NO_RANK {
                        Some(2)
                    } else {
                        None
                    }
                }
                // Beacons ride the autonomous cell, not the shared cell.
                (Route::Broadcast, PacketKind::Eb { .. }) => None,
                (Route::Broadcast, _) => Some(2),
                (_, PacketKind::Data { .. }) => None,
                _ => match self.resolve_next_hop(pkt) {
                    Some(peer)
                        if !self.has_negotiated_tx_to(peer) && !self.has_autotx_to(peer, ctx) =>
                    {
                        Some(1)
                    }
                    _ => None,
                },
            };
            if let Some(t) = tier {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                    if t == 0 {
                        break;
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    fn has_autotx_to(&self, peer: NodeId, ctx: &SimCtx) -> bool {
        let slot = autonomous_slot(peer, ctx.frame_len);
        matches!(
            self.schedule.entry(slot),
            Some(e) if e.kind == CellKind::AutonomousTx && e.neighbor == Some(peer)
        )
    }

    fn pick_unicast_packet(&self, peer: NodeId, now: Asn) -> Option<usize> {
        let matches_peer = |p: &Packet| {
            !p.kind_is_shared_pinned()
                && data_ready(p, now)
                && self.resolve_next_hop(p) == Some(peer)
        };
        self.queue
            .position(|p| matches_peer(p) && p.kind.is_control())
            .or_else(|| self.queue.position(matches_peer))
    }

    fn pick_reserving_dao(&self, peer: NodeId) -> Option<usize> {
        self.queue.position(|p| {
            matches!(&p.kind, PacketKind::Dao(c) if c.pb.is_some())
                && self.resolve_next_hop(p) == Some(peer)
        })
    }

    /// Dequeue-time payload injection: DIO and reserving-DAO slot lists are
    /// rebuilt from the schedule as it stands at the transmit instant.
    fn prepare_tx_content(
        &mut self,
        queue_idx: usize,
        link_dst: Option<NodeId>,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if !ctx.cfg.is_pb() {
            // The benchmark still refreshes the advertised rank at dequeue.
            let rank = self.rank;
            if let Some(pkt) = self.queue.get_mut(queue_idx) {
                if let PacketKind::Dio(content) = &mut pkt.kind {
                    content.rank = rank;
                }
            }
            return;
        }
        let kind_tag = match self.queue.get(queue_idx).map(|p| &p.kind) {
            Some(PacketKind::Dio(_)) => 1,
            Some(PacketKind::Dao(c)) if c.pb.is_some() => 2,
            _ => 0,
        };
        match kind_tag {
            1 => self.inject_dio_payload(queue_idx, now, ctx, sinks),
            2 => self.inject_dao_payload(queue_idx, link_dst, now, ctx, sinks),
            _ => {}
        }
    }

    /// Refreshes the node's temporary Rx proposals and embeds free +
    /// proposed slot lists into the DIO about to leave the queue.
    fn inject_dio_payload(&mut self, queue_idx: usize, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if self.status != NodeStatus::Joined || self.rank == NO_RANK {
            return;
        }
        let target_count = if now.0 < ctx.initial_phase_end {
            ctx.cfg.proposed_slots_per_dio
        } else {
            ctx.cfg.post_initial_proposed_slots
        } as usize;
        let expiry = Asn(now.0 + u64::from(ctx.cfg.dio_cells_duration_slotframes) * u64::from(ctx.frame_len));
        // Refresh: extend surviving proposals, then top up from free slots.
        let mut kept = std::mem::take(&mut self.temp_rx_slots);
        kept.retain(|&s| {
            matches!(self.schedule.entry(s), Some(e) if e.kind == CellKind::TemporaryDio && e.option == CellOption::Rx)
        });
        self.temp_rx_slots = kept;
        while self.temp_rx_slots.len() > target_count {
            let slot = self.temp_rx_slots.pop().unwrap();
            self.schedule.remove(slot);
        }
        let channel = autonomous_channel(self.id.mac_hash, ctx.cfg.nb_channels);
        for i in 0..self.temp_rx_slots.len() {
            let slot = self.temp_rx_slots[i];
            if let Some(e) = self.schedule.entry_mut(slot) {
                e.lock_deadline = Some(expiry);
            }
            self.push_deadline(expiry, slot);
        }
        let mut free = self.allocatable_slots(None, ctx);
        while self.temp_rx_slots.len() < target_count && !free.is_empty() {
            let i = self.rng_pb.gen_range(0..free.len());
            let slot = free.swap_remove(i);
            self.schedule.insert(ScheduleEntry {
                coord: CellCoord::new(slot, channel),
                option: CellOption::Rx,
                kind: CellKind::TemporaryDio,
                neighbor: None,
                lock_deadline: Some(expiry),
            });
            self.push_deadline(expiry, slot);
            self.temp_rx_slots.push(slot);
        }
        let proposed = self.temp_rx_slots.clone();
        let list_budget = ctx
            .dio_ext_capacity
            .saturating_sub(1 + proposed.len());
        let codec = inject_free_list(
            &self.schedule,
            now.slot_offset(ctx.frame_len),
            list_budget,
            ctx.l_length,
        );
        let payload = PbDioPayload {
            free_slots: codec,
            proposed_slots: proposed,
            proposal_expiry: expiry,
        };
        if payload.wire_len() > ctx.dio_ext_capacity {
            sinks.trace.violation(
                now,
                format!(
                    "node {}: PB DIO extension {} bytes exceeds capacity {}",
                    self.id.index,
                    payload.wire_len(),
                    ctx.dio_ext_capacity
                ),
            );
        }
        let rank = self.rank;
        if let Some(pkt) = self.queue.get_mut(queue_idx) {
            if let PacketKind::Dio(content) = &mut pkt.kind {
                content.rank = rank;
                content.pb = Some(payload);
            }
        }
    }

    /// Builds the reserving-DAO payload at the transmit instant: nearest
    /// common slots toward the link destination plus the current free list.
    fn inject_dao_payload(
        &mut self,
        queue_idx: usize,
        link_dst: Option<NodeId>,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        let Some(dst) = link_dst else { return };
        let nb = match self.queue.get(queue_idx).map(|p| &p.kind) {
            Some(PacketKind::Dao(c)) => c.pb.as_ref().map(|p| p.requested_count).unwrap_or(0),
            _ => 0,
        };
        let my_free = self.allocatable_slots(Some(dst), ctx);
        let current_slot = now.slot_offset(ctx.frame_len);
        let advertised = self
            .neighbor(dst)
            .and_then(|n| n.advertised_free.clone());
        let pool: Vec<u16> = match &advertised {
            Some(adv) => my_free.iter().copied().filter(|s| adv.contains(s)).collect(),
            None => my_free.clone(),
        };
        let selected = select_nearest_slots(&pool, current_slot, usize::from(nb), ctx.frame_len);
        let list_budget = ctx.dao_ext_capacity.saturating_sub(1 + selected.len());
        let codec = inject_free_list(&self.schedule, current_slot, list_budget, ctx.l_length);
        let payload = PbDaoPayload {
            selected_slots: selected,
            child_free_slots: codec,
            requested_count: nb,
        };
        if payload.wire_len() > ctx.dao_ext_capacity {
            sinks.trace.violation(
                now,
                format!(
                    "node {}: PB DAO extension {} bytes exceeds capacity {}",
                    self.id.index,
                    payload.wire_len(),
                    ctx.dao_ext_capacity
                ),
            );
        }
        if let Some(pkt) = self.queue.get_mut(queue_idx) {
            if let PacketKind::Dao(content) = &mut pkt.kind {
                content.pb = Some(payload);
            }
        }
    }

    // ------------------------------------------------------------------
    // Transmission outcome application
    // ------------------------------------------------------------------

    /// Successful unicast (ACK in hand) or fired broadcast: pop the packet
    /// and settle protocol follow-ups.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn apply_tx_success(
        &mut self,
        queue_idx: usize,
        ack: Option<&LinkAck>,
        backoff_key: Option<u16>,
        contention: bool,
        dedicated: bool,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        let Some(pkt) = self.queue.remove(queue_idx) else { return };
        self.counters.tx_frames += 1;
        if contention {
            self.backoff_for(backoff_key).on_success();
        }
        if let Some(peer) = self.resolve_next_hop(&pkt) {
            self.drop_autotx_if_idle(peer, ctx);
        }
        if let PacketKind::SixpResponse { cmd, is_proposal: false, .. } = &pkt.kind {
            let seq = cmd.seqnum;
            self.txns
                .retain(|t| !(t.role == TxnRole::Responder && t.txn.seqnum == seq));
        }
        let Some(ack) = ack else { return };
        // The ACK itself is a reception: it refreshes synchronization and
        // the peer's liveness.
        self.last_rx = now;
        if ack.detached {
            self.handle_detached_peer(&pkt, ack.src, now, ctx, sinks);
            return;
        }
        if Some(ack.src) == self.parent {
            self.parent_fail_streak = 0;
        }
        if let Some(n) = self.neighbor_mut(ack.src) {
            n.last_heard = now;
            if dedicated {
                n.update_quality(true);
            }
        }
        if !ack.granted_slots.is_empty() {
            let channel = autonomous_channel(ack.src.mac_hash, ctx.cfg.nb_channels);
            for &slot in &ack.granted_slots {
                let ok = self.schedule.insert(ScheduleEntry {
                    coord: CellCoord::new(slot, channel),
                    option: CellOption::Tx,
                    kind: CellKind::Negotiated,
                    neighbor: Some(ack.src),
                    lock_deadline: None,
                });
                if !ok {
                    sinks.trace.violation(
                        now,
                        format!(
                            "node {}: ACK-granted slot {slot} no longer free locally",
                            self.id.index
                        ),
                    );
                }
            }
        }
        // Reserving-DAO completion for the originator.
        if let PacketKind::Dao(content) = &pkt.kind {
            if content.pb.is_some() && content.origin == self.id {
                self.settle_reserving_dao(ack, now, ctx, sinks);
            }
        }
    }

    /// The peer acknowledged but flagged itself detached: stop using it for
    /// routing work immediately.
    fn handle_detached_peer(
        &mut self,
        pkt: &Packet,
        peer: NodeId,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        self.deprioritize(peer, now, ctx);
        if let PacketKind::Data { origin, .. } = &pkt.kind {
            // The packet was absorbed by a peer that cannot route it.
            self.counters.drops.no_route += 1;
            sinks.ledger.dropped[usize::from(origin.index)] += 1;
            sinks.ledger.drop_paths[7] += 1;
        }
        if pkt.kind.is_sixp() {
            self.abort_txn_for_dropped(pkt, now, ctx, sinks);
        }
        if let PacketKind::Dao(content) = &pkt.kind {
            if content.pb.is_some() && content.origin == self.id {
                self.clear_temp_tx();
                self.pb_pending = None;
                self.schedule_pb_retry(now, ctx);
            }
        }
        if Some(peer) == self.parent {
            self.lose_parent(now, ctx, sinks);
        } else if self.status == NodeStatus::Synchronized && self.parent == Some(peer) {
            self.parent = None;
            self.rank = NO_RANK;
        }
        if self.join_proxy == Some(peer) && !self.handshake_done {
            // The proxy left the network; wait for a live advertiser.
            self.join_proxy = None;
        }
    }

    fn settle_reserving_dao(&mut self, ack: &LinkAck, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let Some(pending) = self.pb_pending.clone() else { return };
        if ack.src != pending.target {
            return;
        }
        self.clear_temp_tx();
        if ack.granted_slots.is_empty() {
            // Zero grant: fall back to a classic ADD after a short backoff.
            let frames = self
                .rng_pb
                .gen_range(ctx.cfg.pb_fallback_backoff_min..=ctx.cfg.pb_fallback_backoff_max);
            let at = Asn(now.0 + frames * u64::from(ctx.frame_len));
            self.sixp_retry_at = Some(at);
            if let Some(p) = self.pb_pending.as_mut() {
                p.fallback_at = Some(at);
            }
            return;
        }
        self.commit_parent_change(&pending, now, ctx, sinks);
    }

    fn commit_parent_change(&mut self, pending: &PbPending, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        self.pb_pending = None;
        let old = pending.old_parent;
        let new_rank = self
            .neighbor(pending.target)
            .map(|n| {
                compute_rank_of0(n.rank, ctx.cfg.rank_step, n.link_quality, ctx.cfg.rank_stretch)
            })
            .unwrap_or(pending.new_rank);
        let pending = &PbPending {
            new_rank,
            ..pending.clone()
        };
        if let Some(old_parent) = old.filter(|&o| o != pending.target) {
            let cells = self.negotiated_tx_slots(old_parent);
            for cell in &cells {
                self.schedule.remove(cell.slot_offset);
            }
            self.initiate_delete(old_parent, cells, now, ctx, sinks);
            self.counters.parent_switches += 1;
        }
        self.parent = Some(pending.target);
        if pending.new_rank != self.rank && self.status == NodeStatus::Joined {
            self.trickle.reset_inconsistent(now, &mut self.rng_trickle);
        }
        self.rank = pending.new_rank;
        self.usage.reset();
        sinks.trace.push(TraceEvent::ParentSwitch {
            asn: now,
            node: self.id.index,
            old: old.map(|p| p.index),
            new: pending.target.index,
        });
        if pending.joining && self.status == NodeStatus::Synchronized {
            self.joined_setup(pending.target, now, ctx, sinks);
        }
    }

    /// Unicast went unacknowledged: count the attempt, drop at the retry
    /// limit, and treat repeated failure toward the parent as a dead link.
    pub(crate) fn apply_tx_failure(
        &mut self,
        queue_idx: usize,
        backoff_key: Option<u16>,
        contention: bool,
        dedicated: bool,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if contention {
            let pos = self.backoff_pos(backoff_key);
            self.backoffs[pos].1.on_failure(&mut self.rng_backoff);
        }
        if dedicated {
            let dst = self
                .queue
                .get(queue_idx)
                .and_then(|p| self.resolve_next_hop(p));
            if let Some(dst) = dst {
                if let Some(n) = self.neighbor_mut(dst) {
                    n.update_quality(false);
                }
            }
        }
        let Some(pkt) = self.queue.get_mut(queue_idx) else { return };
        pkt.attempts += 1;
        self.counters.tx_frames += 1;
        if pkt.attempts < ctx.cfg.retry_limit {
            return;
        }
        let pkt = self.queue.remove(queue_idx).unwrap();
        self.counters.drops.retry_exhausted += 1;
        if let PacketKind::Data { origin, .. } = &pkt.kind {
            sinks.ledger.dropped[usize::from(origin.index)] += 1;
            sinks.ledger.drop_paths[2] += 1;
        }
        if pkt.kind.is_sixp() {
            self.abort_txn_for_dropped(&pkt, now, ctx, sinks);
        }
        let peer = self.resolve_next_hop(&pkt);
        if let Some(peer) = peer {
            self.drop_autotx_if_idle(peer, ctx);
        }
        // A reserving DAO that never got through: give up and re-evaluate
        // shortly from the cached advertisements.
        if let PacketKind::Dao(content) = &pkt.kind {
            if content.pb.is_some() && content.origin == self.id {
                if let Some(pending) = &self.pb_pending {
                    let target = pending.target;
                    self.deprioritize(target, now, ctx);
                }
                self.clear_temp_tx();
                self.pb_pending = None;
                self.schedule_pb_retry(now, ctx);
            }
        }
        if peer.is_some() && peer == self.parent {
            self.parent_fail_streak += 1;
            if self.parent_fail_streak >= 3 {
                self.parent_fail_streak = 0;
                self.lose_parent(now, ctx, sinks);
            }
        }
    }

    // ------------------------------------------------------------------
    // Reception
    // ------------------------------------------------------------------

    /// Handles one decoded frame; returns the link-layer ACK for unicasts
    /// addressed to this node (with PB slot grants when warranted).
    pub(crate) fn handle_reception(
        &mut self,
        pkt: &Packet,
        src: NodeId,
        rssi_dbm: f64,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) -> Option<LinkAck> {
        if self.status == NodeStatus::Pledge {
            if let PacketKind::Eb { join_capable } = pkt.kind {
                self.eb_heard += 1;
                if self.eb_heard >= ctx.cfg.eb_threshold {
                    self.synchronize(src, join_capable, now, ctx, sinks);
                }
            }
            return None;
        }
        self.last_rx = now;
        self.counters.rx_frames += 1;
        if let Some(n) = self.neighbor_mut(src) {
            n.last_heard = now;
            n.observe_rssi(rssi_dbm);
        }

        let unicast = !matches!(pkt.route, Route::Broadcast);
        if unicast
            && self.status != NodeStatus::Joined
            && matches!(
                pkt.kind,
                PacketKind::Data { .. }
                    | PacketKind::Dao(_)
                    | PacketKind::SixpAddRequest { .. }
                    | PacketKind::SixpDeleteRequest { .. }
                    | PacketKind::SixpConfirmation { .. }
                    | PacketKind::JoinRequest
            )
        {
            // Cannot serve routing work while detached; the ACK says so.
            return Some(LinkAck {
                src: self.id,
                dst: src,
                ack_for: pkt.id,
                granted_slots: Vec::new(),
                detached: true,
            });
        }
        let mut granted: Vec<u16> = Vec::new();

        match &pkt.kind {
            PacketKind::Eb { join_capable } => {
                // Rotate toward the latest join-capable advertiser while the
                // handshake is unanswered; spreads joiners across proxies.
                if *join_capable && self.status == NodeStatus::Synchronized && !self.handshake_done
                {
                    if self.join_proxy.is_none() {
                        // First usable proxy appeared: solicit shortly.
                        let jitter = self
                            .rng_backoff
                            .gen_range(1..=HANDSHAKE_RETRY_SLOTFRAMES * u64::from(ctx.frame_len));
                        self.handshake_retry_at = Some(Asn(now.0 + jitter));
                    }
                    self.join_proxy = Some(src);
                }
            }
            PacketKind::JoinRequest => {
                if self.status == NodeStatus::Joined {
                    let already = self.queue.position(|p| {
                        matches!(p.kind, PacketKind::JoinResponse) && p.route == Route::Link(src)
                    });
                    if already.is_none() {
                        let resp =
                            self.make_packet(PacketKind::JoinResponse, Route::Link(src), now);
                        self.enqueue_packet(resp, now, ctx, sinks);
                    }
                }
            }
            PacketKind::JoinResponse => {
                if !self.handshake_done && self.status == NodeStatus::Synchronized {
                    self.handshake_done = true;
                    self.handshake_retry_at = None;
                    self.join_proxy = Some(src);
                    self.send_dis(src, now, ctx, sinks);
                }
            }
            PacketKind::Dis { broadcast } => {
                if self.parent == Some(src) {
                    // The parent is soliciting: it detached from the DODAG.
                    self.lose_parent(now, ctx, sinks);
                } else if self.status == NodeStatus::Joined {
                    if *broadcast {
                        self.trickle.reset_inconsistent(now, &mut self.rng_trickle);
                    } else {
                        let dio = self.make_packet(
                            PacketKind::Dio(DioContent { rank: self.rank, pb: None }),
                            Route::Link(src),
                            now,
                        );
                        self.ensure_autotx(src, ctx);
                        self.enqueue_packet(dio, now, ctx, sinks);
                    }
                }
            }
            PacketKind::Dio(content) => {
                if content.rank != NO_RANK {
                    self.handle_dio(src, content, rssi_dbm, now, ctx, sinks);
                }
            }
            PacketKind::Dao(content) => {
                if content.origin == self.id {
                    // Our own DAO returned: the uplink cycles through us.
                    self.lose_parent(now, ctx, sinks);
                } else if Some(content.origin) == self.parent {
                    // The parent's DAO routes through us: guaranteed cycle.
                    self.lose_parent(now, ctx, sinks);
                } else {
                    granted = self.handle_dao(src, content, pkt.hops, now, ctx, sinks);
                }
            }
            PacketKind::DaoAck { target } => {
                if *target != self.id {
                    if let Route::SourceRoute { hops, next } = &pkt.route {
                        if hops.get(*next) == Some(&self.id) && *next + 1 < hops.len() {
                            let fwd = Packet {
                                id: self.alloc_pkt_id(),
                                kind: pkt.kind.clone(),
                                route: Route::SourceRoute {
                                    hops: hops.clone(),
                                    next: next + 1,
                                },
                                created: pkt.created,
                                enqueued: now,
                                attempts: 0,
                                hops: pkt.hops + 1,
                            };
                            if let Some(hop) = hops.get(next + 1) {
                                self.ensure_autotx(*hop, ctx);
                            }
                            self.enqueue_packet(fwd, now, ctx, sinks);
                        }
                    }
                }
            }
            PacketKind::SixpAddRequest { cmd, num_cells, proposed } => {
                self.handle_sixp_add_request(*cmd, *num_cells, proposed, now, ctx, sinks);
            }
            PacketKind::SixpResponse { cmd, cells, is_proposal } => {
                self.handle_sixp_response(*cmd, cells, *is_proposal, now, ctx, sinks);
            }
            PacketKind::SixpConfirmation { cmd, cells } => {
                self.handle_sixp_confirmation(*cmd, cells, now, sinks);
            }
            PacketKind::SixpDeleteRequest { cmd, cells } => {
                for cell in cells {
                    if let Some(e) = self.schedule.entry(cell.slot_offset) {
                        if e.kind == CellKind::Negotiated && e.neighbor == Some(cmd.requester) {
                            self.schedule.remove(cell.slot_offset);
                        }
                    }
                }
                let resp = self.make_packet(
                    PacketKind::SixpDeleteResponse { cmd: *cmd },
                    Route::Link(cmd.requester),
                    now,
                );
                sinks.trace.push(TraceEvent::SixpPacket {
                    asn: now,
                    from: self.id.index,
                    to: cmd.requester.index,
                    seqnum: cmd.seqnum,
                });
                self.enqueue_packet(resp, now, ctx, sinks);
            }
            PacketKind::SixpDeleteResponse { cmd } => {
                let seq = cmd.seqnum;
                if let Some(pos) = self.txns.iter().position(|t| t.txn.seqnum == seq) {
                    let t = self.txns.remove(pos);
                    sinks.trace.push(TraceEvent::SixpResolved {
                        asn: now,
                        requester: t.txn.requester.index,
                        responder: t.txn.responder.index,
                        seqnum: seq,
                        granted: 0,
                        timed_out: false,
                    });
                }
            }
            PacketKind::Data { origin, order, created } => {
                if self.is_root {
                    let latency = now.0 - created.0;
                    sinks.ledger.delivered[usize::from(origin.index)] += 1;
                    sinks.ledger.deliveries[usize::from(origin.index)].push((*order, latency));
                } else if *origin == self.id {
                    // Our own packet returned: routing loop through us.
                    sinks.ledger.dropped[usize::from(origin.index)] += 1;
                    sinks.ledger.drop_paths[8] += 1;
                    self.counters.drops.no_route += 1;
                    self.lose_parent(now, ctx, sinks);
                } else {
                    self.forward_upward(pkt, now, ctx, sinks);
                }
            }
        }
        if unicast {
            Some(LinkAck {
                src: self.id,
                dst: src,
                ack_for: pkt.id,
                granted_slots: granted,
                detached: false,
            })
        } else {
            None
        }
    }

    fn forward_upward(&mut self, pkt: &Packet, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        if pkt.hops >= MAX_HOPS {
            // Hop guard; counts as a routing failure.
            self.counters.drops.no_route += 1;
            if let PacketKind::Data { origin, .. } = &pkt.kind {
                sinks.ledger.dropped[usize::from(origin.index)] += 1;
                sinks.ledger.drop_paths[3] += 1;
            }
            return;
        }
        if self.parent.is_none() || self.status != NodeStatus::Joined {
            self.counters.drops.no_route += 1;
            if let PacketKind::Data { origin, .. } = &pkt.kind {
                sinks.ledger.dropped[usize::from(origin.index)] += 1;
                sinks.ledger.drop_paths[4] += 1;
            }
            return;
        }
        let fwd = Packet {
            id: self.alloc_pkt_id(),
            kind: pkt.kind.clone(),
            route: Route::Upward,
            created: pkt.created,
            enqueued: now,
            attempts: 0,
            hops: pkt.hops + 1,
        };
        self.enqueue_packet(fwd, now, ctx, sinks);
    }

    fn handle_dio(
        &mut self,
        src: NodeId,
        content: &DioContent,
        rssi_dbm: f64,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if self.is_root {
            return;
        }
        // Neighbor table upkeep.
        let expiry = content
            .pb
            .as_ref()
            .map(|p| p.proposal_expiry)
            .unwrap_or(Asn(0));
        match self.neighbor_mut(src) {
            Some(n) => {
                n.rank = content.rank;
                n.last_heard = now;
                if let Some(p) = &content.pb {
                    n.advertised_free = Some(p.free_slots.free_set(ctx.frame_len));
                    n.advertised_proposed = Some(p.proposed_slots.clone());
                    n.proposal_expiry = expiry;
                }
            }
            None => {
                let mut entry = NeighborEntry::new(
                    src,
                    content.rank,
                    now,
                    crate::radio::pdr_of(rssi_dbm),
                );
                if let Some(p) = &content.pb {
                    entry.advertised_free = Some(p.free_slots.free_set(ctx.frame_len));
                    entry.advertised_proposed = Some(p.proposed_slots.clone());
                    entry.proposal_expiry = expiry;
                }
                self.neighbors.push(entry);
            }
        }
        if self.status == NodeStatus::Joined {
            self.trickle.heard_consistent();
        }
        if self.status == NodeStatus::Synchronized && !self.handshake_done {
            if self.join_proxy.is_none() {
                let jitter = self
                    .rng_backoff
                    .gen_range(1..=HANDSHAKE_RETRY_SLOTFRAMES * u64::from(ctx.frame_len));
                self.handshake_retry_at = Some(Asn(now.0 + jitter));
            }
            self.join_proxy = Some(src);
        }
        // Rank follows the parent's advertisement (also while the adoption
        // is still pending); a change is an RPL inconsistency, so the
        // trickle timer snaps back and the new rank propagates quickly.
        if self.parent == Some(src) {
            let refreshed = compute_rank_of0(
                content.rank,
                ctx.cfg.rank_step,
                self.neighbor(src).map_or(1.0, |n| n.link_quality),
                ctx.cfg.rank_stretch,
            );
            let poison = crate::rpl::ROOT_RANK + 8 * ctx.cfg.rank_step;
            if refreshed >= poison {
                // The uplink rank ran away (count-to-infinity); abandon it
                // whether the adoption was settled or still pending.
                if self.status == NodeStatus::Joined {
                    self.lose_parent(now, ctx, sinks);
                } else {
                    self.parent = None;
                    self.rank = NO_RANK;
                    self.pb_pending = None;
                    self.deprioritize(src, now, ctx);
                }
                return;
            }
            if refreshed != self.rank {
                self.rank = refreshed;
                if self.status == NodeStatus::Joined {
                    self.trickle.reset_inconsistent(now, &mut self.rng_trickle);
                }
            }
        }
        self.dis_retry_at = None;
        if ctx.cfg.is_pb() {
            if let Some(pending) = &self.pb_pending {
                if pending.target == src && pending.fallback_at.is_none() {
                    self.install_temp_tx_toward(src, now, ctx);
                }
            }
            self.pb_adopt(now, ctx, sinks);
        } else {
            self.msf_evaluate(now, ctx, sinks);
        }
    }

    /// Benchmark-mode parent evaluation over the cached neighbor table.
    /// Candidates must not come from our own sub-DODAG: the rank rule
    /// (candidate strictly better than the current parent) handles it.
    fn msf_evaluate(&mut self, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let viable: Vec<crate::rpl::NeighborEntry> = self
            .neighbors
            .iter()
            .filter(|n| n.link_quality >= CANDIDATE_QUALITY_FLOOR)
            .filter(|n| !self.is_descendant(n.id, now))
            .filter(|n| !self.is_deprioritized(n.id, now))
            .cloned()
            .collect();
        if let Some(candidate) = select_parent_msf(&viable, self.parent, self.parent_rank()) {
            if self.parent.is_none() || self.status == NodeStatus::Joined {
                self.msf_adopt(candidate, now, ctx, sinks);
            }
        }
    }

    /// Link-receiver side of a DAO: grant PB slot reservations, update the
    /// root's routing table or forward upward, and acknowledge.
    fn handle_dao(
        &mut self,
        src: NodeId,
        content: &DaoContent,
        hops: u8,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) -> Vec<u16> {
        if self.status != NodeStatus::Joined {
            return Vec::new();
        }
        if content.origin != self.id {
            let horizon = now.0 + 3 * ctx.dao_period_slots;
            self.recent_descendants
                .retain(|&(id, _)| id != content.origin.index);
            self.recent_descendants.push((content.origin.index, horizon));
        }
        let mut granted = Vec::new();
        if let Some(payload) = &content.pb {
            let channel = autonomous_channel(self.id.mac_hash, ctx.cfg.nb_channels);
            let allocatable = self.allocatable_slots(Some(src), ctx);
            for &slot in payload.selected_slots.iter().take(MAX_ACK_GRANTS) {
                if allocatable.contains(&slot) {
                    let ok = self.schedule.insert(ScheduleEntry {
                        coord: CellCoord::new(slot, channel),
                        option: CellOption::Rx,
                        kind: CellKind::Negotiated,
                        neighbor: Some(src),
                        lock_deadline: None,
                    });
                    debug_assert!(ok);
                    granted.push(slot);
                }
            }
            if !granted.is_empty() {
                sinks.trace.push(TraceEvent::AckGrant {
                    asn: now,
                    granter: self.id.index,
                    child: src.index,
                    slots: granted.clone(),
                });
            }
        }
        if self.is_root {
            self.routes.insert(content.origin.index, content.announced_parent.index);
            if let Some(route) = self.downward_route(content.origin.index) {
                let ack = self.make_packet(
                    PacketKind::DaoAck { target: content.origin },
                    Route::SourceRoute { hops: route, next: 0 },
                    now,
                );
                self.enqueue_packet(ack, now, ctx, sinks);
            } else {
                self.counters.drops.no_route += 1;
            }
        } else if hops < MAX_HOPS {
            // Self-sufficient hop-by-hop reservation: replace the payload
            // with this hop's own lists at dequeue time and push upward.
            let fwd_pb = content.pb.as_ref().map(|p| PbDaoPayload {
                selected_slots: Vec::new(),
                child_free_slots: crate::pb::SlotListCodec::free_list(&[]),
                requested_count: p.requested_count,
            });
            let fwd = Packet {
                id: self.alloc_pkt_id(),
                kind: PacketKind::Dao(DaoContent {
                    origin: content.origin,
                    announced_parent: content.announced_parent,
                    kind: content.kind,
                    pb: fwd_pb,
                }),
                route: Route::Upward,
                created: now,
                enqueued: now,
                attempts: 0,
                hops: hops + 1,
            };
            self.enqueue_packet(fwd, now, ctx, sinks);
        } else {
            self.counters.drops.no_route += 1;
        }
        granted
    }

    /// Root-side downward route from the edge table: hops from the root's
    /// first next-hop down to the target.
    fn downward_route(&self, target: u16) -> Option<Vec<NodeId>> {
        let mut chain = vec![target];
        let mut cur = target;
        for _ in 0..MAX_HOPS {
            let up = *self.routes.get(&cur)?;
            if up == self.id.index {
                chain.reverse();
                return Some(chain.into_iter().map(|i| self.neighbor_id_for(i)).collect());
            }
            chain.push(up);
            cur = up;
        }
        None
    }

    fn neighbor_id_for(&self, index: u16) -> NodeId {
        // Node identities are a pure function of (seed, index); the root
        // reconstructs them for source routes without a global view.
        NodeId::derive(index, self.seed)
    }

    fn handle_sixp_add_request(
        &mut self,
        cmd: SixpCommand,
        num_cells: u8,
        proposed: &[CellCoord],
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if self.status != NodeStatus::Joined {
            return;
        }
        if !proposed.is_empty() {
            // 2-step: grant from the requester's proposal.
            let free = self.allocatable_slots(Some(cmd.requester), ctx);
            let grant = select_grant(proposed, &free, usize::from(num_cells), &mut self.rng_sixtop);
            for cell in &grant {
                let ok = self.schedule.insert(ScheduleEntry {
                    coord: *cell,
                    option: CellOption::Rx,
                    kind: CellKind::Negotiated,
                    neighbor: Some(cmd.requester),
                    lock_deadline: None,
                });
                debug_assert!(ok);
            }
            self.txns.push(TxnEntry {
                txn: SixpTransaction {
                    requester: cmd.requester,
                    responder: self.id,
                    kind: SixpKind::TwoStep,
                    command: SixpCommandKind::Add,
                    reason: SixpReason::JoinOrSwitch,
                    num_cells,
                    proposed: grant.clone(),
                    state: SixpState::Done,
                    lock_deadline: Asn(now.0 + ctx.t_lock_slots),
                    seqnum: cmd.seqnum,
                },
                role: TxnRole::Responder,
            });
            let resp = self.make_packet(
                PacketKind::SixpResponse {
                    cmd,
                    cells: grant,
                    is_proposal: false,
                },
                Route::Link(cmd.requester),
                now,
            );
            sinks.trace.push(TraceEvent::SixpPacket {
                asn: now,
                from: self.id.index,
                to: cmd.requester.index,
                seqnum: cmd.seqnum,
            });
            self.enqueue_packet(resp, now, ctx, sinks);
        } else {
            // 3-step: this side proposes and locks.
            let free = self.allocatable_slots(Some(cmd.requester), ctx);
            let proposal = sample_proposal(
                &free,
                ctx.cfg.sixp_proposal_cells,
                ctx.cfg.nb_channels,
                &mut self.rng_sixtop,
            )
            .unwrap_or_default();
            let deadline = Asn(now.0 + ctx.t_lock_slots);
            for cell in &proposal {
                let ok = self.schedule.insert(ScheduleEntry {
                    coord: *cell,
                    option: CellOption::Rx,
                    kind: CellKind::Locked,
                    neighbor: Some(cmd.requester),
                    lock_deadline: Some(deadline),
                });
                debug_assert!(ok);
                self.push_deadline(deadline, cell.slot_offset);
            }
            self.txns.push(TxnEntry {
                txn: SixpTransaction {
                    requester: cmd.requester,
                    responder: self.id,
                    kind: SixpKind::ThreeStep,
                    command: SixpCommandKind::Add,
                    reason: SixpReason::JoinOrSwitch,
                    num_cells,
                    proposed: proposal.clone(),
                    state: SixpState::AwaitingConfirmation,
                    lock_deadline: deadline,
                    seqnum: cmd.seqnum,
                },
                role: TxnRole::Responder,
            });
            let resp = self.make_packet(
                PacketKind::SixpResponse {
                    cmd,
                    cells: proposal,
                    is_proposal: true,
                },
                Route::Link(cmd.requester),
                now,
            );
            sinks.trace.push(TraceEvent::SixpPacket {
                asn: now,
                from: self.id.index,
                to: cmd.requester.index,
                seqnum: cmd.seqnum,
            });
            self.enqueue_packet(resp, now, ctx, sinks);
        }
    }

    fn handle_sixp_response(
        &mut self,
        cmd: SixpCommand,
        cells: &[CellCoord],
        is_proposal: bool,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        let Some(pos) = self
            .txns
            .iter()
            .position(|t| t.txn.seqnum == cmd.seqnum && t.role == TxnRole::Requester)
        else {
            return; // stale or aborted transaction
        };
        if !is_proposal {
            // 2-step grant: locked cells become negotiated, the rest unlock.
            let entry = self.txns.remove(pos);
            let mut installed = 0u16;
            for cell in &entry.txn.proposed {
                let granted = cells.iter().any(|c| c.slot_offset == cell.slot_offset);
                if let Some(e) = self.schedule.entry_mut(cell.slot_offset) {
                    if e.kind == CellKind::Locked {
                        if granted {
                            e.kind = CellKind::Negotiated;
                            e.lock_deadline = None;
                            installed += 1;
                        } else {
                            self.schedule.remove(cell.slot_offset);
                        }
                    }
                }
            }
            sinks.trace.push(TraceEvent::SixpResolved {
                asn: now,
                requester: self.id.index,
                responder: entry.txn.responder.index,
                seqnum: cmd.seqnum,
                granted: installed,
                timed_out: false,
            });
            self.after_add_outcome(&entry.txn, installed, now, ctx, sinks);
        } else {
            // 3-step proposal: pick cells, install Tx side, confirm.
            let (num_cells, responder) = {
                let t = &self.txns[pos].txn;
                (t.num_cells, t.responder)
            };
            let free = self.allocatable_slots(Some(responder), ctx);
            let pick = select_grant(cells, &free, usize::from(num_cells), &mut self.rng_sixtop);
            for cell in &pick {
                let ok = self.schedule.insert(ScheduleEntry {
                    coord: *cell,
                    option: CellOption::Tx,
                    kind: CellKind::Negotiated,
                    neighbor: Some(responder),
                    lock_deadline: None,
                });
                debug_assert!(ok);
            }
            let entry = self.txns.remove(pos);
            sinks.trace.push(TraceEvent::SixpResolved {
                asn: now,
                requester: self.id.index,
                responder: responder.index,
                seqnum: cmd.seqnum,
                granted: pick.len() as u16,
                timed_out: false,
            });
            let confirm = self.make_packet(
                PacketKind::SixpConfirmation { cmd, cells: pick.clone() },
                Route::Link(responder),
                now,
            );
            sinks.trace.push(TraceEvent::SixpPacket {
                asn: now,
                from: self.id.index,
                to: responder.index,
                seqnum: cmd.seqnum,
            });
            self.enqueue_packet(confirm, now, ctx, sinks);
            self.after_add_outcome(&entry.txn, pick.len() as u16, now, ctx, sinks);
        }
    }

    /// Post-ADD bookkeeping shared by both styles: empty grants retry (for
    /// join/switch), first granted uplink cell completes the join.
    fn after_add_outcome(
        &mut self,
        txn: &SixpTransaction,
        installed: u16,
        now: Asn,
        ctx: &SimCtx,
        sinks: &mut SimSinks,
    ) {
        if installed == 0 {
            if txn.reason == SixpReason::JoinOrSwitch {
                self.schedule_sixp_retry(now, ctx);
            }
            return;
        }
        if let Some(pending) = self.pb_pending.clone() {
            if pending.target == txn.responder && pending.fallback_at.is_some() {
                self.commit_parent_change(&pending, now, ctx, sinks);
                return;
            }
        }
        if self.status == NodeStatus::Synchronized && self.parent == Some(txn.responder) {
            self.joined_setup(txn.responder, now, ctx, sinks);
        }
    }

    fn handle_sixp_confirmation(
        &mut self,
        cmd: SixpCommand,
        cells: &[CellCoord],
        now: Asn,
        sinks: &mut SimSinks,
    ) {
        let Some(pos) = self
            .txns
            .iter()
            .position(|t| t.txn.seqnum == cmd.seqnum && t.role == TxnRole::Responder)
        else {
            return;
        };
        let entry = self.txns.remove(pos);
        let mut installed = 0u16;
        for cell in &entry.txn.proposed {
            let picked = cells.iter().any(|c| c.slot_offset == cell.slot_offset);
            if let Some(e) = self.schedule.entry_mut(cell.slot_offset) {
                if e.kind == CellKind::Locked {
                    if picked {
                        e.kind = CellKind::Negotiated;
                        e.lock_deadline = None;
                        installed += 1;
                    } else {
                        self.schedule.remove(cell.slot_offset);
                    }
                }
            }
        }
        sinks.trace.push(TraceEvent::SixpResolved {
            asn: now,
            requester: cmd.requester.index,
            responder: self.id.index,
            seqnum: cmd.seqnum,
            granted: installed,
            timed_out: false,
        });
    }
}

impl NodeRuntime {
    /// A 6P message exhausted its retries: the transaction it belongs to is
    /// dead, so release whatever this side holds for it.
    fn abort_txn_for_dropped(&mut self, pkt: &Packet, now: Asn, ctx: &SimCtx, sinks: &mut SimSinks) {
        let Some(seq) = sixp_seqnum(pkt) else { return };
        let Some(pos) = self.txns.iter().position(|t| t.txn.seqnum == seq) else {
            return;
        };
        let entry = self.txns.remove(pos);
        let rollback_kind = if entry.txn.state == SixpState::Done {
            CellKind::Negotiated
        } else {
            CellKind::Locked
        };
        for cell in &entry.txn.proposed {
            if let Some(e) = self.schedule.entry(cell.slot_offset) {
                if e.kind == rollback_kind {
                    self.schedule.remove(cell.slot_offset);
                }
            }
        }
        sinks.trace.push(TraceEvent::SixpResolved {
            asn: now,
            requester: entry.txn.requester.index,
            responder: entry.txn.responder.index,
            seqnum: seq,
            granted: 0,
            timed_out: true,
        });
        if entry.role == TxnRole::Requester
            && entry.txn.reason == SixpReason::JoinOrSwitch
            && entry.txn.command == SixpCommandKind::Add
        {
            self.give_up_on_responder(entry.txn.responder, now, ctx);
            self.schedule_sixp_retry(now, ctx);
        }
    }

    /// Failed join/switch negotiation: sideline the responder and, if still
    /// unjoined, release the tentative parent so re-selection tries the
    /// runner-up.
    fn give_up_on_responder(&mut self, responder: NodeId, now: Asn, ctx: &SimCtx) {
        if !ctx.cfg.is_pb() {
            self.deprioritize(responder, now, ctx);
        }
        if self.status == NodeStatus::Synchronized && self.parent == Some(responder) {
            self.parent = None;
            self.rank = NO_RANK;
        }
    }
}

/// Transaction sequence number carried by a 6P message, if any.
fn sixp_seqnum(pkt: &Packet) -> Option<u32> {
    match &pkt.kind {
        PacketKind::SixpAddRequest { cmd, .. }
        | PacketKind::SixpResponse { cmd, .. }
        | PacketKind::SixpConfirmation { cmd, .. }
        | PacketKind::SixpDeleteRequest { cmd, .. }
        | PacketKind::SixpDeleteResponse { cmd } => Some(cmd.seqnum),
        _ => None,
    }
}

/// Application packets generated in the current slot ride the next one.
fn data_ready(pkt: &Packet, now: Asn) -> bool {
    !matches!(pkt.kind, PacketKind::Data { .. }) || pkt.enqueued < now
}

/// Autonomous Rx slot of a node: a MAC-hash position in [1, frame_len).
pub(crate) fn autonomous_slot(id: NodeId, frame_len: u16) -> u16 {
    1 + (id.mac_hash % u64::from(frame_len - 1)) as u16
}

/// Beacon transmit slot: a second MAC-hash position, so advertising never
/// steals the autonomous receive lane.
pub(crate) fn beacon_slot(id: NodeId, frame_len: u16) -> u16 {
    1 + ((id.mac_hash >> 17) % u64::from(frame_len - 1)) as u16
}


impl Packet {
    /// Kinds pinned to the shared minimal cell (the secure-join handshake).
    pub(crate) fn kind_is_shared_pinned(&self) -> bool {
        matches!(self.kind, PacketKind::JoinRequest | PacketKind::JoinResponse)
    }
}
